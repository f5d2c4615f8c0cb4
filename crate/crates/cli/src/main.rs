use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use lyfe_cli::{interview_from_run, interview_table, metrics, metrics_table, to_jsonl, CliError};
use lyfe_core::lang::to_human_hours;
use lyfe_core::realtime::{Realtime, RealtimeOptions};
use lyfe_core::scenarios::{run, Providers, RunLog, RunOptions, ScenarioConfig};
use lyfe_gateway::{serve, GatewayConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "lyfe", version, about = "Run and evaluate generative-agent town simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write its run directory.
    Run {
        /// Builtin scenario name or path to a scenario file.
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// no_option_action, no_self_monitor or flat_memory; repeatable.
        #[arg(long = "ablate", value_name = "ABLATION")]
        ablate: Vec<String>,
        /// Run directory; defaults to runs/<scenario>-<seed>[-<ablations>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also interview the seeded agents before the run.
        #[arg(long)]
        pre_interviews: bool,
        /// Skip the post-run interviews.
        #[arg(long)]
        no_interviews: bool,
        /// Override the scenario length in ticks.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Interview an agent restored from a run's final memory.
    Interview {
        run_dir: PathBuf,
        agent: String,
        /// Ask these instead of the configured questions; repeatable.
        #[arg(long = "question", short)]
        questions: Vec<String>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Print the record as one JSON line.
        #[arg(long)]
        json: bool,
    },
    /// Diffusion, interview and affinity metrics of a run.
    Metrics {
        run_dir: PathBuf,
        /// Print only the line-delimited records.
        #[arg(long)]
        jsonl: bool,
    },
    /// Token cost report of a run.
    Cost {
        #[arg(required_unless_present = "run")]
        run_dir: Option<PathBuf>,
        #[arg(long = "run", conflicts_with = "run_dir")]
        run: Option<PathBuf>,
        /// Print only the machine-readable record.
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario in real time behind the network gateway.
    Serve {
        config: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Shared access token; unset disables authentication.
        #[arg(long, env = "LYFE_TOKEN")]
        token: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Wall-clock milliseconds per tick.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Minimum milliseconds between two utterances of one player.
        #[arg(long, default_value_t = 2000)]
        say_interval_ms: u64,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("LYFE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Writes to stdout; a closed pipe (`lyfe metrics run | head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn load(dir: &Path) -> Result<RunLog, CliError> {
    Ok(RunLog::load_dir(dir)?)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            seed,
            ablate,
            out,
            pre_interviews,
            no_interviews,
            ticks,
        } => {
            let mut config = ScenarioConfig::resolve(&config)?;
            for a in &ablate {
                config.ablations.set(a)?;
            }
            if let Some(t) = ticks {
                config.duration_ticks = t;
            }
            config.validate()?;
            let out = out.unwrap_or_else(|| {
                let mut name = format!("{}-{seed}", config.name);
                for label in config.ablations.labels() {
                    name.push('-');
                    name.push_str(label);
                }
                PathBuf::from("runs").join(name)
            });
            let options = RunOptions {
                pre_interviews,
                post_interviews: !no_interviews,
                ..RunOptions::new(seed)
            };
            let log = run(&config, Providers::from_config(&config)?, options)?;
            log.write_dir(&out)?;
            emit(&format!("run directory: {}\n", out.display()))?;
            emit(&format!("ticks: {} of {}\n", log.ticks_run, config.duration_ticks))?;
            emit(&format!("llm calls: {}\n", log.usage.len()))?;
            emit(&format!("hash: {}\n", log.hash()))?;
            if let Some(reason) = &log.aborted {
                return Err(CliError::Usage(format!("run aborted: {reason}")));
            }
            Ok(())
        }
        Command::Interview {
            run_dir,
            agent,
            questions,
            repeats,
            json,
        } => {
            let log = load(&run_dir)?;
            let (record, _) = interview_from_run(&log, &agent, questions, repeats)?;
            if json {
                emit(&to_jsonl(&[record]))?;
            } else {
                emit(&interview_table(&record))?;
            }
            Ok(())
        }
        Command::Metrics { run_dir, jsonl } => {
            let log = load(&run_dir)?;
            let records = metrics(&log)?;
            let lines = to_jsonl(&records);
            if jsonl {
                emit(&lines)?;
            } else {
                emit(&metrics_table(&records))?;
                let path = run_dir.join("metrics.jsonl");
                fs::write(&path, lines).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                emit(&format!("\nrecords written to {}\n", path.display()))?;
            }
            Ok(())
        }
        Command::Cost { run_dir, run, json } => {
            let dir = run_dir.or(run).expect("clap requires a run directory");
            let log = load(&dir)?;
            let report = log.cost()?;
            let record = serde_json::to_string(&report).expect("serializable report");
            if json {
                emit(&format!("{record}\n"))?;
            } else {
                emit(&report.to_table())?;
                let speed = log.config.cost.game_speed;
                emit(&format!(
                    "cost per agent per human hour: {:.6} (game clock {speed}x)\n",
                    to_human_hours(report.per_agent_per_hour, speed)
                ))?;
                emit(&format!("{record}\n"))?;
            }
            Ok(())
        }
        Command::Serve {
            config,
            addr,
            token,
            seed,
            tick_ms,
            max_ticks,
            say_interval_ms,
        } => {
            let config = ScenarioConfig::resolve(&config)?;
            let providers = Providers::from_config(&config)?;
            let options = RealtimeOptions {
                tick_interval: Duration::from_millis(tick_ms),
                max_ticks,
                ..RealtimeOptions::new(seed)
            };
            let sim = Realtime::start(&config, providers.language, providers.embedder, options)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let gateway = GatewayConfig {
                token,
                say_interval: Duration::from_millis(say_interval_ms),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            let served = runtime.block_on(async {
                eprintln!("serving {} on http://{addr}", config.name);
                tokio::select! {
                    r = serve(sim.handle(), addr, gateway) => r.map_err(|e| CliError::Usage(e.to_string())),
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            });
            let report = sim.stop();
            eprintln!("stopped after {} ticks", report.ticks);
            served
        }
    }
}
