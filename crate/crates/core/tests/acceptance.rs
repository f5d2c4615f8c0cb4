//! Acceptance suite. One PASS/FAIL line per criterion, each with its own
//! runtime limit. Expected values come from oracles written here, not from
//! the code under test.
//!
//! Run alone with `cargo test -p lyfe-core --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lyfe_core::agent::{AgentBrain, BrainConfig, EventKind, OptionKind, Persona};
use lyfe_core::embedding::{cosine_similarity, EmbeddingVector, HashedBagOfTokens};
use lyfe_core::lang::{
    cost_report, per_agent_per_hour, to_human_hours, CallSite, CostModel, DelayedProvider, LlmClient, ScriptedProvider, TemplateSet,
    UsageLedger, UsageRecord,
};
use lyfe_core::memory::{cluster_by_similarity, cluster_indices, MemdumpRecord, MemoryBank, MemoryId, MemoryItem, MemorySource};
use lyfe_core::realtime::{Realtime, RealtimeOptions};
use lyfe_core::scenarios::{
    affinity_score, classify_answer, diffusion_metrics, interview, run, AnswerDistribution, Category, InterviewSpec, Providers, RunLog,
    RunOptions, ScenarioConfig, INDECISIVE,
};
use lyfe_core::world::WorldEventKind;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- oracles

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Partition of `0..n` by connectivity of `sim > threshold`, computed with
/// a plain parent array.
fn oracle_partition(vs: &[Vec<f64>], threshold: f64) -> BTreeSet<BTreeSet<usize>> {
    let n = vs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            if oracle_cosine(&vs[i], &vs[j]) > threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().insert(i);
    }
    groups.into_values().collect()
}

/// Probability that one repeat of A and one repeat of B name the same
/// category, by enumerating every pair of repeats.
fn oracle_affinity(a: &[&str], b: &[&str]) -> Ratio<u64> {
    let mut agree = 0;
    for x in a {
        for y in b {
            if x == y && *x != INDECISIVE {
                agree += 1;
            }
        }
    }
    Ratio::new(agree, (a.len() * b.len()) as u64)
}

fn random_vector(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], spread: f64) -> Vec<f64> {
    let c = &centers[rng.random_range(0..centers.len())];
    loop {
        let v: Vec<f64> = c.iter().map(|x| x + spread * rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-6) {
            return v;
        }
    }
}

fn centers(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

// ------------------------------------------------------------- criteria

fn forgetting_invariant() -> Outcome {
    let mut violations = 0usize;
    let mut evictions = 0usize;
    let mut insertions = 0usize;
    for (ti, theta) in [0.7, 0.8, 0.9].into_iter().enumerate() {
        for trial in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * ti as u64 + trial);
            let cs = centers(&mut rng, 6, 8);
            let mut bank = MemoryBank::unlimited(theta).map_err(|e| e.to_string())?;
            let mut shadow: Vec<(u64, Vec<f64>)> = Vec::new();
            for i in 0..1000u64 {
                let spread = rng.random_range(0.0..0.8);
                let v = random_vector(&mut rng, &cs, spread);
                let item = MemoryItem {
                    id: MemoryId(i),
                    text: format!("item {i}"),
                    embedding: EmbeddingVector::new(v.clone()).map_err(|e| e.to_string())?,
                    created_tick: i,
                    source: MemorySource::Observation,
                };
                let evicted = bank.add_with_forgetting(item).map_err(|e| e.to_string())?;
                evictions += evicted.len();
                insertions += 1;
                // exhaustive scan of the survivors against the new item
                for old in bank.items().iter().filter(|o| o.id != MemoryId(i)) {
                    if oracle_cosine(old.embedding.values(), &v) > theta {
                        violations += 1;
                    }
                }
                // and the survivors are exactly the old items at or below θ
                shadow.retain(|(_, o)| oracle_cosine(o, &v) <= theta);
                shadow.push((i, v));
                let ids: Vec<u64> = bank.items().iter().map(|o| o.id.0).collect();
                let expected: Vec<u64> = shadow.iter().map(|(id, _)| *id).collect();
                if ids != expected {
                    violations += 1;
                    shadow = bank.items().iter().map(|o| (o.id.0, o.embedding.values().to_vec())).collect();
                }
            }
        }
    }
    check(violations == 0, || format!("{violations} violations"))?;
    check(evictions > 0, || "fixture never triggered forgetting".into())?;
    Ok(format!("{insertions} insertions, {evictions} evictions, 0 violations"))
}

fn similarity_and_clustering() -> Outcome {
    let s14 = 14f64.sqrt();
    let s77 = 77f64.sqrt();
    let hand: [(&[f64], &[f64], f64); 5] = [
        (&[1.0, 0.0], &[0.0, 1.0], 0.0),
        (&[3.0, 4.0], &[4.0, 3.0], 24.0 / 25.0),
        (&[1.0, 1.0], &[-1.0, -1.0], -1.0),
        (&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], 32.0 / (s14 * s77)),
        (&[2.0, 0.0, 0.0], &[5.0, 5.0, 0.0], 1.0 / 2f64.sqrt()),
    ];
    let cos = |a: &[f64], b: &[f64]| -> Result<f64, String> {
        cosine_similarity(
            &EmbeddingVector::new(a.to_vec()).map_err(|e| e.to_string())?,
            &EmbeddingVector::new(b.to_vec()).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())
    };
    for (a, b, want) in hand {
        let got = cos(a, b)?;
        check((got - want).abs() < 1e-9, || format!("cos({a:?}, {b:?}) = {got}, want {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for _ in 0..100 {
        let dim = rng.random_range(2..=64);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        worst = worst.max((cos(&a, &b)? - oracle_cosine(&a, &b)).abs());
    }
    check(worst < 1e-9, || format!("cosine off by {worst:e}"))?;

    let mut sizes = 0usize;
    let mut nontrivial = 0usize;
    for f in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + f);
        let n = rng.random_range(1..=30);
        let k = rng.random_range(1..=5);
        let cs = centers(&mut rng, k, 6);
        let spread = rng.random_range(0.05..1.0);
        let threshold = rng.random_range(0.5..0.95);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| random_vector(&mut rng, &cs, spread)).collect();
        let items: Vec<MemoryItem> = vs
            .iter()
            .enumerate()
            .map(|(i, v)| MemoryItem {
                id: MemoryId(i as u64),
                text: format!("item {i}"),
                embedding: EmbeddingVector::new(v.clone()).unwrap(),
                created_tick: 0,
                source: MemorySource::Summary,
            })
            .collect();
        let got: BTreeSet<BTreeSet<usize>> = cluster_by_similarity(&items, threshold)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|c| c.iter().map(|m| m.id.0 as usize).collect())
            .collect();
        let refs: Vec<&EmbeddingVector> = items.iter().map(|m| &m.embedding).collect();
        let by_index: BTreeSet<BTreeSet<usize>> =
            cluster_indices(&refs, threshold).map_err(|e| e.to_string())?.into_iter().map(|c| c.into_iter().collect()).collect();
        check(by_index == got, || format!("fixture {f}: index and item clustering disagree"))?;
        let want = oracle_partition(&vs, threshold);
        check(got == want, || format!("fixture {f}: partition {got:?}, oracle {want:?}"))?;
        sizes += n;
        if want.len() > 1 && want.len() < n {
            nontrivial += 1;
        }
    }
    Ok(format!(
        "5 hand values + 100 random pairs within {worst:.1e}; 200 partitions equal ({sizes} items, {nontrivial} mixed)"
    ))
}

/// Lengths of maximal runs of consecutive TALK options per agent, in steps.
/// An option still open when the run ends is not counted.
fn talk_episodes(log: &RunLog) -> Vec<u64> {
    let mut out = Vec::new();
    for a in &log.agents {
        let mut current: Option<u64> = None;
        for e in &a.events {
            if let EventKind::OptionExit { option, steps, .. } = &e.kind {
                if *option == OptionKind::Talk {
                    current = Some(current.unwrap_or(0) + steps);
                } else if let Some(c) = current.take() {
                    out.push(c);
                }
            }
        }
        if let Some(c) = current {
            out.push(c);
        }
    }
    out
}

fn option_accounting() -> Outcome {
    let full_cfg = ScenarioConfig::builtin("conversation").map_err(|e| e.to_string())?;
    let mut ablated_cfg = full_cfg.clone();
    ablated_cfg.ablations.no_option_action = true;
    let go = |c: &ScenarioConfig| -> Result<RunLog, String> {
        let options = RunOptions {
            post_interviews: false,
            ..RunOptions::new(5)
        };
        run(c, Providers::from_config(c).map_err(|e| e.to_string())?, options).map_err(|e| e.to_string())
    };
    let full = go(&full_cfg)?;
    let ablated = go(&ablated_cfg)?;
    for (label, log) in [("full", &full), ("ablated", &ablated)] {
        for a in &log.agents {
            let controller = log
                .usage
                .iter()
                .filter(|u| u.agent_id == a.agent && u.call_site == CallSite::Controller)
                .count() as u64;
            let options = a.events.iter().filter(|e| matches!(e.kind, EventKind::OptionEnter { .. })).count() as u64;
            check(controller == options, || {
                format!("{label} {}: {controller} controller calls for {options} options", a.agent)
            })?;
            if label == "ablated" {
                check(controller == log.ticks_run, || {
                    format!("{}: {controller} controller calls over {} action steps", a.agent, log.ticks_run)
                })?;
            }
        }
    }
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len().max(1) as f64;
    let (ef, ea) = (talk_episodes(&full), talk_episodes(&ablated));
    check(!ef.is_empty() && !ea.is_empty(), || "no TALK episodes".into())?;
    let (mf, ma) = (mean(&ef) * full.tick_seconds, mean(&ea) * ablated.tick_seconds);
    let ratio = mf / ma;
    check(ratio >= 2.5, || format!("TALK duration ratio {ratio:.2} ({mf:.1} s vs {ma:.1} s)"))?;
    let controller = |log: &RunLog| log.usage.iter().filter(|u| u.call_site == CallSite::Controller).count();
    Ok(format!(
        "controller calls {} (full, one per option) vs {} (ablated, one per step); mean TALK {mf:.1} s vs {ma:.1} s, ratio {ratio:.2}",
        controller(&full),
        controller(&ablated)
    ))
}

fn cost_arithmetic() -> Outcome {
    let per_game_hour = per_agent_per_hour(2000.0, 25, 16.0 * 2.0).map_err(|e| e.to_string())?;
    check(per_game_hour == 2.5, || format!("2000/25/16/2 gave {per_game_hour}"))?;
    let human = to_human_hours(per_game_hour, 10.0);
    check(human == 25.0, || format!("10x game speed gave {human}"))?;
    // the same figure through a full report over a $2000 ledger
    let ledger: Vec<UsageRecord> = (0..1000)
        .map(|i| UsageRecord {
            agent_id: format!("agent {}", i % 25),
            call_site: CallSite::Talk,
            tick: i,
            prompt_tokens: 2000,
            completion_tokens: 0,
            wall_ms: 0,
            ok: true,
        })
        .collect();
    let report = cost_report(&ledger, &CostModel::new(1.0, 1.0).map_err(|e| e.to_string())?, 32.0, 25).map_err(|e| e.to_string())?;
    check(report.total_dollars == 2000.0 && report.per_agent_per_hour == 2.5, || format!("{report:?}"))?;

    // one human hour of a scripted three-agent town at game speed 1
    let mut c = ScenarioConfig::builtin("medicine").map_err(|e| e.to_string())?;
    c.duration_ticks = 3600;
    c.cost.price_per_1k_prompt_tokens = 0.0125;
    c.cost.price_per_1k_completion_tokens = 0.0375;
    c.cost.game_speed = 1.0;
    let options = RunOptions {
        post_interviews: false,
        ..RunOptions::new(9)
    };
    let log = run(&c, Providers::from_config(&c).map_err(|e| e.to_string())?, options).map_err(|e| e.to_string())?;
    let report = log.cost().map_err(|e| e.to_string())?;
    let human_hours = log.game_hours() / c.cost.game_speed;
    check((human_hours - 1.0).abs() < 1e-12, || format!("{human_hours} human hours"))?;
    let ledger_sum: f64 = log
        .usage
        .iter()
        .map(|u| u.prompt_tokens as f64 * 0.0125 / 1000.0 + u.completion_tokens as f64 * 0.0375 / 1000.0)
        .sum();
    let breakdown = report.breakdown_total();
    check((breakdown - ledger_sum).abs() < 1e-9, || format!("breakdown {breakdown} vs ledger {ledger_sum}"))?;
    check((report.total_dollars - ledger_sum).abs() < 1e-9, || format!("total {} vs ledger {ledger_sum}", report.total_dollars))?;
    for (site, s) in &report.by_site {
        let n = log.usage.iter().filter(|u| u.call_site == *site).count() as u64;
        check(s.calls == n, || format!("{site:?}: {} calls reported, {n} in the ledger", s.calls))?;
    }
    let per_human_hour = to_human_hours(report.per_agent_per_hour, c.cost.game_speed);
    check((per_human_hour - ledger_sum / 3.0).abs() < 1e-9, || format!("{per_human_hour} per agent per human hour"))?;
    Ok(format!(
        "2000/25/16/2 = {per_game_hour}, x10 = {human}; 1 h run: {} calls, ${breakdown:.6} = ledger within {:.1e}",
        log.usage.len(),
        (breakdown - ledger_sum).abs()
    ))
}

fn affinity_oracle() -> Outcome {
    let clubs = vec!["anime club".to_string(), "soccer club".to_string()];
    let all3 = |with_indecisive: bool| -> Vec<Vec<&'static str>> {
        let labels: &[&'static str] = if with_indecisive {
            &["anime club", "soccer club", INDECISIVE]
        } else {
            &["anime club", "soccer club"]
        };
        let mut out = BTreeSet::new();
        for a in labels {
            for b in labels {
                for c in labels {
                    let mut v = vec![*a, *b, *c];
                    v.sort();
                    out.insert(v);
                }
            }
        }
        out.into_iter().collect()
    };
    let dist = |labels: &[&str]| AnswerDistribution::from_labels(&clubs, &labels.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let mut pairs = 0;
    let two_clubs = all3(false);
    check(two_clubs.len() == 4, || format!("{} distributions", two_clubs.len()))?;
    for with_indecisive in [false, true] {
        let ds = all3(with_indecisive);
        for a in &ds {
            for b in &ds {
                let got = affinity_score(&dist(a), &dist(b)).map_err(|e| e.to_string())?;
                let want = oracle_affinity(a, b);
                check(got == want, || format!("{a:?} x {b:?}: {got}, oracle {want}"))?;
                let back = affinity_score(&dist(b), &dist(a)).map_err(|e| e.to_string())?;
                check(got == back, || format!("{a:?} x {b:?} not symmetric"))?;
                if !with_indecisive {
                    pairs += 1;
                }
            }
        }
    }
    check(pairs == 16, || format!("{pairs} two-club pairs"))?;
    let worked = dist(&["anime club", "anime club", "soccer club"]);
    let five_ninths = affinity_score(&worked, &worked).map_err(|e| e.to_string())?;
    check(five_ninths == Ratio::new(5, 9), || format!("worked case gave {five_ninths}"))?;
    Ok(format!("16 two-club pairs and 100 pairs with indecisive equal the oracle; worked case {five_ninths}"))
}

const FIXTURE_RULES: &str = r#"
when: controller contains "You are Lizhi Chen" contains "nearby: Marta Rodriguez"
reply: TALK | subgoal: ask Marta Rodriguez what she knows

when: controller contains "You are Lizhi Chen" contains "bloody knife"
reply: MOVE hotel | subgoal: tell Marta Rodriguez what Dmitri Ivanov saw

when: controller contains "nearby: no one" contains "You are Dmitri Ivanov"
reply: REFLECT | subgoal: think about last night

when: controller contains "nearby: no one" contains "You are Marta Rodriguez"
reply: REFLECT | subgoal: look after the hotel
"#;

/// Dmitri, Lizhi and Marta from the murder mystery. Lizhi starts next to
/// Dmitri; Marta is out of earshot at the hotel.
fn diffusion_fixture(dir: &Path, rng: Option<&mut ChaCha8Rng>) -> Result<ScenarioConfig, String> {
    let mut c = ScenarioConfig::builtin("murder_mystery").map_err(|e| e.to_string())?;
    let base = std::fs::read_to_string(c.resolve_path(c.lang.rules.as_deref().unwrap())).map_err(|e| e.to_string())?;
    let rules = dir.join("fixture.rules");
    std::fs::write(&rules, format!("{FIXTURE_RULES}\n{base}")).map_err(|e| e.to_string())?;
    c.lang.rules = Some(rules.to_string_lossy().into_owned());
    c.agents.retain(|a| ["Dmitri Ivanov", "Lizhi Chen", "Marta Rodriguez"].contains(&a.name.as_str()));
    c.duration_ticks = 300;
    for a in &mut c.agents {
        a.spawn = match a.name.as_str() {
            "Marta Rodriguez" => "hotel",
            _ => "ramen shop",
        }
        .into();
    }
    if let Some(rng) = rng {
        let places = ["hotel", "library", "ramen shop", "izakaya", "clinic", "park", "flower shop"];
        for a in &mut c.agents {
            a.spawn = places[rng.random_range(0..places.len())].into();
        }
        c.duration_ticks = rng.random_range(5..=400);
    }
    let lizhi = c.interviews.iter().find(|i| i.agent == "Lizhi Chen").cloned().ok_or("no interview")?;
    c.interviews = vec![
        lizhi.clone(),
        InterviewSpec {
            agent: "Marta Rodriguez".into(),
            ..lizhi
        },
    ];
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

/// Per-agent (received, stored, retrieved) recomputed from the raw world
/// log, memdumps and interview answers.
fn oracle_diffusion(log: &RunLog, keywords: &[&str]) -> BTreeMap<String, (bool, bool, bool)> {
    let carries = |t: &str| {
        let t = t.to_lowercase();
        keywords.iter().all(|k| t.contains(k))
    };
    let mut out = BTreeMap::new();
    for a in &log.agents {
        let received = log.world.iter().any(|e| match &e.kind {
            WorldEventKind::Delivered { text, to, .. } => to.contains(&a.agent) && carries(text),
            _ => false,
        });
        let stored = log
            .memdumps
            .iter()
            .filter(|(name, _)| *name == a.agent)
            .flat_map(|(_, dump)| dump.lines().skip(1))
            .filter_map(|l| serde_json::from_str::<MemdumpRecord>(l).ok())
            .any(|r| carries(&r.text));
        let retrieved = log
            .interviews
            .iter()
            .filter(|r| r.agent == a.agent)
            .flat_map(|r| r.repeats.iter().flat_map(|x| x.answers.iter()))
            .any(|t| carries(t));
        out.insert(a.agent.clone(), (received, stored, retrieved));
    }
    out
}

fn diffusion_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let keywords = ["bloody knife", "francesco"];
    let c = diffusion_fixture(tmp.path(), None)?;
    let log = run(&c, Providers::from_config(&c).map_err(|e| e.to_string())?, RunOptions::new(1)).map_err(|e| e.to_string())?;
    let report = diffusion_metrics(&log, "bloody_knife").map_err(|e| e.to_string())?;
    let oracle = oracle_diffusion(&log, &keywords);
    for name in ["Lizhi Chen", "Marta Rodriguez"] {
        let a = report.agent(name).ok_or_else(|| format!("{name} missing"))?;
        let got = (a.received, a.stored, a.retrieved);
        check(got == (true, true, true), || format!("{name}: {got:?}"))?;
        check(oracle[name] == got, || format!("{name}: oracle {:?}", oracle[name]))?;
    }
    check(report.agent("Dmitri Ivanov").is_none(), || "the source is scored".into())?;
    // Marta never hears Dmitri himself
    let direct = log.world.iter().any(|e| match &e.kind {
        WorldEventKind::Delivered { speaker, to, .. } => speaker == "Dmitri Ivanov" && to.iter().any(|t| t == "Marta Rodriguez"),
        _ => false,
    });
    check(!direct, || "Marta heard Dmitri directly".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut levels = BTreeMap::new();
    for i in 0..20u64 {
        let c = diffusion_fixture(tmp.path(), Some(&mut rng))?;
        let log = run(&c, Providers::from_config(&c).map_err(|e| e.to_string())?, RunOptions::new(100 + i)).map_err(|e| e.to_string())?;
        let report = diffusion_metrics(&log, "bloody_knife").map_err(|e| e.to_string())?;
        let oracle = oracle_diffusion(&log, &keywords);
        for a in &report.agents {
            check(a.is_monotone(), || format!("fixture {i}: {a:?} not monotone"))?;
            let (r, s, t) = oracle[&a.agent];
            check((!t || s) && (!s || r), || format!("fixture {i}: oracle {:?} not monotone", oracle[&a.agent]))?;
            check((a.received, a.stored, a.retrieved) == (r, s, t), || {
                format!("fixture {i} {}: metric {a:?}, oracle {:?}", a.agent, (r, s, t))
            })?;
            *levels.entry(r as u8 + s as u8 + t as u8).or_insert(0) += 1;
        }
    }
    Ok(format!(
        "Lizhi and Marta (1,1,1); 20 random fixtures monotone, agents by depth {levels:?}"
    ))
}

fn interview_protocol() -> Outcome {
    let rules = "when: interview_init reply: {memories}\nwhen: interview reply: Thinking of {summary}, my answer is the same.\n";
    let question = "What happened in town recently?".to_string();
    let mut details = Vec::new();
    for n in [0usize, 1, 7, 15, 16, 40] {
        let embedder = Arc::new(HashedBagOfTokens::new(512));
        let mut brain = AgentBrain::new(
            Persona {
                name: "Yi Huang".into(),
                description: "20 year old student".into(),
            },
            "Answer questions",
            BrainConfig::default(),
            embedder,
        )
        .map_err(|e| e.to_string())?;
        let memories: Vec<String> = (0..n).map(|i| format!("fact{i}alpha fact{i}beta fact{i}gamma happened")).collect();
        brain.seed(&memories, &[], 0).map_err(|e| e.to_string())?;
        check(brain.memory().longmem().len() == n, || format!("fixture lost memories: {}", brain.memory().longmem().len()))?;

        let ledger = UsageLedger::new();
        let lm = LlmClient::new(Arc::new(ScriptedProvider::parse(rules).map_err(|e| e.to_string())?), TemplateSet::builtin(), ledger.clone());
        let repeats = interview(&brain, &lm, std::slice::from_ref(&question), 3, 0);
        let want = n.min(15);
        check(repeats.len() == 3, || format!("{} repeats", repeats.len()))?;
        check(repeats.iter().map(|r| r.repeat).collect::<Vec<_>>() == [0, 1, 2], || "repeat indices".into())?;
        for r in &repeats {
            check(r.valid && r.init_memories == want, || format!("n={n}: repeat {} used {} memories", r.repeat, r.init_memories))?;
            check(r.answers == repeats[0].answers, || format!("n={n}: repeats differ: {:?}", r.answers))?;
        }
        check(ledger.count(CallSite::Interview) == 6, || format!("{} interview calls", ledger.count(CallSite::Interview)))?;
        // count the memories that actually reached the reflection prompt
        let mut probe = brain.clone();
        probe.reset_volatile();
        probe.init_interview(&lm, &question, 0).map_err(|e| e.to_string())?;
        let seen = memories.iter().filter(|m| probe.summary().contains(m.as_str())).count();
        check(seen == want, || format!("n={n}: {seen} memories in the reflection prompt"))?;
        details.push(format!("{n}->{want}"));
    }

    let cats = vec![
        Category {
            name: "anime club".into(),
            keywords: vec!["anime".into()],
        },
        Category {
            name: "soccer club".into(),
            keywords: vec!["soccer".into()],
        },
    ];
    let fixture = [
        ("I want to join the anime club.", "anime club"),
        ("Definitely the soccer club!", "soccer club"),
        ("Both the anime and soccer club sound fun.", INDECISIVE),
        ("I would join the club that Yi is in.", INDECISIVE),
        ("ANIME CLUB, no doubt.", "anime club"),
        ("Soccer, because Julian started it.", "soccer club"),
        ("I have not decided yet.", INDECISIVE),
        ("Probably the soccer club, though the anime club is cool too.", INDECISIVE),
        ("Lorenzo's anime club.", "anime club"),
        ("The club that my friends are in.", INDECISIVE),
        ("I will play soccer with Julian.", "soccer club"),
        ("Anime, because I love drawing manga.", "anime club"),
    ];
    let agree = fixture.iter().filter(|(a, want)| classify_answer(a, &cats) == *want).count();
    check(agree == 12, || {
        let bad: Vec<_> = fixture.iter().filter(|(a, w)| classify_answer(a, &cats) != *w).collect();
        format!("{agree}/12 answers classified as expected: {bad:?}")
    })?;
    Ok(format!("3 identical repeats; memories used {}; 12/12 answers classified", details.join(", ")))
}

fn ledger_sites(log: &RunLog) -> BTreeMap<CallSite, usize> {
    let mut out = BTreeMap::new();
    for u in &log.usage {
        *out.entry(u.call_site).or_insert(0) += 1;
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let c = ScenarioConfig::builtin("murder_mystery").map_err(|e| e.to_string())?;
    check(c.agents.len() == 9 && c.duration_ticks == 900, || "unexpected murder config".into())?;
    let go = |c: &ScenarioConfig| -> Result<RunLog, String> {
        run(c, Providers::from_config(c).map_err(|e| e.to_string())?, RunOptions::new(42)).map_err(|e| e.to_string())
    };
    let runs: Vec<RunLog> = (0..3).map(|_| go(&c)).collect::<Result<_, _>>()?;
    let files = runs[0].files();
    for (i, r) in runs.iter().enumerate().skip(1) {
        let other = r.files();
        check(other.len() == files.len(), || format!("run {i} wrote {} files", other.len()))?;
        for ((p, a), (q, b)) in files.iter().zip(&other) {
            check(p == q && a == b, || format!("run {i} differs in {}", p.display()))?;
        }
    }
    let full = &runs[0];
    check(full.completed() && full.ticks_run == 900, || "full run incomplete".into())?;
    let base = ledger_sites(full);

    let mut notes = Vec::new();
    for label in ["no_option_action", "no_self_monitor", "flat_memory"] {
        let mut a = c.clone();
        a.ablations.set(label).map_err(|e| e.to_string())?;
        let log = go(&a)?;
        let sites = ledger_sites(&log);
        let kinds: BTreeSet<CallSite> = sites.keys().copied().collect();
        let full_kinds: BTreeSet<CallSite> = base.keys().copied().collect();
        match label {
            "no_option_action" => {
                let controller = sites.get(&CallSite::Controller).copied().unwrap_or(0);
                let steps = 9 * log.ticks_run as usize;
                check(controller == steps, || format!("{controller} controller calls for {steps} action steps"))?;
                check(kinds == full_kinds, || format!("call sites {kinds:?} vs {full_kinds:?}"))?;
                notes.push(format!("controller {} -> {controller}", base[&CallSite::Controller]));
            }
            "no_self_monitor" => {
                let expected: BTreeSet<CallSite> = full_kinds.iter().copied().filter(|s| *s != CallSite::Summary).collect();
                check(kinds == expected, || format!("call sites {kinds:?}, expected {expected:?}"))?;
                let inits: usize = log
                    .interviews
                    .iter()
                    .flat_map(|r| r.repeats.iter())
                    .filter(|r| r.init_memories > 0)
                    .count();
                check(inits == 0, || format!("{inits} interview reflections ran"))?;
                let interview_calls = sites.get(&CallSite::Interview).copied().unwrap_or(0);
                let answers: usize = log.interviews.iter().map(|r| r.repeats.len() * r.questions.len()).sum();
                check(interview_calls == answers, || format!("{interview_calls} interview calls for {answers} answers"))?;
                notes.push(format!("summary {} -> 0", base.get(&CallSite::Summary).copied().unwrap_or(0)));
            }
            _ => {
                let expected: BTreeSet<CallSite> = full_kinds.iter().copied().filter(|s| *s != CallSite::Consolidate).collect();
                check(kinds == expected, || format!("call sites {kinds:?}, expected {expected:?}"))?;
                let forgotten = log
                    .agents
                    .iter()
                    .flat_map(|a| a.events.iter())
                    .filter(|e| matches!(e.kind, EventKind::Forgotten { .. }))
                    .count();
                check(forgotten == 0, || format!("{forgotten} forgetting events in a flat memory"))?;
                notes.push(format!("consolidate {} -> 0", base.get(&CallSite::Consolidate).copied().unwrap_or(0)));
            }
        }
    }
    Ok(format!("3 runs byte-identical ({} files, hash {}); {}", files.len(), &full.hash()[..12], notes.join(", ")))
}

fn self_monitor_asynchrony() -> Outcome {
    let c = ScenarioConfig::builtin("medicine").map_err(|e| e.to_string())?;
    let slow = DelayedProvider::new(c.build_language_provider().map_err(|e| e.to_string())?, Duration::from_millis(500)).only_for("summary");
    let options = RealtimeOptions {
        tick_interval: Duration::from_millis(10),
        max_ticks: Some(400),
        ..RealtimeOptions::new(3)
    };
    let rt = Realtime::start(&c, Arc::new(slow), c.build_embedder().map_err(|e| e.to_string())?, options).map_err(|e| e.to_string())?;
    let report = rt.join();
    let worst = report.max_tick_latency();
    check(report.ticks == 400, || format!("{} ticks", report.ticks))?;
    check(worst < Duration::from_millis(50), || format!("max tick latency {worst:?}"))?;
    let slow_calls = report.usage.iter().filter(|u| u.call_site == CallSite::Summary).count();
    check(slow_calls > 0, || "no summary completed".into())?;
    check(report.usage.iter().filter(|u| u.call_site == CallSite::Summary).all(|u| u.wall_ms >= 500), || {
        "a summary call was not delayed".into()
    })?;

    // a dispatch needs an admitted observation since the previous one
    let mut quiet_ticks = 0usize;
    for (agent, events) in &report.agents {
        let observed: Vec<u64> = events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Observation { admitted: true, .. } => Some(e.tick),
                _ => None,
            })
            .collect();
        let observed_set: BTreeSet<u64> = observed.iter().copied().collect();
        quiet_ticks += (0..report.ticks).filter(|t| !observed_set.contains(t)).count();
        let mut previous: Option<u64> = None;
        for (tick, _) in report.summary_dispatches.iter().filter(|(_, a)| a == agent) {
            let fresh = observed.iter().any(|t| *t <= *tick && previous.is_none_or(|p| *t > p));
            check(fresh, || format!("{agent}: summary dispatched at tick {tick} without new observations"))?;
            previous = Some(*tick);
        }
    }
    check(quiet_ticks > 0, || "every tick had observations".into())?;
    Ok(format!(
        "{} ticks, max latency {:.1} ms, {} summary dispatches, none in {quiet_ticks} quiet agent-ticks",
        report.ticks,
        worst.as_secs_f64() * 1000.0,
        report.summary_dispatches.len()
    ))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("forgetting invariant", Duration::from_secs(30), forgetting_invariant),
        ("similarity and clustering oracles", Duration::from_secs(10), similarity_and_clustering),
        ("option-action call accounting", Duration::from_secs(60), option_accounting),
        ("cost arithmetic", Duration::from_secs(5), cost_arithmetic),
        ("affinity oracle", Duration::from_secs(1), affinity_oracle),
        ("diffusion pipeline", Duration::from_secs(60), diffusion_pipeline),
        ("interview protocol", Duration::from_secs(10), interview_protocol),
        ("end-to-end determinism", Duration::from_secs(180), end_to_end_determinism),
        ("self-monitor asynchrony", Duration::from_secs(60), self_monitor_asynchrony),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("too slow: {d}")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {name} [{:.2} s, limit {} s] {detail}", took.as_secs_f64(), limit.as_secs());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
