//! Network front end for a realtime simulation: JSON request/response
//! endpoints for snapshots and commands, plus one websocket per client for
//! streamed world deltas. The gateway owns no simulation state; every
//! request becomes at most one call on a [`RealtimeHandle`].

pub mod protocol;

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lyfe_core::realtime::{AgentInfo, RealtimeError, RealtimeHandle};
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::broadcast::error::RecvError;

use protocol::*;

/// Default number of interview repeats when the client does not ask.
pub const DEFAULT_REPEATS: usize = 3;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Shared secret; `None` disables authentication.
    pub token: Option<String>,
    /// Minimum time between two utterances of the same player.
    pub say_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            token: None,
            say_interval: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("missing or wrong access token")]
    Unauthorized,
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("player `{0}` has not joined")]
    UnknownPlayer(String),
    #[error("slow down: one utterance per {0:?}")]
    RateLimited(Duration),
    #[error("{0}")]
    BadRequest(String),
    #[error("simulation has stopped")]
    Stopped,
    #[error("could not bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Unauthorized => "unauthorized",
            GatewayError::UnknownAgent(_) => "unknown_agent",
            GatewayError::UnknownPlayer(_) => "unknown_player",
            GatewayError::RateLimited(_) => "rate_limited",
            GatewayError::BadRequest(_) => "bad_request",
            GatewayError::Stopped => "stopped",
            GatewayError::Bind { .. } | GatewayError::Serve(_) => "internal",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            GatewayError::Unauthorized => StatusCode::UNAUTHORIZED,
            GatewayError::UnknownAgent(_) | GatewayError::UnknownPlayer(_) => StatusCode::NOT_FOUND,
            GatewayError::RateLimited(_) => StatusCode::TOO_MANY_REQUESTS,
            GatewayError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GatewayError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
            GatewayError::Bind { .. } | GatewayError::Serve(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<RealtimeError> for GatewayError {
    fn from(e: RealtimeError) -> Self {
        match e {
            RealtimeError::UnknownAgent(a) => GatewayError::UnknownAgent(a),
            RealtimeError::UnknownPlayer(p) => GatewayError::UnknownPlayer(p),
            RealtimeError::Stopped => GatewayError::Stopped,
            other => GatewayError::BadRequest(other.to_string()),
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let body = Envelope::new(ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        });
        (self.status(), Json(body)).into_response()
    }
}

/// Shared by every request handler and websocket session.
#[derive(Clone)]
pub struct Gateway {
    sim: RealtimeHandle,
    config: Arc<GatewayConfig>,
    last_say: Arc<Mutex<HashMap<String, Instant>>>,
}

impl Gateway {
    pub fn new(sim: RealtimeHandle, config: GatewayConfig) -> Self {
        Self {
            sim,
            config: Arc::new(config),
            last_say: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/world", get(get_world))
            .route("/agents", get(get_agents))
            .route("/agents/{id}", get(get_agent))
            .route("/join", post(post_join))
            .route("/say", post(post_say))
            .route("/move", post(post_move))
            .route("/interview", post(post_interview))
            .route("/stream", get(stream))
            .layer(middleware::from_fn_with_state(self.clone(), authenticate))
            .with_state(self)
    }

    fn tick(&self) -> u64 {
        self.sim.snapshot().map(|s| s.tick).unwrap_or(0)
    }

    fn check_rate(&self, player: &str) -> Result<(), GatewayError> {
        let mut last = self.last_say.lock().expect("rate limiter lock");
        let now = Instant::now();
        if let Some(t) = last.get(player) {
            if now.duration_since(*t) < self.config.say_interval {
                return Err(GatewayError::RateLimited(self.config.say_interval));
            }
        }
        last.insert(player.to_string(), now);
        Ok(())
    }

    async fn blocking<T: Send + 'static>(
        &self,
        f: impl FnOnce(RealtimeHandle) -> Result<T, RealtimeError> + Send + 'static,
    ) -> Result<T, GatewayError> {
        let sim = self.sim.clone();
        tokio::task::spawn_blocking(move || f(sim))
            .await
            .map_err(|_| GatewayError::Stopped)?
            .map_err(GatewayError::from)
    }

    async fn say(&self, player: String, text: String) -> Result<Accepted, GatewayError> {
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(GatewayError::BadRequest("empty utterance".into()));
        }
        self.check_rate(&player)?;
        let tick = self.blocking(move |sim| sim.say(&player, &text)).await?;
        Ok(Accepted { tick, request: None })
    }

    async fn move_to(&self, player: String, x: f64, y: f64) -> Result<Accepted, GatewayError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GatewayError::BadRequest("coordinates must be finite".into()));
        }
        let tick = self.blocking(move |sim| sim.move_to(&player, x, y)).await?;
        Ok(Accepted { tick, request: None })
    }

    async fn interview(&self, agent: String, questions: Vec<String>, repeats: Option<usize>) -> Result<Accepted, GatewayError> {
        if questions.iter().all(|q| q.trim().is_empty()) {
            return Err(GatewayError::BadRequest("interview needs a question".into()));
        }
        let repeats = repeats.unwrap_or(DEFAULT_REPEATS).clamp(1, 10);
        let request = self.blocking(move |sim| sim.interview(&agent, questions, repeats)).await?;
        Ok(Accepted {
            tick: self.tick(),
            request: Some(request),
        })
    }

    fn inspect(&self, id: &str) -> Result<AgentInfo, GatewayError> {
        self.sim.agent(id).ok_or_else(|| GatewayError::UnknownAgent(id.to_string()))
    }
}

/// Binds `addr` and serves until the future is dropped.
pub async fn serve(sim: RealtimeHandle, addr: SocketAddr, config: GatewayConfig) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::Bind { addr, source })?;
    tracing::info!(addr = %listener.local_addr().map_err(GatewayError::Serve)?, "gateway listening");
    axum::serve(listener, Gateway::new(sim, config).router())
        .await
        .map_err(GatewayError::Serve)
}

#[derive(Debug, Deserialize)]
struct AuthQuery {
    token: Option<String>,
}

async fn authenticate(State(gw): State<Gateway>, Query(q): Query<AuthQuery>, req: Request, next: Next) -> Response {
    if let Some(expected) = &gw.config.token {
        let bearer = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        // browsers cannot set headers on websocket upgrades
        let given = bearer.or(q.token.as_deref());
        if given != Some(expected.as_str()) {
            return GatewayError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

type ApiResult<T> = Result<Json<Envelope<T>>, GatewayError>;

fn ok<T>(body: T) -> ApiResult<T> {
    Ok(Json(Envelope::new(body)))
}

fn parse<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, GatewayError> {
    serde_json::from_str(body).map_err(|e| GatewayError::BadRequest(format!("malformed request: {e}")))
}

async fn get_world(State(gw): State<Gateway>) -> ApiResult<WorldView> {
    let snap = gw.sim.snapshot().ok_or(GatewayError::Stopped)?;
    let agents = gw.sim.agents().iter().map(AgentSummary::from).collect();
    ok(WorldView {
        tick: snap.tick,
        map: snap.map,
        vicinity_radius: snap.vicinity_radius,
        locations: snap.locations,
        bodies: snap.bodies,
        agents,
    })
}

async fn get_agents(State(gw): State<Gateway>) -> ApiResult<AgentList> {
    ok(AgentList {
        tick: gw.tick(),
        agents: gw.sim.agents().iter().map(AgentSummary::from).collect(),
    })
}

async fn get_agent(State(gw): State<Gateway>, Path(id): Path<String>) -> ApiResult<AgentInfo> {
    ok(gw.inspect(&id)?)
}

async fn post_join(State(gw): State<Gateway>, body: String) -> ApiResult<JoinResponse> {
    let req: JoinRequest = parse(&body)?;
    let player = req.player.clone();
    let p = gw.blocking(move |sim| sim.join(&req.player, req.location.as_deref())).await?;
    ok(JoinResponse { player, x: p.x, y: p.y })
}

async fn post_say(State(gw): State<Gateway>, body: String) -> ApiResult<Accepted> {
    let req: SayRequest = parse(&body)?;
    ok(gw.say(req.player, req.text).await?)
}

async fn post_move(State(gw): State<Gateway>, body: String) -> ApiResult<Accepted> {
    let req: MoveRequest = parse(&body)?;
    ok(gw.move_to(req.player, req.x, req.y).await?)
}

async fn post_interview(State(gw): State<Gateway>, body: String) -> ApiResult<Accepted> {
    let req: InterviewRequest = parse(&body)?;
    let questions = req.all_questions();
    ok(gw.interview(req.agent, questions, req.repeats).await?)
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    player: Option<String>,
    location: Option<String>,
}

async fn stream(State(gw): State<Gateway>, Query(q): Query<StreamQuery>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| session(gw, socket, q))
}

/// One client connection. A session with a `player` query parameter owns
/// that player's body for its lifetime.
async fn session(gw: Gateway, mut socket: WebSocket, q: StreamQuery) {
    let mut events = gw.sim.subscribe();
    let mut topics: HashSet<Topic> = ALL_TOPICS.into_iter().collect();
    let player = q.player.clone();
    if let Some(p) = player.clone() {
        let location = q.location.clone();
        if let Err(e) = gw.blocking(move |sim| sim.join(&p, location.as_deref())).await {
            let _ = send(&mut socket, &error_message(&gw, &e)).await;
            return;
        }
    }
    if send(&mut socket, &ServerMessage::Welcome { tick: gw.tick(), player: player.clone() })
        .await
        .is_err()
    {
        return;
    }
    let mut last_tick = gw.tick();
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { break };
                let text = match msg {
                    Message::Text(t) => t.to_string(),
                    Message::Close(_) => break,
                    _ => continue,
                };
                let reply = handle_client(&gw, player.as_deref(), &mut topics, &text).await;
                if send(&mut socket, &reply).await.is_err() {
                    break;
                }
            }
            event = events.recv() => {
                let out = match event {
                    Ok(m) => {
                        last_tick = m.tick();
                        ServerMessage::from_stream(m, player.as_deref())
                    }
                    Err(RecvError::Lagged(missed)) => vec![ServerMessage::Gap { tick: last_tick, missed }],
                    Err(RecvError::Closed) => break,
                };
                for m in out.into_iter().filter(|m| m.topic().is_none_or(|t| topics.contains(&t))) {
                    if send(&mut socket, &m).await.is_err() {
                        return leave(&gw, player.as_deref());
                    }
                }
            }
        }
    }
    leave(&gw, player.as_deref());
}

fn leave(gw: &Gateway, player: Option<&str>) {
    if let Some(p) = player {
        gw.sim.leave(p);
    }
}

async fn handle_client(gw: &Gateway, player: Option<&str>, topics: &mut HashSet<Topic>, text: &str) -> ServerMessage {
    let msg: ClientMessage = match parse(text) {
        Ok(m) => m,
        Err(e) => return error_message(gw, &e),
    };
    let need_player = || player.map(str::to_string).ok_or_else(|| GatewayError::BadRequest("this session has no player".into()));
    let result = match msg {
        ClientMessage::Say { text } => match need_player() {
            Ok(p) => gw.say(p, text).await.map(|a| ack(a, "say")),
            Err(e) => Err(e),
        },
        ClientMessage::Move { x, y } => match need_player() {
            Ok(p) => gw.move_to(p, x, y).await.map(|a| ack(a, "move")),
            Err(e) => Err(e),
        },
        ClientMessage::Inspect { agent } => gw.inspect(&agent).map(|agent| ServerMessage::Agent { tick: gw.tick(), agent }),
        ClientMessage::Interview { agent, question, repeats } => {
            gw.interview(agent, vec![question], repeats).await.map(|a| ack(a, "interview"))
        }
        ClientMessage::Subscribe { topics: t } => {
            *topics = t.into_iter().collect();
            Ok(ServerMessage::Ack {
                tick: gw.tick(),
                op: "subscribe".into(),
                request: None,
            })
        }
    };
    result.unwrap_or_else(|e| error_message(gw, &e))
}

fn ack(a: Accepted, op: &str) -> ServerMessage {
    ServerMessage::Ack {
        tick: a.tick,
        op: op.to_string(),
        request: a.request,
    }
}

fn error_message(gw: &Gateway, e: &GatewayError) -> ServerMessage {
    ServerMessage::Error {
        tick: gw.tick(),
        code: e.code().to_string(),
        message: e.to_string(),
    }
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> Result<(), axum::Error> {
    let text = serde_json::to_string(&Envelope::new(msg)).expect("serializable message");
    socket.send(Message::Text(text.into())).await
}
