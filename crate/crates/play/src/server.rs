use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use hcmd_core::cohort::{ArchetypeKind, ArchetypeSpec, VoterRule};
use hcmd_core::dataset::append_session;
use hcmd_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex};

use crate::error::PlayError;
use crate::session::{
    Event, LiveSession, MechanismRegistry, Phase, RoundResult, SeatTicket, SessionConfig,
    SessionView,
};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Completed sessions are appended here.
    pub dataset_path: PathBuf,
    pub round_timeout: Duration,
    pub lobby_timeout: Duration,
    /// Plays empty and abandoned seats.
    pub bot: ArchetypeSpec,
    pub seed: u64,
}

impl ServerConfig {
    pub fn new(dataset_path: impl Into<PathBuf>) -> Self {
        ServerConfig {
            dataset_path: dataset_path.into(),
            round_timeout: Duration::from_secs(30),
            lobby_timeout: Duration::from_secs(30),
            bot: ArchetypeSpec {
                noise: 0.15,
                ..ArchetypeSpec::new(ArchetypeKind::Reciprocator, VoterRule::OwnWelfare)
            },
            seed: 0,
        }
    }
}

struct Slot {
    session: Mutex<LiveSession>,
    events: broadcast::Sender<Event>,
}

struct Inner {
    config: ServerConfig,
    registry: MechanismRegistry,
    sessions: std::sync::Mutex<HashMap<String, Arc<Slot>>>,
    counter: AtomicU64,
    /// Held for each dataset append.
    persist: std::sync::Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServerConfig, registry: MechanismRegistry) -> Self {
        AppState(Arc::new(Inner {
            config,
            registry,
            sessions: std::sync::Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
            persist: std::sync::Mutex::new(()),
        }))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, PlayError> {
        self.0
            .sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| PlayError::UnknownSession(id.to_string()))
    }

    pub fn create_session(&self, config: &SessionConfig) -> Result<String, PlayError> {
        let n = self.0.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!("live-{n:05}");
        let seed = derive_seed(self.0.config.seed, &["play-session"], &[n]);
        let session = LiveSession::new(&id, config, &self.0.registry, self.0.config.bot, seed)?;
        let epoch = session.epoch();
        let (events, _) = broadcast::channel(256);
        let slot = Arc::new(Slot {
            session: Mutex::new(session),
            events,
        });
        self.0
            .sessions
            .lock()
            .expect("session table lock")
            .insert(id.clone(), slot.clone());
        self.arm(slot, epoch, self.0.config.lobby_timeout);
        tracing::info!(session = %id, ?config, "session created");
        Ok(id)
    }

    /// Runs `f` on the session, then broadcasts its events, arms the next
    /// deadline and persists a finished record.
    async fn apply<T>(
        &self,
        slot: &Arc<Slot>,
        f: impl FnOnce(&mut LiveSession) -> Result<(T, Vec<Event>), PlayError>,
    ) -> Result<T, PlayError> {
        let mut session = slot.session.lock().await;
        let before = session.epoch();
        let (out, events) = f(&mut session)?;
        self.after(slot, &mut session, before, events)?;
        Ok(out)
    }

    fn after(
        &self,
        slot: &Arc<Slot>,
        session: &mut LiveSession,
        before: u64,
        events: Vec<Event>,
    ) -> Result<(), PlayError> {
        for e in events {
            let _ = slot.events.send(e);
        }
        if session.epoch() != before && session.awaiting() {
            let wait = if session.phase() == Phase::Lobby {
                self.0.config.lobby_timeout
            } else {
                self.0.config.round_timeout
            };
            self.arm(slot.clone(), session.epoch(), wait);
        }
        if let Some(record) = session.take_record() {
            let _guard = self.0.persist.lock().expect("persist lock");
            append_session(&self.0.config.dataset_path, &record).map_err(|e| {
                tracing::error!(session = %session.id(), "persisting failed: {e}");
                PlayError::Persist(e.to_string())
            })?;
            tracing::info!(session = %session.id(), "session persisted");
        }
        Ok(())
    }

    fn arm(&self, slot: Arc<Slot>, epoch: u64, wait: Duration) {
        let state = self.clone();
        tokio::spawn(async move {
            tokio::time::sleep(wait).await;
            let mut session = slot.session.lock().await;
            let before = session.epoch();
            let events = session.timeout(epoch);
            if let Err(e) = state.after(&slot, &mut session, before, events) {
                tracing::error!("after timeout: {e}");
            }
        });
    }
}

impl IntoResponse for PlayError {
    fn into_response(self) -> Response {
        let status = match &self {
            PlayError::UnknownSession(_) => StatusCode::NOT_FOUND,
            PlayError::BadToken | PlayError::SeatTakenOver(_) => StatusCode::FORBIDDEN,
            PlayError::WrongPhase(_) | PlayError::Duplicate | PlayError::SessionFull => StatusCode::CONFLICT,
            PlayError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Body of `POST /session`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SessionRequest {
    Create(SessionConfig),
    Join { session_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SessionResponse {
    Created { session_id: String },
    Joined(SeatTicket),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContributeRequest {
    pub seat: usize,
    pub token: String,
    pub contribution: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContributeResponse {
    pub accepted: bool,
    /// Present when this submission completed the round.
    pub round_result: Option<RoundResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRequest {
    pub seat: usize,
    pub token: String,
    /// 1 or 2.
    pub game: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteResponse {
    pub accepted: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StateQuery {
    pub seat: Option<usize>,
    pub token: Option<String>,
}

async fn session_endpoint(
    State(state): State<AppState>,
    Json(req): Json<SessionRequest>,
) -> Result<Json<SessionResponse>, PlayError> {
    match req {
        SessionRequest::Create(config) => Ok(Json(SessionResponse::Created {
            session_id: state.create_session(&config)?,
        })),
        SessionRequest::Join { session_id } => {
            let slot = state.slot(&session_id)?;
            let ticket = state.apply(&slot, |s| s.join()).await?;
            Ok(Json(SessionResponse::Joined(ticket)))
        }
    }
}

async fn state_endpoint(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
) -> Result<Json<SessionView>, PlayError> {
    let slot = state.slot(&id)?;
    let session = slot.session.lock().await;
    if let Some(seat) = q.seat {
        session.check_token(seat, q.token.as_deref().unwrap_or(""))?;
    }
    Ok(Json(session.view(q.seat)))
}

async fn contribute_endpoint(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ContributeRequest>,
) -> Result<Json<ContributeResponse>, PlayError> {
    let slot = state.slot(&id)?;
    let events = state
        .apply(&slot, |s| {
            let events = s.submit_contribution(req.seat, &req.token, req.contribution)?;
            Ok((events.clone(), events))
        })
        .await?;
    let round_result = events.into_iter().find_map(|e| match e {
        Event::RoundResult { result, .. } => Some(result),
        _ => None,
    });
    Ok(Json(ContributeResponse {
        accepted: true,
        round_result,
    }))
}

async fn vote_endpoint(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<VoteRequest>,
) -> Result<Json<VoteResponse>, PlayError> {
    let slot = state.slot(&id)?;
    state
        .apply(&slot, |s| Ok(((), s.submit_vote(req.seat, &req.token, req.game)?)))
        .await?;
    Ok(Json(VoteResponse { accepted: true }))
}

async fn events_endpoint(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, PlayError> {
    let slot = state.slot(&id)?;
    let rx = slot.events.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(event) => {
                    let name = event_name(&event);
                    let data = serde_json::to_string(&event).expect("events serialize");
                    return Some((Ok(SseEvent::default().event(name).data(data)), rx));
                }
                // A slow reader missed events; it can resync from /state.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn event_name(e: &Event) -> &'static str {
    match e {
        Event::SeatJoined { .. } => "seat_joined",
        Event::BotsFilled { .. } => "bots_filled",
        Event::StageStarted { .. } => "stage_started",
        Event::RoundStarted { .. } => "round_started",
        Event::ContributionReceived { .. } => "contribution_received",
        Event::SeatTimedOut { .. } => "seat_timed_out",
        Event::RoundResult { .. } => "round_result",
        Event::VotePrompt { .. } => "vote_prompt",
        Event::VoteReceived { .. } => "vote_received",
        Event::SessionDone => "session_done",
        Event::Abandoned { .. } => "abandoned",
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(session_endpoint))
        .route("/session/{id}/state", get(state_endpoint))
        .route("/session/{id}/contribute", post(contribute_endpoint))
        .route("/session/{id}/vote", post(vote_endpoint))
        .route("/session/{id}/events", get(events_endpoint))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "play server listening");
    axum::serve(listener, router(state)).await
}
