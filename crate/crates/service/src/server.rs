//! WebSocket front end. Each session runs on its own task, which owns the
//! session and ticks it; commands reach it through a channel and snapshots
//! leave through a watch channel as immutable copies.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::protocol::{Ack, AssetListing, ClientMessage, Command, ErrorCode, ErrorPayload, ServerMessage, Snapshot};
use crate::session::{check_command, Assets, LibraryCache, Session, SessionError, SessionRequest};

enum Control {
    Command(Command),
    Close,
}

struct Handle {
    control: mpsc::UnboundedSender<Control>,
    snapshots: watch::Receiver<Snapshot>,
    dim: usize,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<BTreeMap<u64, Handle>>>,
    next_id: Arc<AtomicU64>,
    assets: Assets,
    cache: LibraryCache,
}

impl AppState {
    pub fn new(assets: Assets) -> Self {
        Self { assets, ..Default::default() }
    }

    pub fn session_ids(&self) -> Vec<u64> {
        self.sessions.lock().expect("session lock").keys().copied().collect()
    }

    /// Learns (or reuses) the library, then starts the session's worker.
    pub async fn create(&self, request: SessionRequest) -> Result<u64, SessionError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let (assets, cache) = (self.assets.clone(), self.cache.clone());
        let session = tokio::task::spawn_blocking(move || Session::create(id, request, &assets, &cache))
            .await
            .map_err(|e| SessionError::Setup(e.to_string()))??;
        let dim = session.dim();
        let (control, rx) = mpsc::unbounded_channel();
        let (tx, snapshots) = watch::channel(session.snapshot());
        tokio::spawn(worker(session, rx, tx));
        self.sessions.lock().expect("session lock").insert(id, Handle { control, snapshots, dim });
        info!(id, "session created");
        Ok(id)
    }

    pub fn command(&self, id: u64, cmd: Command) -> Result<(), SessionError> {
        let sessions = self.sessions.lock().expect("session lock");
        let h = sessions.get(&id).ok_or(SessionError::UnknownSession(id))?;
        check_command(&cmd, h.dim)?;
        h.control.send(Control::Command(cmd)).map_err(|_| SessionError::UnknownSession(id))
    }

    pub fn subscribe(&self, id: u64) -> Result<watch::Receiver<Snapshot>, SessionError> {
        let sessions = self.sessions.lock().expect("session lock");
        sessions.get(&id).map(|h| h.snapshots.clone()).ok_or(SessionError::UnknownSession(id))
    }

    pub fn close(&self, id: u64) -> Result<(), SessionError> {
        let h = self.sessions.lock().expect("session lock").remove(&id).ok_or(SessionError::UnknownSession(id))?;
        let _ = h.control.send(Control::Close);
        info!(id, "session closed");
        Ok(())
    }
}

async fn worker(mut session: Session, mut control: mpsc::UnboundedReceiver<Control>, out: watch::Sender<Snapshot>) {
    let period = Duration::from_secs_f64(1.0 / session.request.config.tick_hz);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    ticker.tick().await;
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                if let Err(e) = session.tick() {
                    warn!(id = session.id, error = %e, "command failed");
                }
                out.send_replace(session.snapshot());
            }
            msg = control.recv() => match msg {
                Some(Control::Command(cmd)) => {
                    if let Err(e) = session.enqueue(cmd) {
                        warn!(id = session.id, error = %e, "command rejected");
                    }
                }
                Some(Control::Close) | None => break,
            }
        }
    }
    debug!(id = session.id, "worker stopped");
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/assets", get(list_assets))
        .route("/sessions", get(list_sessions))
        .with_state(state)
}

async fn list_assets(State(state): State<AppState>) -> Json<AssetListing> {
    Json(state.assets.listing())
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<u64>> {
    Json(state.session_ids())
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn error(seq: Option<u64>, code: ErrorCode, message: impl Into<String>) -> ServerMessage {
    ServerMessage::Error { seq, payload: ErrorPayload { code, message: message.into() } }
}

fn ack(seq: u64, id: u64, action: &str) -> ServerMessage {
    ServerMessage::Ack { seq, payload: Ack { id, action: action.to_string() } }
}

/// Forwards every snapshot the session publishes, starting with the current one.
fn forward(mut rx: watch::Receiver<Snapshot>, out: mpsc::UnboundedSender<ServerMessage>) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            let snap = rx.borrow_and_update().clone();
            let msg = ServerMessage::Snapshot { seq: snap.tick, payload: Box::new(snap) };
            if out.send(msg).is_err() || rx.changed().await.is_err() {
                break;
            }
        }
    })
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbox) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = outbox.recv().await {
            let text = serde_json::to_string(&msg).expect("server messages serialize");
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    let mut subscriptions: HashMap<u64, JoinHandle<()>> = HashMap::new();
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = handle(&state, &text, &out, &mut subscriptions).await;
        if let Some(reply) = reply {
            if out.send(reply).is_err() {
                break;
            }
        }
    }
    for (_, task) in subscriptions {
        task.abort();
    }
    drop(out);
    let _ = writer.await;
}

async fn handle(
    state: &AppState,
    text: &str,
    out: &mpsc::UnboundedSender<ServerMessage>,
    subscriptions: &mut HashMap<u64, JoinHandle<()>>,
) -> Option<ServerMessage> {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => {
            let seq = serde_json::from_str::<Value>(text).ok().and_then(|v| v.get("seq").and_then(Value::as_u64));
            return Some(error(seq, ErrorCode::BadMessage, e.to_string()));
        }
    };
    let seq = msg.seq();
    let fail = |e: SessionError| error(Some(seq), e.code(), e.to_string());
    let mut subscribe = |id: u64| -> Result<(), SessionError> {
        let rx = state.subscribe(id)?;
        if let Some(old) = subscriptions.insert(id, forward(rx, out.clone())) {
            old.abort();
        }
        Ok(())
    };
    Some(match msg {
        ClientMessage::Create { scene, spec, variant, config, .. } => {
            match state.create(SessionRequest { scene, spec, variant, config }).await {
                Ok(id) => {
                    // the ack goes out before the first snapshot
                    let _ = out.send(ack(seq, id, "create"));
                    return subscribe(id).err().map(fail);
                }
                Err(e) => fail(e),
            }
        }
        ClientMessage::Command { id, cmd, args, .. } => match Command::parse(&cmd, args) {
            Ok(c) => match state.command(id, c) {
                Ok(()) => ack(seq, id, &cmd),
                Err(e) => fail(e),
            },
            Err(e) => fail(SessionError::InvalidCommand(e)),
        },
        ClientMessage::Subscribe { id, .. } => match subscribe(id) {
            Ok(()) => ack(seq, id, "subscribe"),
            Err(e) => fail(e),
        },
        ClientMessage::Close { id, .. } => {
            if let Some(task) = subscriptions.remove(&id) {
                task.abort();
            }
            match state.close(id) {
                Ok(()) => ack(seq, id, "close"),
                Err(e) => fail(e),
            }
        }
    })
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, assets: Assets) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::new(assets))).await
}
