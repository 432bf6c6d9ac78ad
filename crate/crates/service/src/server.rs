//! Websocket front end. The first connection drives the session; later ones
//! watch. Frames go out latest-wins through a watch channel, everything else
//! through an unbounded queue so events are never dropped.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

use crate::session::{Session, SessionConfig};
use crate::wire::{decode_client, encode, ClientBody, Envelope, Role, ServerBody, ServerMessage};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session_dir: PathBuf,
    /// Session started for the first teacher if it sends no StartSession.
    pub default_session: SessionConfig,
    /// Start the default session as soon as the server is up.
    pub autostart: bool,
}

struct Client {
    role: Role,
    seq: u64,
    last_client_seq: Option<u64>,
    frames: watch::Sender<Option<String>>,
    queue: mpsc::UnboundedSender<String>,
}

impl Client {
    fn send(&mut self, session: &str, body: ServerBody) {
        self.seq += 1;
        let text = encode(&Envelope::new(session, self.seq, body.clone()));
        if matches!(body, ServerBody::Frame(_)) {
            // lagging readers only ever see the newest frame
            let _ = self.frames.send(Some(text));
        } else {
            let _ = self.queue.send(text);
        }
    }
}

struct Hub {
    config: ServerConfig,
    session: Option<Session>,
    sessions_started: u64,
    clients: HashMap<u64, Client>,
    next_client: u64,
}

impl Hub {
    fn session_id(&self) -> String {
        self.session.as_ref().map_or_else(String::new, |s| s.id.clone())
    }

    fn broadcast(&mut self, bodies: Vec<ServerBody>) {
        let id = self.session_id();
        for c in self.clients.values_mut() {
            for b in &bodies {
                c.send(&id, b.clone());
            }
        }
    }

    fn reply(&mut self, client: u64, body: ServerBody) {
        let id = self.session_id();
        if let Some(c) = self.clients.get_mut(&client) {
            c.send(&id, body);
        }
    }

    fn start_session(&mut self, config: SessionConfig) -> Result<(), String> {
        self.sessions_started += 1;
        let id = format!("s-{}", self.sessions_started);
        let session = Session::start(id, config.clone()).map_err(|e| e.to_string())?;
        self.session = Some(session);
        let frame = self.session.as_ref().map(|s| ServerBody::Frame(Box::new(s.frame())));
        self.broadcast(vec![ServerBody::SessionStarted { config: Box::new(config) }]);
        self.broadcast(frame.into_iter().collect());
        Ok(())
    }

    fn save(&mut self) -> Result<String, String> {
        let s = self.session.as_ref().ok_or("no session running")?;
        std::fs::create_dir_all(&self.config.session_dir).map_err(|e| e.to_string())?;
        let path = self.config.session_dir.join(format!("{}.jsonl", s.id));
        s.archive().save(&path).map_err(|e| e.to_string())?;
        Ok(path.display().to_string())
    }

    fn handle_text(&mut self, client: u64, text: &str) {
        let msg = match decode_client(text) {
            Ok(m) => m,
            Err(e) => {
                self.reply(client, ServerBody::Error { message: e, in_reply_to: None });
                return;
            }
        };
        let outcome = self.apply(client, &msg);
        let accepted = outcome.is_ok();
        if let Some(s) = self.session.as_mut() {
            let mut logged = serde_json::to_value(&msg).expect("client message serializes");
            logged["accepted"] = serde_json::Value::Bool(accepted);
            s.log_wire(logged);
        }
        match outcome {
            Ok(replies) => self.broadcast(replies),
            Err(message) => self.reply(
                client,
                ServerBody::Error {
                    message,
                    in_reply_to: Some(msg.seq),
                },
            ),
        }
    }

    fn apply(&mut self, client: u64, msg: &Envelope<ClientBody>) -> Result<Vec<ServerBody>, String> {
        let c = self.clients.get_mut(&client).ok_or("unknown client")?;
        if c.last_client_seq.is_some_and(|last| msg.seq <= last) {
            return Err(format!("sequence number {} is not increasing", msg.seq));
        }
        c.last_client_seq = Some(msg.seq);
        if c.role != Role::Teacher {
            return Err("observers cannot drive the session".into());
        }
        match &msg.body {
            ClientBody::StartSession { config } => {
                self.start_session((**config).clone())?;
                Ok(Vec::new())
            }
            ClientBody::SaveSession => {
                let path = self.save()?;
                Ok(vec![ServerBody::Saved { path }])
            }
            body => {
                let s = self.session.as_mut().ok_or("no session running")?;
                if msg.session != s.id {
                    return Err(format!("message is for session `{}`, current is `{}`", msg.session, s.id));
                }
                s.handle(body).map_err(|e| e.to_string())
            }
        }
    }

    fn tick(&mut self) -> std::time::Duration {
        let Some(s) = self.session.as_mut() else {
            return std::time::Duration::from_millis(200);
        };
        let interval = s.tick_interval();
        match s.tick() {
            Ok(msgs) => self.broadcast(msgs),
            Err(e) => {
                log::error!("tick failed: {e}");
                self.broadcast(vec![ServerBody::Error {
                    message: format!("tick failed: {e}"),
                    in_reply_to: None,
                }]);
            }
        }
        interval
    }

    fn connect(&mut self) -> (u64, watch::Receiver<Option<String>>, mpsc::UnboundedReceiver<String>) {
        let id = self.next_client;
        self.next_client += 1;
        let role = if self.clients.values().any(|c| c.role == Role::Teacher) {
            Role::Observer
        } else {
            Role::Teacher
        };
        let (ftx, frx) = watch::channel(None);
        let (qtx, qrx) = mpsc::unbounded_channel();
        self.clients.insert(
            id,
            Client {
                role,
                seq: 0,
                last_client_seq: None,
                frames: ftx,
                queue: qtx,
            },
        );
        self.reply(id, ServerBody::Hello { role });
        if let Some(s) = &self.session {
            let f = ServerBody::Frame(Box::new(s.frame()));
            self.reply(id, f);
        }
        (id, frx, qrx)
    }

    fn disconnect(&mut self, id: u64) {
        let was_teacher = self.clients.remove(&id).is_some_and(|c| c.role == Role::Teacher);
        if was_teacher {
            // hand the session to the longest-connected observer
            if let Some((&next, _)) = self.clients.iter().min_by_key(|(k, _)| **k) {
                if let Some(c) = self.clients.get_mut(&next) {
                    c.role = Role::Teacher;
                }
                self.reply(next, ServerBody::Hello { role: Role::Teacher });
            }
        }
    }
}

#[derive(Clone)]
pub struct AppState(Arc<Mutex<Hub>>);

impl AppState {
    pub fn new(config: ServerConfig) -> Result<AppState, String> {
        let mut hub = Hub {
            config,
            session: None,
            sessions_started: 0,
            clients: HashMap::new(),
            next_client: 0,
        };
        if hub.config.autostart {
            let c = hub.config.default_session.clone();
            hub.start_session(c)?;
        }
        Ok(AppState(Arc::new(Mutex::new(hub))))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Hub> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (id, mut frames, mut queue) = state.lock().connect();
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        loop {
            // events first, so a frame never overtakes the event it reflects
            let text = tokio::select! {
                biased;
                q = queue.recv() => match q {
                    Some(t) => t,
                    None => break,
                },
                changed = frames.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    match frames.borrow_and_update().clone() {
                        Some(t) => t,
                        None => continue,
                    }
                }
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(t) => state.lock().handle_text(id, t.as_str()),
            Message::Close(_) => break,
            _ => {}
        }
    }
    state.lock().disconnect(id);
    writer.abort();
}

/// Ticks the session at its configured rate until the process exits.
async fn tick_loop(state: AppState) {
    loop {
        let wait = state.lock().tick();
        tokio::time::sleep(wait).await;
    }
}

/// Serves on `listener` until the future is dropped.
pub async fn serve(listener: TcpListener, config: ServerConfig) -> std::io::Result<()> {
    let state = AppState::new(config).map_err(std::io::Error::other)?;
    tokio::spawn(tick_loop(state.clone()));
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves.
pub async fn run(addr: SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on ws://{}/ws", listener.local_addr()?);
    serve(listener, config).await
}

/// Message helper for tests and tools.
pub fn server_message(text: &str) -> serde_json::Result<ServerMessage> {
    serde_json::from_str(text)
}
