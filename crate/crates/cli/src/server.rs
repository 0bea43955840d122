//! HTTP + WebSocket front for a [`SessionState`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::session::{ServerMessage, SessionState};
use crate::CliError;

const PLACEHOLDER_PAGE: &str = "<!doctype html><title>ess-lab</title>\
<p>No UI bundle configured. Set <code>serve.static_dir</code> to the built walkthrough client; \
the session socket is at <code>/ws</code>.</p>";

#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<SessionState>>,
    active: Arc<AtomicBool>,
}

impl AppState {
    pub fn new(session: SessionState) -> Self {
        AppState {
            session: Arc::new(Mutex::new(session)),
            active: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn session(&self) -> Arc<Mutex<SessionState>> {
        self.session.clone()
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().route("/ws", get(ws_upgrade));
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    };
    app.with_state(state)
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| run_socket(socket, state)).into_response()
}

fn encode(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("server messages serialise").into())
}

async fn run_socket(mut socket: WebSocket, state: AppState) {
    if state.active.swap(true, Ordering::SeqCst) {
        let busy = ServerMessage::Error {
            msg: "another session is already connected".into(),
        };
        let _ = socket.send(encode(&busy)).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    let first = {
        let s = state.session.lock().expect("session lock");
        s.frame().unwrap_or_else(|e| ServerMessage::Error { msg: e.to_string() })
    };
    if socket.send(encode(&first)).await.is_ok() {
        while let Some(Ok(msg)) = socket.recv().await {
            let reply = match msg {
                Message::Text(text) => state.session.lock().expect("session lock").handle_text(text.as_str()),
                Message::Binary(_) => ServerMessage::Error {
                    msg: "binary frames are not part of the protocol".into(),
                },
                Message::Close(_) => break,
                Message::Ping(_) | Message::Pong(_) => continue,
            };
            if socket.send(encode(&reply)).await.is_err() {
                break;
            }
        }
    }
    state.active.store(false, Ordering::SeqCst);
}

/// Serves until the process is stopped.
pub async fn serve(listener: TcpListener, state: AppState, static_dir: Option<PathBuf>) -> Result<(), CliError> {
    axum::serve(listener, router(state, static_dir))
        .await
        .map_err(|e| CliError::Internal(format!("server stopped: {e}")))
}

pub async fn bind(host: &str, port: u16) -> Result<(TcpListener, SocketAddr), CliError> {
    let listener = TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::Usage(format!("cannot listen on {host}:{port}: {e}")))?;
    let addr = listener.local_addr()?;
    Ok((listener, addr))
}
