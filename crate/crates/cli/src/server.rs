//! Websocket front end for [`daif_core::session::Session`].
//!
//! Each connection gets its own simulator; nothing is shared between
//! connections. The session ticks at a fixed rate whether or not the client
//! sends anything, applying the most recent key action.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use daif_core::session::{parse_client, ServerMessage, Session};
use daif_env::EnvConfig;
use tokio::net::TcpListener;

/// Close code sent after a malformed client message (RFC 6455 "unsupported data").
pub const CLOSE_PROTOCOL_ERROR: u16 = 1003;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub env: EnvConfig,
    pub seed: u64,
    pub tick: Duration,
    pub record_dir: PathBuf,
}

struct Shared {
    options: ServeOptions,
    sessions: AtomicU64,
}

pub fn router(options: ServeOptions) -> Router {
    let shared = Arc::new(Shared {
        options,
        sessions: AtomicU64::new(0),
    });
    Router::new()
        .route("/ws", get(upgrade))
        .with_state(shared)
}

pub async fn serve(listener: TcpListener, options: ServeOptions) -> std::io::Result<()> {
    axum::serve(listener, router(options)).await
}

pub async fn bind(port: u16) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(("127.0.0.1", port)).await?;
    let addr = listener.local_addr()?;
    Ok((listener, addr))
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    let id = shared.sessions.fetch_add(1, Ordering::Relaxed);
    ws.on_upgrade(move |socket| async move {
        if let Err(e) = run_session(socket, &shared.options, id).await {
            log::warn!("session {id}: {e}");
        }
    })
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> anyhow::Result<()> {
    socket.send(Message::Text(msg.to_json().into())).await?;
    Ok(())
}

async fn run_session(mut socket: WebSocket, options: &ServeOptions, id: u64) -> anyhow::Result<()> {
    let record_dir = options.record_dir.join(format!("conn_{id:04}"));
    let mut session = Session::new(options.env.clone(), options.seed, record_dir)?;
    log::info!("session {id} opened");
    send(&mut socket, &session.init_message()).await?;
    let mut ticker = tokio::time::interval(options.tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                for msg in session.tick()? {
                    send(&mut socket, &msg).await?;
                }
            }
            incoming = socket.recv() => {
                let text = match incoming {
                    None | Some(Ok(Message::Close(_))) => break,
                    Some(Err(e)) => return Err(e.into()),
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Binary(_))) => {
                        reject(&mut socket, "binary messages are not supported").await?;
                        break;
                    }
                };
                let reply = parse_client(text.as_str()).and_then(|m| session.handle(m));
                match reply {
                    Ok(msgs) => {
                        for msg in msgs {
                            if let ServerMessage::Record { on, records, path } = &msg {
                                log::info!("session {id}: recording {} ({records} records, {path:?})", if *on { "on" } else { "off" });
                            }
                            send(&mut socket, &msg).await?;
                        }
                    }
                    Err(e) => {
                        reject(&mut socket, &e.to_string()).await?;
                        break;
                    }
                }
            }
        }
    }
    if let Some((path, n)) = session.close()? {
        log::info!("session {id}: wrote {n} records to {}", path.display());
    }
    log::info!("session {id} closed");
    Ok(())
}

async fn reject(socket: &mut WebSocket, reason: &str) -> anyhow::Result<()> {
    send(socket, &ServerMessage::Error { message: reason.to_string() }).await?;
    socket
        .send(Message::Close(Some(CloseFrame {
            code: CLOSE_PROTOCOL_ERROR,
            reason: "malformed message".into(),
        })))
        .await?;
    Ok(())
}
