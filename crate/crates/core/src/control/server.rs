//! WebSocket front end. Each connection forwards commands to the engine
//! inbox and relays broadcast frames; none of them touch the simulator.

use std::net::SocketAddr;
use std::sync::{mpsc, Arc};

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, oneshot};
use tokio_tungstenite::tungstenite::Message;

use super::engine::{self, Command, EngineReport, Pace};
use super::protocol::{ClientMessage, ServerMessage};
use crate::scenarios::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("engine thread exited without a report")]
    EngineLost,
}

const CLOSE_GRACE: std::time::Duration = std::time::Duration::from_secs(2);

/// A bound, not yet running, control service.
pub struct Server {
    listener: TcpListener,
    scenario: Scenario,
    pace: Pace,
}

impl Server {
    pub async fn bind(scenario: Scenario, listen: &str, pace: Pace) -> Result<Self, ControlError> {
        scenario.validate()?;
        let listener = TcpListener::bind(listen)
            .await
            .map_err(|source| ControlError::Bind {
                addr: listen.to_owned(),
                source,
            })?;
        Ok(Self {
            listener,
            scenario,
            pace,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener
            .local_addr()
            .expect("bound listener has an address")
    }

    /// Starts the engine and serves clients until one sends `stop`.
    pub async fn run(self) -> Result<EngineReport, ControlError> {
        let addr = self.local_addr();
        let handle = engine::spawn(self.scenario, self.pace)?;
        let inbox = handle.inbox;
        let outbox = handle.outbox;
        let mut done = handle.done;
        let mut clients = tokio::task::JoinSet::new();
        log::info!("listening on {addr}");
        loop {
            tokio::select! {
                report = &mut done => {
                    // Let every client flush its last reply and see the close.
                    drop(outbox);
                    drop(inbox);
                    let drain = async { while clients.join_next().await.is_some() {} };
                    let _ = tokio::time::timeout(CLOSE_GRACE, drain).await;
                    return report.map_err(|_| ControlError::EngineLost);
                }
                accepted = self.listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        log::debug!("connection from {peer}");
                        let inbox = inbox.clone();
                        let frames = outbox.subscribe();
                        clients.spawn(async move {
                            if let Err(e) = connection(stream, inbox, frames).await {
                                log::debug!("connection {peer} closed: {e}");
                            }
                        });
                    }
                    Err(e) => log::error!("accept failed: {e}"),
                },
            }
        }
    }
}

/// Binds and runs in one call.
pub async fn serve(
    scenario: Scenario,
    listen: &str,
    pace: Pace,
) -> Result<EngineReport, ControlError> {
    Server::bind(scenario, listen, pace).await?.run().await
}

async fn connection(
    stream: TcpStream,
    inbox: mpsc::Sender<Command>,
    mut frames: broadcast::Receiver<Arc<str>>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    loop {
        tokio::select! {
            incoming = source.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Close(_))) | None => return Ok(()),
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => return Err(e),
                };
                let reply = match ClientMessage::parse(text.as_str()) {
                    Ok(message) => {
                        let (reply, rx) = oneshot::channel();
                        if inbox.send(Command { message, reply }).is_err() {
                            return Ok(());
                        }
                        match rx.await {
                            Ok(reply) => reply,
                            Err(_) => return Ok(()),
                        }
                    }
                    Err(message) => ServerMessage::error(message),
                };
                sink.send(Message::text(reply.to_json())).await?;
            }
            frame = frames.recv() => match frame {
                Ok(frame) => sink.send(Message::text(frame.as_ref())).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::debug!("client lagging, {n} frames skipped");
                }
                Err(broadcast::error::RecvError::Closed) => {
                    let _ = sink.send(Message::Close(None)).await;
                    return Ok(());
                }
            },
        }
    }
}
