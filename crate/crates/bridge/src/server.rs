use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use mail_core::arena::{Arena, EnvConfig};
use tungstenite::{Message, WebSocket};

use crate::protocol::{decode, encode, Frame};
use crate::session::{Session, SessionConfig, SessionError};

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub addr: String,
    pub env: EnvConfig,
    pub seed: u64,
    pub out_path: PathBuf,
    /// Ticks per second. `0` switches to lockstep: each input frame advances
    /// exactly one tick, which makes scripted clients reproducible.
    pub tick_hz: f64,
    pub keep_partials: bool,
    /// Stop after this many client sessions (`None` serves forever).
    pub max_sessions: Option<usize>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8765".into(),
            env: EnvConfig::default(),
            seed: 0,
            out_path: PathBuf::from("demos/human.mdemo"),
            tick_hz: 15.0,
            keep_partials: false,
            max_sessions: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Core(#[from] mail_core::Error),
}

pub struct Server {
    listener: TcpListener,
    cfg: ServeConfig,
    stop: Arc<AtomicBool>,
}

const POLL: Duration = Duration::from_millis(1);

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if io.kind() == io::ErrorKind::WouldBlock)
}

fn send(ws: &mut WebSocket<TcpStream>, frame: &Frame) -> Result<(), tungstenite::Error> {
    match ws.send(Message::text(encode(frame))) {
        Err(e) if would_block(&e) => Ok(()),
        other => other,
    }
}

/// Completes the handshake on `stream` and turns it away with an error frame.
fn reject(stream: TcpStream, reason: &str) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let _ = ws.send(Message::text(encode(&Frame::error(reason))));
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

impl Server {
    pub fn bind(cfg: ServeConfig) -> Result<Self, ServeError> {
        cfg.env.validate()?;
        let listener = TcpListener::bind(&cfg.addr)?;
        Ok(Self {
            listener,
            cfg,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Setting the flag ends `run` at the next poll.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Serves one client at a time until stopped or `max_sessions` is hit.
    /// The session and its recording persist across reconnects.
    pub fn run(self) -> Result<Session, ServeError> {
        let arena = Arena::new(self.cfg.env.clone())?;
        let mut session = Session::new(
            arena,
            SessionConfig {
                seed: self.cfg.seed,
                keep_partials: self.cfg.keep_partials,
                out_path: Some(self.cfg.out_path.clone()),
                ..Default::default()
            },
        );
        self.listener.set_nonblocking(true)?;
        let mut served = 0usize;
        while !self.stop.load(Ordering::Relaxed) {
            if self.cfg.max_sessions.is_some_and(|m| served >= m) {
                break;
            }
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    log::info!("client {peer} connected");
                    served += 1;
                    self.serve_client(stream, &mut session)?;
                    log::info!("client {peer} left");
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5))
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(session)
    }

    fn serve_client(&self, stream: TcpStream, session: &mut Session) -> Result<(), ServeError> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let mut ws = match tungstenite::accept(stream) {
            Ok(ws) => ws,
            Err(e) => {
                log::warn!("handshake failed: {e}");
                return Ok(());
            }
        };
        ws.get_ref().set_nonblocking(true)?;
        let lockstep = self.cfg.tick_hz <= 0.0;
        let period = if lockstep {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(1.0 / self.cfg.tick_hz)
        };
        let mut next_tick = Instant::now() + period;
        let mut open = send(&mut ws, &Frame::State(session.snapshot())).is_ok();
        while open && !self.stop.load(Ordering::Relaxed) {
            if let Ok((extra, peer)) = self.listener.accept() {
                log::warn!("rejecting second client {peer}");
                reject(extra, "session busy: only one client may be connected");
            }
            let mut inputs = 0usize;
            loop {
                match ws.read() {
                    Ok(Message::Text(text)) => match decode(text.as_str()) {
                        Ok(frame) => {
                            let is_input = matches!(frame, Frame::Input(_));
                            let control = !is_input;
                            match session.handle(frame) {
                                Ok(()) => {
                                    if is_input {
                                        inputs += 1;
                                        if lockstep {
                                            break;
                                        }
                                    }
                                    if control {
                                        let _ = send(&mut ws, &Frame::State(session.snapshot()));
                                    }
                                }
                                Err(e) => {
                                    let _ = send(&mut ws, &Frame::error(e.to_string()));
                                    if matches!(e, SessionError::Protocol(_)) {
                                        let _ = ws.close(None);
                                        open = false;
                                        break;
                                    }
                                }
                            }
                        }
                        Err(e) => {
                            let _ = send(&mut ws, &Frame::error(e.to_string()));
                            let _ = ws.close(None);
                            open = false;
                            break;
                        }
                    },
                    Ok(Message::Close(_)) => {
                        open = false;
                        break;
                    }
                    Ok(_) => {}
                    Err(e) if would_block(&e) => break,
                    Err(_) => {
                        open = false;
                        break;
                    }
                }
            }
            if !open {
                break;
            }
            let due = if lockstep {
                inputs > 0
            } else {
                Instant::now() >= next_tick
            };
            if due {
                if !lockstep {
                    next_tick += period;
                }
                if session.step()? && send(&mut ws, &Frame::State(session.snapshot())).is_err() {
                    break;
                }
            }
            match ws.flush() {
                Err(e) if !would_block(&e) => break,
                _ => {}
            }
            if !due {
                thread::sleep(POLL);
            }
        }
        let _ = ws.flush();
        session.disconnect()?;
        Ok(())
    }
}

pub fn serve(cfg: ServeConfig) -> Result<Session, ServeError> {
    let server = Server::bind(cfg)?;
    log::info!("demo bridge listening on ws://{}", server.local_addr()?);
    server.run()
}
