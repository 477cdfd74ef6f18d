//! WebSocket bridge between a browser client and the arena: streams state
//! frames, receives key-state masks and records episodes as demonstrations.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{
    decode, encode, Command, EpisodeStatus, Frame, InputFrame, ProtocolError, StateFrame,
};
pub use server::{serve, ServeConfig, ServeError, Server};
pub use session::{Session, SessionConfig, SessionError};
