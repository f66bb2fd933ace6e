//! Session server: live closed-loop rollouts steered over a WebSocket.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Command, ServerMessage, Snapshot};
pub use server::{router, serve, AppState};
pub use session::{Assets, LibraryCache, Session, SessionConfig, SessionError, SessionRequest};
