//! Live teaching sessions: a websocket server that streams the road and the
//! learner's events to a teacher and applies the teacher's keyed inputs.

pub mod server;
pub mod session;
pub mod wire;

pub use server::{router, run, serve, AppState, ServerConfig};
pub use session::{correction_window, Rejection, Session, SessionConfig, CORRECTION_GRACE};
pub use wire::{ClientBody, ClientMessage, Envelope, Frame, Role, ServerBody, ServerMessage, WIRE_VERSION};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/live.md")]
mod book_live {}
