//! Wire protocol, session handling and the TCP service that external
//! trainers drive, plus a small blocking client.
//!
//! Frames are a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. See `schema/protocol.schema.json` for the message shapes.

pub mod protocol;
pub mod server;

pub use protocol::{Client, ProtocolError, Session, MAX_FRAME};
