//! Live, steppable evaluation sessions for a trained policy.
//!
//! A client connects over TCP and exchanges length-delimited JSON
//! messages: a decimal byte count, a newline, then that many bytes of
//! JSON. Requests drive a [`Session`]; replies are frames, acknowledgements
//! or structured errors. See `docs/bridge-protocol.md` for the schema.

mod codec;
mod protocol;
mod server;
mod session;

pub use codec::{encode_message, read_message, write_message, CodecError, MAX_MESSAGE_BYTES};
pub use protocol::{
    decode_reply, decode_request, encode_reply, encode_request, ErrorCode, ErrorReply, Frame, Grid, Mode, Reply,
    Request, RequestBody, SCHEMA_VERSION,
};
pub use server::{handle_client, serve};
pub use session::Session;
