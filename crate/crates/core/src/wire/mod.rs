//! Binary wire protocol and the TCP session layer.

mod client;
mod codec;
mod server;

use std::io;

use thiserror::Error;

pub use client::{run_client, ClientError, SessionSummary};
pub use codec::{
    decode_message, decode_stream, encode_message, read_message, write_message, Acquisition, AnnotationsMessage,
    GadgetMessage, ImageMessage, MessageHeader, WireBox, FLAG_ACS, FLAG_LAST_IN_SLICE, HEADER_LEN, ID_ACQUISITION,
    ID_ANNOTATIONS, ID_CLOSE, ID_CONFIG, ID_IMAGE, ID_REPORT, MAX_PAYLOAD, PIXEL_F32_MAGNITUDE,
};
pub use server::{run_server, serve_session, Server, ServerHandle, DEFAULT_PORT};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("protocol error: unknown message id {0}")]
    UnknownId(u16),
    #[error("incomplete message: needed {expected} bytes, stream ended after {available}")]
    Incomplete { expected: usize, available: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}
