use std::io::{BufRead, Read, Write};

use thiserror::Error;

/// Upper bound on a single message body.
pub const MAX_MESSAGE_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad length prefix: {0}")]
    BadLength(String),
    #[error("message of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("stream ended inside a message")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_message(body: &[u8]) -> Vec<u8> {
    let mut out = format!("{}\n", body.len()).into_bytes();
    out.extend_from_slice(body);
    out
}

pub fn write_message(w: &mut impl Write, body: &[u8]) -> std::io::Result<()> {
    w.write_all(&encode_message(body))?;
    w.flush()
}

/// Reads one message. `Ok(None)` on a clean end of stream.
pub fn read_message(r: &mut impl BufRead) -> Result<Option<Vec<u8>>, CodecError> {
    let mut line = Vec::new();
    let n = r.by_ref().take(24).read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(if n < 24 {
            CodecError::Truncated
        } else {
            CodecError::BadLength(String::from_utf8_lossy(&line).into_owned())
        });
    }
    line.pop();
    if line.last() == Some(&b'\r') {
        line.pop();
    }
    let text = std::str::from_utf8(&line).map_err(|_| CodecError::BadLength("not utf-8".into()))?;
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CodecError::BadLength(text.to_string()));
    }
    let len: usize = text.parse().map_err(|_| CodecError::BadLength(text.to_string()))?;
    if len > MAX_MESSAGE_BYTES {
        return Err(CodecError::TooLarge(len));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CodecError::Truncated,
        _ => CodecError::Io(e),
    })?;
    Ok(Some(body))
}
