use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, RecvTimeoutError};

use crate::codec::{read_message, write_message, CodecError};
use crate::protocol::{decode_request, encode_reply, ErrorCode, Reply};
use crate::session::Session;

enum Incoming {
    Message(Vec<u8>),
    Broken(CodecError),
}

/// Serves one client until it disconnects. Messages are handled strictly
/// in arrival order; in auto mode a frame is pushed after each interval.
pub fn handle_client(stream: TcpStream, mut session: Session) -> std::io::Result<()> {
    let (tx, rx) = mpsc::channel();
    let read_half = stream.try_clone()?;
    let reader = std::thread::spawn(move || {
        let mut r = BufReader::new(read_half);
        loop {
            match read_message(&mut r) {
                Ok(Some(m)) => {
                    if tx.send(Incoming::Message(m)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Incoming::Broken(e));
                    break;
                }
            }
        }
    });
    let mut out = BufWriter::new(stream.try_clone()?);
    let result = (|| loop {
        let next = match session.auto_interval() {
            Some(d) => match rx.recv_timeout(d) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return Ok(()),
            },
            None => match rx.recv() {
                Ok(m) => Some(m),
                Err(_) => return Ok(()),
            },
        };
        match next {
            None => {
                if let Some(reply) = session.tick() {
                    write_message(&mut out, &encode_reply(None, &reply))?;
                }
            }
            Some(Incoming::Message(bytes)) => {
                let (id, reply) = match decode_request(&bytes) {
                    Ok(req) => (req.id, session.handle(&req)),
                    Err((id, e)) => (id, Reply::Error(e)),
                };
                write_message(&mut out, &encode_reply(id, &reply))?;
            }
            Some(Incoming::Broken(e)) => {
                let reply = Reply::error(ErrorCode::Parse, format!("{e}; closing connection"));
                write_message(&mut out, &encode_reply(None, &reply))?;
                return Ok(());
            }
        }
    })();
    let _ = stream.shutdown(std::net::Shutdown::Both);
    let _ = reader.join();
    result
}

/// Accepts clients one at a time, each with a fresh session from
/// `make_session`. Stops after `max_clients` clients when given.
pub fn serve(
    listener: TcpListener,
    mut make_session: impl FnMut() -> Session,
    max_clients: Option<usize>,
) -> std::io::Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        if let Err(e) = handle_client(stream, make_session()) {
            eprintln!("client error: {e}");
        }
        served += 1;
        if max_clients.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}
