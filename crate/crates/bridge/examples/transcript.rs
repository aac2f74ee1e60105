//! Plays a scripted client against a served checkpoint and prints the
//! exchange, one `>` (request) or `<` (reply) line per message.
//!
//! Usage: `transcript <checkpoint> [seed]`

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};

use cmq_bridge::{decode_reply, encode_request, Reply, read_message, write_message, Request, RequestBody, Session};
use cmq_core::runio::load_checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().ok_or("usage: transcript <checkpoint> [seed]")?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;
    let ckpt = load_checkpoint(path.as_ref())?;
    let session = Session::from_checkpoint(&ckpt, seed)?;

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = std::thread::spawn(move || cmq_bridge::serve(listener, move || session.clone(), Some(1)));
    let stream = TcpStream::connect(addr)?;
    let mut r = BufReader::new(stream.try_clone()?);
    let mut w = BufWriter::new(stream);

    let script = [
        RequestBody::Reset { seed },
        RequestBody::Step,
        RequestBody::Intervene {
            set: [(0, 1.0)].into(),
        },
        RequestBody::Step,
        RequestBody::Intervene {
            set: [(0, 1.5)].into(),
        },
        RequestBody::ClearInterventions,
        RequestBody::GetState,
    ];
    // Reads until the reply carrying `id`, or `pushed` unsolicited frames.
    let mut exchange = |body: &[u8], id: Option<u64>, pushed: usize| -> Result<(), Box<dyn std::error::Error>> {
        println!("> {}", String::from_utf8_lossy(body));
        write_message(&mut w, body)?;
        let mut seen = 0;
        loop {
            let reply = read_message(&mut r)?.ok_or("server closed")?;
            println!("< {}", String::from_utf8_lossy(&reply));
            let (got, decoded) = decode_reply(&reply).map_err(|e| e.message)?;
            if got.is_some() && got == id && matches!(decoded, Reply::Error(_)) {
                return Ok(());
            }
            if got.is_none() {
                seen += 1;
            }
            if (got.is_some() && got == id && pushed == 0) || (pushed > 0 && seen == pushed) {
                return Ok(());
            }
        }
    };
    for (i, body) in script.into_iter().enumerate() {
        let id = Some(i as u64 + 1);
        exchange(&encode_request(&Request::new(id, body)), id, 0)?;
    }
    exchange(br#"{"v":1,"id":99,"cmd":"fly"}"#, Some(99), 0)?;
    exchange(&encode_request(&Request::new(Some(100), RequestBody::Auto { ms_per_step: 50 })), None, 2)?;
    exchange(&encode_request(&Request::new(Some(101), RequestBody::Pause)), Some(101), 0)?;
    drop(exchange);
    drop(w);
    drop(r);
    server.join().map_err(|_| "server panicked")??;
    Ok(())
}
