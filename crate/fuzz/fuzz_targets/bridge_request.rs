#![no_main]

use std::io::Cursor;
use std::sync::OnceLock;

use cmq_bridge::{decode_request, read_message, Session};
use cmq_core::env::{EnvConfig, LbfConfig};
use cmq_core::training::{Model, ModelConfig};
use libfuzzer_sys::fuzz_target;

fn session() -> Session {
    static BASE: OnceLock<Session> = OnceLock::new();
    BASE.get_or_init(|| {
        let env = EnvConfig::Lbf(LbfConfig::default());
        let cfg = ModelConfig {
            concepts: 4,
            embed: 4,
            attn: 4,
            bias_hidden: 4,
            agent_hidden: 8,
            ..ModelConfig::default()
        };
        let model = Model::new(&cfg, &env.info()).unwrap();
        let params = model.init_params(0).unwrap();
        Session::new(model, params, env, 0).unwrap()
    })
    .clone()
}

// Framed stream of requests replayed against a live session.
fuzz_target!(|data: &[u8]| {
    let mut s = session();
    let mut r = Cursor::new(data);
    for _ in 0..64 {
        match read_message(&mut r) {
            Ok(Some(body)) => {
                if let Ok(req) = decode_request(&body) {
                    let _ = s.handle(&req);
                }
            }
            _ => break,
        }
    }
    let _ = decode_request(data);
});
