use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::sync::OnceLock;
use std::thread::JoinHandle;

use cmq_bridge::{decode_reply, read_message, write_message, Reply, Request, RequestBody, Session};
use cmq_core::env::{EnvConfig, LbfConfig};
use cmq_core::runio::{Checkpoint, RunConfig};
use cmq_core::training::{ModelConfig, TrainConfig, Trainer};

/// A briefly trained small model, so policies are not uniform.
pub fn checkpoint() -> Checkpoint {
    static CACHE: OnceLock<Checkpoint> = OnceLock::new();
    CACHE.get_or_init(train).clone()
}

fn train() -> Checkpoint {
    let config = RunConfig {
        env: EnvConfig::Lbf(LbfConfig {
            grid_w: 6,
            grid_h: 6,
            episode_limit: 20,
            ..LbfConfig::default()
        }),
        model: ModelConfig {
            concepts: 4,
            embed: 8,
            attn: 8,
            bias_hidden: 8,
            agent_hidden: 16,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            batch_size: 4,
            warmup_episodes: 4,
            eval_interval: 1000,
            eval_episodes: 2,
            ..TrainConfig::default()
        },
        seeds: vec![0],
    };
    let mut t = Trainer::new(config.env.clone(), config.model, config.train.clone(), 11).unwrap();
    t.run_until(300, |_| {}).unwrap();
    Checkpoint {
        config,
        state: t.state(),
    }
}

pub struct Client {
    r: BufReader<TcpStream>,
    w: BufWriter<TcpStream>,
    next_id: u64,
}

impl Client {
    pub fn send_raw(&mut self, body: &[u8]) {
        write_message(&mut self.w, body).unwrap();
    }

    pub fn recv(&mut self) -> (Option<u64>, Reply) {
        let bytes = read_message(&mut self.r).unwrap().expect("reply");
        decode_reply(&bytes).unwrap()
    }

    pub fn call(&mut self, body: RequestBody) -> Reply {
        self.next_id += 1;
        let id = self.next_id;
        self.send_raw(&Request::new(Some(id), body).encode());
        let (got, reply) = self.recv();
        assert_eq!(got, Some(id));
        reply
    }
}

/// Serves one client on an ephemeral port.
pub fn start(session: Session) -> (Client, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        cmq_bridge::serve(listener, move || session.clone(), Some(1)).unwrap();
    });
    let stream = TcpStream::connect(addr).unwrap();
    let client = Client {
        r: BufReader::new(stream.try_clone().unwrap()),
        w: BufWriter::new(stream),
        next_id: 0,
    };
    (client, handle)
}
