use std::collections::BTreeMap;

use cmq_core::env::{AgentCell, FoodCell};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Version carried in every message as `"v"`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum RequestBody {
    Reset { seed: u64 },
    Step,
    Auto { ms_per_step: u64 },
    Pause,
    /// Concept index to forced probability; merged into the current mask.
    Intervene { set: BTreeMap<usize, f64> },
    ClearInterventions,
    GetState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: Option<u64>,
    pub body: RequestBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Paused,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub agents: Vec<AgentCell>,
    pub foods: Vec<FoodCell>,
}

/// Snapshot of the current state and the decision the policy will take
/// from it under the active interventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub seed: u64,
    pub t: usize,
    pub mode: Mode,
    pub grid: Option<Grid>,
    pub state: Vec<f64>,
    /// Per-agent utilities at the current state.
    pub q: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub p_pred: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub q_pos: Vec<f64>,
    pub q_neg: Vec<f64>,
    pub q_tot: f64,
    pub labels: Vec<f64>,
    pub interventions: BTreeMap<usize, f64>,
    pub last_actions: Option<Vec<usize>>,
    pub last_reward: Option<f64>,
    pub episode_return: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Parse,
    Schema,
    Range,
    EpisodeOver,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Frame(Frame),
    Ack {
        mode: Mode,
        interventions: BTreeMap<usize, f64>,
    },
    Error(ErrorReply),
}

impl Reply {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Reply::Error(ErrorReply {
            code,
            message: message.into(),
        })
    }
}

fn split_envelope(bytes: &[u8]) -> Result<(Option<u64>, Map<String, Value>), ErrorReply> {
    let err = |code, message: String| ErrorReply { code, message };
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| err(ErrorCode::Parse, e.to_string()))?;
    let Value::Object(mut map) = value else {
        return Err(err(ErrorCode::Parse, "message must be a JSON object".into()));
    };
    match map.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(u64::from(SCHEMA_VERSION)) => {}
        Some(v) => {
            return Err(err(
                ErrorCode::Schema,
                format!("schema version {v} not supported (expected {SCHEMA_VERSION})"),
            ))
        }
        None => return Err(err(ErrorCode::Schema, "missing schema version \"v\"".into())),
    }
    let id = match map.remove("id") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) if n.as_u64().is_some() => n.as_u64(),
        Some(v) => return Err(err(ErrorCode::Parse, format!("id must be an unsigned integer, got {v}"))),
    };
    Ok((id, map))
}

fn join_envelope(id: Option<u64>, body: Value) -> Vec<u8> {
    let mut map = match body {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("body".into(), other);
            m
        }
    };
    map.insert("v".into(), SCHEMA_VERSION.into());
    if let Some(id) = id {
        map.insert("id".into(), id.into());
    }
    serde_json::to_vec(&Value::Object(map)).expect("json values always serialize")
}

// Integer map keys only decode from text, not from a `Value`.
fn from_map<T: serde::de::DeserializeOwned>(map: Map<String, Value>) -> serde_json::Result<T> {
    serde_json::from_slice(&serde_json::to_vec(&Value::Object(map))?)
}

fn parse_err(message: impl Into<String>) -> ErrorReply {
    ErrorReply {
        code: ErrorCode::Parse,
        message: message.into(),
    }
}

fn take_tag(map: &mut Map<String, Value>, tag: &str) -> Result<String, ErrorReply> {
    match map.remove(tag) {
        Some(Value::String(s)) => Ok(s),
        Some(v) => Err(parse_err(format!("\"{tag}\" must be a string, got {v}"))),
        None => Err(parse_err(format!("missing \"{tag}\""))),
    }
}

fn no_fields(map: Map<String, Value>, what: &str) -> Result<(), ErrorReply> {
    match map.keys().next() {
        None => Ok(()),
        Some(k) => Err(parse_err(format!("unknown field \"{k}\" for {what}"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetArgs {
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AutoArgs {
    ms_per_step: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterveneArgs {
    set: BTreeMap<usize, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AckArgs {
    mode: Mode,
    interventions: BTreeMap<usize, f64>,
}

fn body_of(mut map: Map<String, Value>) -> Result<RequestBody, ErrorReply> {
    let cmd = take_tag(&mut map, "cmd")?;
    let args = |e: serde_json::Error| parse_err(format!("{cmd}: {e}"));
    Ok(match cmd.as_str() {
        "reset" => RequestBody::Reset {
            seed: from_map::<ResetArgs>(map).map_err(args)?.seed,
        },
        "auto" => RequestBody::Auto {
            ms_per_step: from_map::<AutoArgs>(map).map_err(args)?.ms_per_step,
        },
        "intervene" => RequestBody::Intervene {
            set: from_map::<InterveneArgs>(map).map_err(args)?.set,
        },
        "step" | "pause" | "clear_interventions" | "get_state" => {
            no_fields(map, &cmd)?;
            match cmd.as_str() {
                "step" => RequestBody::Step,
                "pause" => RequestBody::Pause,
                "clear_interventions" => RequestBody::ClearInterventions,
                _ => RequestBody::GetState,
            }
        }
        other => return Err(parse_err(format!("unknown command {other:?}"))),
    })
}

/// Parses a request. On failure the error carries the request id when one
/// could be read.
pub fn decode_request(bytes: &[u8]) -> Result<Request, (Option<u64>, ErrorReply)> {
    let (id, map) = split_envelope(bytes).map_err(|e| (None, e))?;
    let body = body_of(map).map_err(|e| (id, e))?;
    Ok(Request { id, body })
}

pub fn encode_request(req: &Request) -> Vec<u8> {
    join_envelope(req.id, serde_json::to_value(&req.body).expect("request serializes"))
}

pub fn encode_reply(id: Option<u64>, reply: &Reply) -> Vec<u8> {
    join_envelope(id, serde_json::to_value(reply).expect("reply serializes"))
}

pub fn decode_reply(bytes: &[u8]) -> Result<(Option<u64>, Reply), ErrorReply> {
    let (id, mut map) = split_envelope(bytes)?;
    let kind = take_tag(&mut map, "type")?;
    let err = |e: serde_json::Error| parse_err(format!("{kind}: {e}"));
    let reply = match kind.as_str() {
        "frame" => Reply::Frame(from_map(map).map_err(err)?),
        "ack" => {
            let a: AckArgs = from_map(map).map_err(err)?;
            Reply::Ack {
                mode: a.mode,
                interventions: a.interventions,
            }
        }
        "error" => Reply::Error(from_map(map).map_err(err)?),
        other => return Err(parse_err(format!("unknown reply type {other:?}"))),
    };
    Ok((id, reply))
}

impl Request {
    pub fn new(id: Option<u64>, body: RequestBody) -> Self {
        Self { id, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_request(self)
    }
}
