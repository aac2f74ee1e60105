//! Line-delimited episode traces and the companion embedding table.
//!
//! The first line is a header; every following line is one decision.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_at, io_at, RunIoError};
use crate::env::{EnvConfig, LBF_CONCEPT_NAMES};
use crate::mixer::{InterventionMask, MixerKind};
use crate::nets::ParamSet;
use crate::training::{Decision, Inspector, Model};

pub const TRACE_SCHEMA: &str = "cmq-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub schema: String,
    pub mixer: MixerKind,
    pub n_agents: usize,
    pub concepts: usize,
    /// Names of the supervised concepts; the rest are free.
    pub concept_names: Vec<String>,
    pub seed: u64,
    pub intervention: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub p_pred: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub q_tot: f64,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TraceLine {
    Header(TraceHeader),
    Step(TraceRecord),
}

pub fn parse_trace_line(line: &str) -> Result<TraceLine, RunIoError> {
    serde_json::from_str(line).map_err(|e| RunIoError::Record(e.to_string()))
}

/// Mixed concept embeddings of one decision, `[K][m]`.
pub type Embeddings = Vec<Vec<f64>>;

fn record(d: &Decision) -> (TraceRecord, Embeddings) {
    let v = &d.view;
    let cs = v.concepts.as_ref();
    let pick = |f: fn(&crate::mixer::ConceptState) -> &Vec<f64>| cs.map(f).cloned().unwrap_or_default();
    (
        TraceRecord {
            t: v.t,
            state: v.state.clone(),
            q: v.q.clone(),
            actions: v.actions.clone(),
            reward: d.reward,
            p_pred: pick(|c| &c.p_pred),
            p: pick(|c| &c.p),
            alpha: pick(|c| &c.alpha),
            q_hat: pick(|c| &c.q_hat),
            q_tot: v.q_tot,
            labels: v.labels.clone(),
        },
        cs.map(|c| c.mixed.clone()).unwrap_or_default(),
    )
}

/// Plays one greedy episode under `mask` and records every decision.
pub fn trace_episode(
    model: &Model,
    params: &ParamSet,
    env: &EnvConfig,
    seed: u64,
    mask: &InterventionMask,
) -> Result<(TraceHeader, Vec<TraceRecord>, Vec<Embeddings>), RunIoError> {
    let mut ins = Inspector::new(*model, params.clone(), env, seed)?;
    ins.set_mask(mask.clone())?;
    let decisions = ins.run_episode()?;
    let supervised = model.supervised;
    let names = match env {
        EnvConfig::Lbf(_) => LBF_CONCEPT_NAMES[..supervised].iter().map(|s| s.to_string()).collect(),
        EnvConfig::Matrix(_) => Vec::new(),
    };
    let header = TraceHeader {
        schema: TRACE_SCHEMA.into(),
        mixer: model.kind,
        n_agents: model.agent.n_agents,
        concepts: if model.kind == MixerKind::Cmq { model.mixer.concepts } else { 0 },
        concept_names: names,
        seed,
        intervention: mask.iter().collect(),
    };
    let (records, embeds) = decisions.iter().map(record).unzip();
    Ok((header, records, embeds))
}

/// Writes the trace to `trace_path` and, when given, the embedding table
/// (`t,concept,e0,...`) to `embed_path`.
pub fn export_trace(
    trace_path: &Path,
    embed_path: Option<&Path>,
    header: &TraceHeader,
    records: &[TraceRecord],
    embeds: &[Embeddings],
) -> Result<(), RunIoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(trace_path).map_err(io_at(trace_path))?);
    let json = |l: TraceLine| serde_json::to_string(&l).map_err(|e| RunIoError::Record(e.to_string()));
    writeln!(w, "{}", json(TraceLine::Header(header.clone()))?).map_err(io_at(trace_path))?;
    for r in records {
        writeln!(w, "{}", json(TraceLine::Step(r.clone()))?).map_err(io_at(trace_path))?;
    }
    w.flush().map_err(io_at(trace_path))?;

    if let Some(p) = embed_path {
        let map = csv_at(p);
        let mut w = csv::Writer::from_path(p).map_err(&map)?;
        let m = embeds.iter().flatten().map(Vec::len).max().unwrap_or(0);
        let mut head = vec!["t".to_string(), "concept".to_string()];
        head.extend((0..m).map(|j| format!("e{j}")));
        w.write_record(&head).map_err(&map)?;
        for (t, step) in embeds.iter().enumerate() {
            for (k, e) in step.iter().enumerate() {
                let mut rec = vec![t.to_string(), k.to_string()];
                rec.extend(e.iter().map(f64::to_string));
                w.write_record(&rec).map_err(&map)?;
            }
        }
        w.flush().map_err(io_at(p))?;
    }
    Ok(())
}
