use std::path::{Path, PathBuf};

use super::{
    config_to_toml, load_checkpoint, save_checkpoint, write_metrics_csv, Checkpoint, MetricsWriter,
    RunConfig, RunIoError, RunLock,
};
use crate::training::{MetricsRow, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
}

fn drive(
    dir: &Path,
    config: RunConfig,
    mut trainer: Trainer,
    steps: u64,
) -> Result<RunOutcome, RunIoError> {
    let mut log = MetricsWriter::create(&dir.join(METRICS_JSONL), trainer.metrics())?;
    let mut write_err = None;
    let mut sink = |row: &MetricsRow| {
        if write_err.is_none() {
            write_err = log.push(row).err();
        }
    };
    trainer.run_until(steps, &mut sink)?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let checkpoint = Checkpoint {
        config,
        state: trainer.state(),
    };
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &checkpoint)?;
    write_metrics_csv(&dir.join(METRICS_CSV), trainer.metrics())?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        metrics: trainer.metrics().to_vec(),
        checkpoint,
    })
}

/// Trains one seed into `dir` until `steps` (default: the configured total).
///
/// Writes `config.toml`, `metrics.jsonl`, `metrics.csv` and `checkpoint.bin`.
pub fn run_training(
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
    steps: Option<u64>,
) -> Result<RunOutcome, RunIoError> {
    let _lock = RunLock::acquire(dir)?;
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config_to_toml(cfg)?).map_err(|e| RunIoError::io(&cfg_path, e))?;
    let trainer = Trainer::new(cfg.env.clone(), cfg.model, cfg.train.clone(), seed)?;
    drive(dir, cfg.clone(), trainer, steps.unwrap_or(cfg.train.total_steps))
}

/// Continues the run stored in `dir` until `steps` environment steps.
pub fn resume_training(dir: &Path, steps: u64) -> Result<RunOutcome, RunIoError> {
    let _lock = RunLock::acquire(dir)?;
    let ckpt = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let trainer = Trainer::from_state(ckpt.state)?;
    drive(dir, ckpt.config, trainer, steps)
}
