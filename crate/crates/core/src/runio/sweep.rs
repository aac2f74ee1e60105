//! Concept-count ablation: the same budget trained for several `K`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_at, run_training, RunConfig, RunIoError};
use crate::mixer::MixerKind;
use crate::training::MetricsRow;

/// Learning curve of one `(K, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub concepts: usize,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

/// Aggregate across seeds at one evaluation index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    /// Nominal step: evaluation index times the evaluation interval.
    pub env_steps: u64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

/// Mean with a central 75% band of test returns, aligned by evaluation
/// index and truncated to the shortest curve.
pub fn band(curves: &[&[MetricsRow]], eval_interval: u64) -> Vec<BandPoint> {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mut v: Vec<f64> = curves.iter().map(|c| c[i].mean_test_return).collect();
            v.sort_by(f64::total_cmp);
            BandPoint {
                env_steps: i as u64 * eval_interval,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                lo: quantile(&v, 0.125),
                hi: quantile(&v, 0.875),
                n: v.len(),
            }
        })
        .collect()
}

/// Trains every `(K, seed)` pair under `out/k{K}/seed{seed}` and writes
/// `out/sweep_curves.csv` and `out/sweep_bands.csv`.
pub fn run_sweep(
    base: &RunConfig,
    concepts: &[usize],
    steps: Option<u64>,
    out: &Path,
) -> Result<Vec<SweepCurve>, RunIoError> {
    if base.model.kind != MixerKind::Cmq {
        return Err(RunIoError::Range {
            key: "mixer.kind".into(),
            message: "a concept sweep needs the cmq mixer".into(),
        });
    }
    let mut curves = Vec::new();
    for &k in concepts {
        let mut cfg = base.clone();
        cfg.model.concepts = k;
        for &seed in &base.seeds {
            let dir = out.join(format!("k{k}")).join(format!("seed{seed}"));
            let run = run_training(&cfg, seed, &dir, steps)?;
            curves.push(SweepCurve {
                concepts: k,
                seed,
                rows: run.metrics,
            });
        }
    }
    write_sweep_csv(out, &curves, base.train.eval_interval)?;
    Ok(curves)
}

pub fn write_sweep_csv(out: &Path, curves: &[SweepCurve], eval_interval: u64) -> Result<(), RunIoError> {
    let p = out.join("sweep_curves.csv");
    let mut w = csv::Writer::from_path(&p).map_err(csv_at(&p))?;
    w.write_record(["concepts", "seed", "eval_index", "env_steps", "mean_test_return"])
        .map_err(csv_at(&p))?;
    for c in curves {
        for (i, r) in c.rows.iter().enumerate() {
            w.write_record([
                c.concepts.to_string(),
                c.seed.to_string(),
                i.to_string(),
                r.env_steps.to_string(),
                r.mean_test_return.to_string(),
            ])
            .map_err(csv_at(&p))?;
        }
    }
    w.flush().map_err(|e| RunIoError::io(&p, e))?;

    let p = out.join("sweep_bands.csv");
    let mut w = csv::Writer::from_path(&p).map_err(csv_at(&p))?;
    w.write_record(["concepts", "env_steps", "mean", "q12_5", "q87_5", "n"])
        .map_err(csv_at(&p))?;
    let mut ks: Vec<usize> = curves.iter().map(|c| c.concepts).collect();
    ks.dedup();
    for k in ks {
        let group: Vec<&[MetricsRow]> = curves
            .iter()
            .filter(|c| c.concepts == k)
            .map(|c| c.rows.as_slice())
            .collect();
        for b in band(&group, eval_interval) {
            w.write_record([
                k.to_string(),
                b.env_steps.to_string(),
                b.mean.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.n.to_string(),
            ])
            .map_err(csv_at(&p))?;
        }
    }
    w.flush().map_err(|e| RunIoError::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[f64]) -> Vec<MetricsRow> {
        v.iter()
            .map(|&r| MetricsRow {
                env_steps: 0,
                episodes: 0,
                mean_test_return: r,
                loss: None,
                epsilon: 1.0,
                concept_p_mean: vec![],
                concept_accuracy: None,
            })
            .collect()
    }

    #[test]
    fn band_matches_hand_quantiles() {
        let a = rows(&[0.0, 1.0]);
        let b = rows(&[2.0, 1.0, 9.0]);
        let c = rows(&[4.0, 1.0]);
        let d = rows(&[6.0, 1.0]);
        let out = band(&[&a, &b, &c, &d], 100);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].env_steps, 100);
        assert_eq!(out[0].mean, 3.0);
        // sorted 0,2,4,6; 0.125·3 = 0.375 → 0.75; 0.875·3 = 2.625 → 5.25
        assert!((out[0].lo - 0.75).abs() < 1e-12);
        assert!((out[0].hi - 5.25).abs() < 1e-12);
        assert_eq!((out[1].lo, out[1].hi, out[1].n), (1.0, 1.0, 4));
    }

    #[test]
    fn single_curve_band_is_degenerate() {
        let a = rows(&[0.5]);
        let out = band(&[&a], 10);
        assert_eq!((out[0].mean, out[0].lo, out[0].hi), (0.5, 0.5, 0.5));
    }
}
