use std::fmt::Display;

use super::{AutodiffError, NodeId, Tape};
use crate::nets::{BoundParams, ParamSet};

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all coordinates.
    pub max_relative_error: f64,
    /// Coordinate attaining the maximum, as `name[index]`.
    pub worst: Option<String>,
    pub coordinates: usize,
}

fn evaluate<F, E>(f: &mut F, params: &ParamSet) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<NodeId, E>,
    E: Display,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = f(&mut tape, &bound).map_err(|e| AutodiffError::Other(e.to_string()))?;
    let v = tape.value(root);
    if !v.is_scalar() {
        return Err(AutodiffError::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Checks the gradient of the scalar function `f` with respect to every
/// coordinate of `params` against central finite differences with step
/// `eps`.
pub fn grad_check<F, E>(
    mut f: F,
    params: &ParamSet,
    eps: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<NodeId, E>,
    E: Display,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::Other(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = f(&mut tape, &bound).map_err(|e| AutodiffError::Other(e.to_string()))?;
    let grads = tape.backward(root)?;
    let analytic = bound.gradients(&tape, &grads);

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (name, tensor) in params.iter() {
        let a = &analytic[name];
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            work.get_mut(name).expect("cloned").data_mut()[i] = orig + eps;
            let plus = evaluate(&mut f, &work)?;
            work.get_mut(name).expect("cloned").data_mut()[i] = orig - eps;
            let minus = evaluate(&mut f, &work)?;
            work.get_mut(name).expect("cloned").data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(AutodiffError::NonFinite {
                    coordinate: format!("{name}[{i}]"),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some(format!("{name}[{i}]"));
            }
        }
    }
    Ok(report)
}
