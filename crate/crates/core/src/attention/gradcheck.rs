//! Central finite-difference check of [`Model::backward`].

use super::model::{Model, Objective};
use crate::error::Result;
use crate::geo::Geotoken;

/// Gradients whose analytic and numeric magnitudes both fall below this are
/// compared absolutely instead of relatively.
const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares every analytic gradient entry with `(L(w+h) − L(w−h)) / 2h`.
pub fn gradient_check(
    model: &Model,
    tokens: &[Geotoken],
    masked_self: Option<usize>,
    objective: &Objective,
    step: f64,
) -> Result<GradientReport> {
    let pass = model.forward(tokens, masked_self)?;
    let (_, analytic) = model.backward(&pass, objective)?;
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let len = analytic[t].len();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for i in 0..len {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let plus = probe.loss(tokens, masked_self, objective)?;
            probe.tensors_mut()[t][i] = orig - step;
            let minus = probe.loss(tokens, masked_self, objective)?;
            probe.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[t][i];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < ABS_FLOOR { abs } else { abs / scale };
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        tensors.push(TensorCheck {
            name,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradientReport { step, tensors })
}
