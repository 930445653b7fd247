//! Finite-difference verification of tape gradients.
//!
//! The checker rebuilds the graph from scratch for every probe, so it works
//! for any closure that maps input tensors to a scalar loss — including the
//! full model forward pass. Cost is two forward evaluations per input
//! coordinate; keep the configuration small.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    /// Input index, coordinate, analytic value, numeric value at the worst
    /// coordinate; `None` when there were no coordinates to check.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compare tape gradients against central differences.
///
/// `build` must record the same computation every time it is called: it gets
/// a fresh tape plus one differentiable leaf per input tensor and returns the
/// scalar loss. Central differences with step `eps` are taken for every
/// coordinate of every input.
pub fn grad_check<F>(inputs: &[Tensor], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<_>>()?;
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect();

    // Numeric probes.
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for c in 0..input.numel() {
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + eps;
            let plus = run(&probe)?;
            probe[i].data_mut()[c] = orig - eps;
            let minus = run(&probe)?;
            probe[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[c];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((i, c, a, numeric));
            }
        }
    }
    Ok(report)
}
