//! Adam with bias correction and optional global-norm gradient clipping.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::TrainConfig;

/// First and second moment estimates, one pair per trainable tensor in the
/// canonical parameter order, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    /// Zero moments shaped after the given parameters.
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.for_each(&mut |_, t| m.push(Tensor::zeros(t.shape())));
        OptimizerState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One Adam update in place.
///
/// `grads` must line up with the canonical parameter order (as produced by
/// walking the bound parameters after `backward`). When `grad_clip_norm` is
/// set and the global L2 norm across *all* gradients exceeds it, every
/// gradient is scaled down to that norm before the moments see it — the
/// moments must track what was actually applied, not the raw gradient.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    let n = params.num_tensors();
    if grads.len() != n || state.m.len() != n {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![n],
            rhs: vec![grads.len(), state.m.len()],
        });
    }

    let mut sq_norm = 0.0;
    let mut names = Vec::with_capacity(n);
    params.for_each(&mut |name, _| names.push(name));
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient for {}", names[i]),
            });
        }
        sq_norm += g.data().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq_norm.sqrt();
    let scale = match cfg.grad_clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);

    let mut i = 0usize;
    let mut status = Ok(());
    params.for_each_mut(&mut |_, p| {
        if status.is_err() {
            return;
        }
        let g = &grads[i];
        if g.shape() != p.shape() {
            status = Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
            return;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for (j, &graw) in g.data().iter().enumerate() {
            let gc = graw * scale;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gc;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gc * gc;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pd[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        i += 1;
    });
    status
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_params() -> ModelParams {
        // smallest structurally valid model: every tensor participates
        ModelParams::init(&ModelConfig {
            t: 4,
            n_f: 1,
            c: 2,
            l_e: 0,
            l_d: 0,
            h: 1,
            k: 1,
            n_a: 1,
            c_cls: 1,
            ffn_width: 2,
            seed: 0,
        })
        .unwrap()
    }

    fn grads_like(params: &ModelParams, fill: f64) -> Vec<Tensor> {
        let mut out = Vec::new();
        params.for_each(&mut |_, t| out.push(Tensor::full(t.shape(), fill)));
        out
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_almost_lr() {
        let mut params = tiny_params();
        let before = params.input.w.at(&[0, 0]);
        let grads = grads_like(&params, 1.0);
        let mut state = OptimizerState::new(&params);
        let cfg = TrainConfig {
            grad_clip_norm: None,
            ..TrainConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        // m̂ = v̂ = 1 exactly on the first unit-gradient step
        let want = before - cfg.learning_rate / (1.0 + cfg.eps);
        assert!((params.input.w.at(&[0, 0]) - want).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn two_steps_match_the_closed_form() {
        // single-coordinate hand computation with g1 = 1, g2 = 2
        let mut params = tiny_params();
        let x0 = params.queries.at(&[0, 0]);
        let cfg = TrainConfig {
            grad_clip_norm: None,
            ..TrainConfig::default()
        };
        let mut state = OptimizerState::new(&params);
        let (ones, twos) = (grads_like(&params, 1.0), grads_like(&params, 2.0));
        adam_step(&mut params, &ones, &mut state, &cfg).unwrap();
        adam_step(&mut params, &twos, &mut state, &cfg).unwrap();

        let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.eps);
        let m1 = (1.0 - b1) * 1.0;
        let v1 = (1.0 - b2) * 1.0;
        let x1 = x0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * 2.0;
        let v2 = b2 * v1 + (1.0 - b2) * 4.0;
        let x2 = x1
            - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((params.queries.at(&[0, 0]) - x2).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_from_fresh_state_changes_nothing() {
        let mut params = tiny_params();
        let snapshot = params.clone();
        let mut state = OptimizerState::new(&params);
        let zeros = grads_like(&params, 0.0);
        adam_step(&mut params, &zeros, &mut state, &TrainConfig::default()).unwrap();
        assert!(state.m.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(params.queries.data(), snapshot.queries.data());
        assert_eq!(params.input.w.data(), snapshot.input.w.data());
        assert_eq!(state.step, 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        // after one real step, a zero-gradient step decays m by β1 and the
        // surviving momentum still nudges the parameters — Adam coasts
        let mut params = tiny_params();
        let mut state = OptimizerState::new(&params);
        let cfg = TrainConfig {
            grad_clip_norm: None,
            ..TrainConfig::default()
        };
        let (ones, zeros) = (grads_like(&params, 1.0), grads_like(&params, 0.0));
        adam_step(&mut params, &ones, &mut state, &cfg).unwrap();
        let after_one = params.queries.at(&[0, 0]);
        let m_before = state.m[0].at(&[0, 0]);
        adam_step(&mut params, &zeros, &mut state, &cfg).unwrap();
        assert!((state.m[0].at(&[0, 0]) - 0.9 * m_before).abs() < 1e-15);
        let delta = (params.queries.at(&[0, 0]) - after_one).abs();
        assert!(delta > 0.0 && delta < cfg.learning_rate * 2.0);
    }

    #[test]
    fn clipping_scales_the_whole_gradient_before_the_moments() {
        let mut params = tiny_params();
        let mut grads = grads_like(&params, 0.0);
        // put all the mass in one coordinate for an exact norm
        grads[0].data_mut()[0] = 5.0;
        let mut state = OptimizerState::new(&params);
        let cfg = TrainConfig {
            grad_clip_norm: Some(0.5),
            ..TrainConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        // effective gradient is 0.5, so m = 0.1·0.5, v = 0.001·0.25
        assert!((state.m[0].data()[0] - 0.1 * 0.5).abs() < 1e-15);
        assert!((state.v[0].data()[0] - 0.001 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_rejected_by_name() {
        let mut params = tiny_params();
        let mut grads = grads_like(&params, 0.0);
        grads[0].data_mut()[0] = f64::NAN;
        let mut state = OptimizerState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, &TrainConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("input.w"), "{err}");
    }
}
