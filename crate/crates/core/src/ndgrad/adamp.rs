//! Adam with projection (AdamP).
//!
//! Bias-corrected Adam moments. For parameter blocks of rank > 1 the update
//! is tested for scale invariance: when the gradient is nearly orthogonal to
//! the weights (per output channel, then for the whole layer) the radial
//! component of the update is removed. Blocks that fail the test take the
//! plain Adam step.

use serde::{Deserialize, Serialize};

use super::{GradError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamPConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Enables the radial projection for rank > 1 blocks.
    pub projection: bool,
    /// Cosine threshold numerator; the test is `max |cos| < delta / sqrt(dim)`.
    pub delta: f64,
}

impl AdamPConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamPConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            projection: true,
            delta: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamPState {
    pub config: AdamPConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

/// What happened on one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// Number of blocks whose update was projected.
    pub projected_blocks: usize,
}

impl AdamPState {
    pub fn new(config: AdamPConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update in place. On error neither `params` nor the state change.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepInfo, GradError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(GradError::Shape(format!(
                "optimizer tracks {} blocks, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(GradError::Shape(format!(
                    "block {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            if !g.is_finite() {
                return Err(GradError::NonFinite("adamp gradient"));
            }
        }

        let cfg = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2_sqrt = (1.0 - cfg.beta2.powi(t)).sqrt();
        let step_size = cfg.lr / bc1;
        let mut info = StepInfo::default();

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let mut perturb = Vec::with_capacity(p.len());
            for ((mi, vi), &gi) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                perturb.push(*mi / (vi.sqrt() / bc2_sqrt + cfg.eps));
            }
            if cfg.projection && p.rank() > 1 && project(p, g, &mut perturb, cfg.delta, cfg.eps) {
                info.projected_blocks += 1;
            }
            for (pi, d) in p.data_mut().iter_mut().zip(&perturb) {
                *pi -= step_size * d;
            }
        }
        Ok(info)
    }
}

/// Removes the radial component of `perturb` when `grad` is nearly
/// orthogonal to `param`. Returns whether the projection fired.
fn project(param: &Tensor, grad: &Tensor, perturb: &mut [f64], delta: f64, eps: f64) -> bool {
    let channels = param.shape()[0];
    let views = [(channels, param.len() / channels), (1, param.len())];
    for (rows, cols) in views {
        let p = param.data();
        let g = grad.data();
        let max_cos = (0..rows)
            .map(|r| {
                let ps = &p[r * cols..(r + 1) * cols];
                let gs = &g[r * cols..(r + 1) * cols];
                let pn = norm(ps);
                let gn = norm(gs);
                let dot: f64 = ps.iter().zip(gs).map(|(a, b)| a * b).sum();
                (dot / (pn.max(eps) * gn.max(eps))).abs()
            })
            .fold(0.0, f64::max);
        if max_cos < delta / (cols as f64).sqrt() {
            for r in 0..rows {
                let ps = &p[r * cols..(r + 1) * cols];
                let inv = 1.0 / (norm(ps) + eps);
                let ds = &mut perturb[r * cols..(r + 1) * cols];
                let radial: f64 = ps.iter().zip(ds.iter()).map(|(a, d)| a * inv * d).sum();
                for (d, a) in ds.iter_mut().zip(ps) {
                    *d -= a * inv * radial;
                }
            }
            return true;
        }
    }
    false
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if total > max_norm && total.is_finite() {
        let factor = max_norm / total;
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![
            Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap(),
            Tensor::vector(vec![1.0, -2.0]),
        ];
        let before = params.clone();
        let grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut state = AdamPState::new(AdamPConfig::default(), &params);
        for _ in 0..3 {
            state.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn first_step_matches_hand_trace() {
        let cfg = AdamPConfig::default();
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamPState::new(cfg, &params);
        state.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        // m = 0.1, v = 0.001, corrected: m/(1-0.9) = 1, sqrt(v/(1-0.999)) = 1.
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert!((params[0].data()[0] - expected).abs() < 1e-18);
        assert!((params[0].data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn repeated_gradient_decreases_monotonically() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamPState::new(AdamPConfig::default(), &params);
        let mut last = 1.0;
        for _ in 0..2 {
            state.step(&mut params, &[Tensor::scalar(0.7)]).unwrap();
            let now = params[0].data()[0];
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamPState::new(AdamPConfig::default(), &params);
        let err = state.step(&mut params, &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(GradError::NonFinite(_))));
        assert_eq!(state.step, 0);
        assert_eq!(params[0].data()[0], 1.0);
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let mut params = vec![Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()];
        let mut state = AdamPState::new(AdamPConfig::default(), &params);
        for k in 0..5 {
            let s = if k % 2 == 0 { 1.0 } else { -3.0 };
            let g = Tensor::new(vec![2, 2], vec![s, -s, 0.5 * s, 0.0]).unwrap();
            state.step(&mut params, &[g]).unwrap();
        }
        assert!(state.second_moments()[0].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn near_orthogonal_gradient_projects_out_radial_update() {
        // Adam normalizes each coordinate, so the tiny radial gradient still
        // yields a unit radial step unless the projection removes it.
        let w = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::new(vec![1, 4], vec![0.01, 1.0, 0.0, 0.0]).unwrap();

        let mut projected = vec![w.clone()];
        let mut state = AdamPState::new(AdamPConfig::default(), &projected);
        let info = state.step(&mut projected, &[g.clone()]).unwrap();
        assert_eq!(info.projected_blocks, 1);
        assert!((projected[0].data()[0] - 1.0).abs() < 1e-9);

        let mut plain = vec![w];
        let cfg = AdamPConfig {
            projection: false,
            ..AdamPConfig::default()
        };
        let mut adam = AdamPState::new(cfg, &plain);
        let info = adam.step(&mut plain, &[g]).unwrap();
        assert_eq!(info.projected_blocks, 0);
        assert!((plain[0].data()[0] - (1.0 - cfg.lr)).abs() < 1e-9);
    }

    #[test]
    fn aligned_gradient_is_not_projected() {
        let w = Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut params = vec![w];
        let mut state = AdamPState::new(AdamPConfig::default(), &params);
        let g = Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(state.step(&mut params, &[g]).unwrap().projected_blocks, 0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut grads = vec![Tensor::vector(vec![30.0, 40.0]), Tensor::scalar(0.0)];
        let before = clip_global_norm(&mut grads, 10.0);
        assert!((before - 50.0).abs() < 1e-12);
        let after: f64 = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        assert!((after - 10.0).abs() < 1e-12);
    }
}
