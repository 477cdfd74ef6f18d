//! Adam with bias correction and global gradient-norm clipping.

use super::store::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over every parameter's gradient slot, then
/// zeroes the gradients. Nothing is modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParameterStore, lr: f64, cfg: &AdamConfig) -> Result<()> {
    for p in store.params() {
        if let Some(i) = p.grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
                index: i,
                context: String::new(),
            });
        }
    }
    store.bump_step();
    let t = store.step() as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for p in store.params_mut() {
        let g = p.grad.as_slice();
        let m = p.m.as_mut_slice();
        let v = p.v.as_mut_slice();
        let w = p.value.as_mut_slice();
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if exceeds(norm, max_norm) {
        let s = max_norm / norm;
        for p in store.params_mut() {
            p.grad.scale(s);
        }
    }
    norm
}

// A norm already within rounding of the bound is left alone, so clipping twice
// is the same as clipping once.
fn exceeds(norm: f64, max_norm: f64) -> bool {
    norm > max_norm * (1.0 + 1e-12)
}

/// Slice form of [`clip_global_norm`], for gradient sets that are not in a store.
pub fn clip_slices(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if exceeds(norm, max_norm) {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use rand::{Rng, SeedableRng};

    fn scalar_store(theta: f64, g: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        let id = s.add("theta", Matrix::filled(1, 1, theta)).unwrap();
        s.param_mut(id).grad.set(0, 0, g);
        s
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut s = scalar_store(0.0, 1.0);
        adam_step(&mut s, 0.1, &AdamConfig::default()).unwrap();
        let theta = s.params()[0].value.get(0, 0);
        assert!((theta + 0.1).abs() < 1e-8, "theta = {theta}");
        assert_eq!(s.params()[0].grad.get(0, 0), 0.0);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7, 0.0);
        for _ in 0..5 {
            adam_step(&mut s, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.params()[0].value.get(0, 0), 0.7);
        assert_eq!(s.step(), 5);
    }

    #[test]
    fn matches_recurrence_transcription() {
        // Independent transcription of the Adam recurrence, three steps at g = 1.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut m, mut v, mut th) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        let mut s = scalar_store(0.0, 1.0);
        for _ in 0..3 {
            s.params_mut()[0].grad.set(0, 0, 1.0);
            adam_step(&mut s, lr, &AdamConfig::default()).unwrap();
        }
        assert!((s.params()[0].value.get(0, 0) - th).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = scalar_store(1.0, f64::NAN);
        let err = adam_step(&mut s, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref param, .. } if param == "theta"));
        assert_eq!(s.params()[0].value.get(0, 0), 1.0);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn clip_three_four_five() {
        let mut g = [3.0, 4.0];
        let n = clip_slices(&mut [&mut g[..]], 0.5);
        assert_eq!(n, 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn clip_below_threshold_unchanged() {
        let mut g = [0.1, 0.1];
        let n = clip_slices(&mut [&mut g[..]], 0.5);
        assert!((n - 0.1414213562).abs() < 1e-9);
        assert_eq!(g, [0.1, 0.1]);
    }

    #[test]
    fn clip_random_preserves_direction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let orig: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = ParameterStore::new();
        s.add("a", Matrix::zeros(1, 600)).unwrap();
        s.add("b", Matrix::zeros(400, 1)).unwrap();
        s.params_mut()[0]
            .grad
            .as_mut_slice()
            .copy_from_slice(&orig[..600]);
        s.params_mut()[1]
            .grad
            .as_mut_slice()
            .copy_from_slice(&orig[600..]);
        let pre = clip_global_norm(&mut s, 0.5);
        let post: Vec<f64> = s
            .params()
            .iter()
            .flat_map(|p| p.grad.as_slice().to_vec())
            .collect();
        let pn = post.iter().map(|x| x * x).sum::<f64>().sqrt();
        let on = orig.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((pre - on).abs() < 1e-12);
        assert!(pn <= 0.5 + 1e-12);
        let cos = post.iter().zip(&orig).map(|(a, b)| a * b).sum::<f64>() / (pn * on);
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_empty_returns_zero() {
        let mut s = ParameterStore::new();
        assert_eq!(clip_global_norm(&mut s, 0.5), 0.0);
        assert_eq!(clip_slices(&mut [], 0.5), 0.0);
    }

    #[test]
    fn clip_is_idempotent() {
        let mut s = ParameterStore::new();
        s.add("a", Matrix::zeros(1, 3)).unwrap();
        s.params_mut()[0]
            .grad
            .as_mut_slice()
            .copy_from_slice(&[2.0, -7.0, 1.5]);
        clip_global_norm(&mut s, 0.5);
        let once = s.params()[0].grad.clone();
        clip_global_norm(&mut s, 0.5);
        assert_eq!(s.params()[0].grad, once);
    }
}
