//! Central finite-difference check of tape gradients.

use rand::Rng;

use super::store::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `loss_fn` against central differences at
/// `samples` randomly chosen scalar weights (all weights if `samples` is at
/// least the weight count). `loss_fn` must be deterministic.
pub fn fd_gradient_check<F, R>(
    loss_fn: F,
    store: &ParameterStore,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new(store);
    let loss = loss_fn(&mut tape)?;
    let grads = tape.backward(loss)?;

    let mut coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    if samples < coords.len() {
        // partial Fisher-Yates
        for i in 0..samples {
            let j = rng.random_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(samples);
    }

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut t = Tape::new(s);
        let l = loss_fn(&mut t)?;
        Ok(t.scalar(l))
    };

    let mut probe = store.clone();
    let mut entries = Vec::with_capacity(coords.len());
    for (id, i) in coords {
        let orig = store.value(id).as_slice()[i];
        probe.param_mut(id).value.as_mut_slice()[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.param_mut(id).value.as_mut_slice()[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.param_mut(id).value.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.get(id).map_or(0.0, |g| g.as_slice()[i]);
        entries.push(GradCheckEntry {
            param: store.param(id).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use rand::SeedableRng;

    #[test]
    fn quadratic_half_theta_squared() {
        let mut store = ParameterStore::new();
        let id = store.add("theta", Matrix::filled(1, 1, 2.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let report = fd_gradient_check(
            |t| {
                let th = t.param(id);
                let sq = t.mul(th, th)?;
                let s = t.sum_all(sq);
                Ok(t.scale(s, 0.5))
            },
            &store,
            1,
            &mut rng,
        )
        .unwrap();
        let e = &report.entries[0];
        assert!((e.analytic - 2.0).abs() < 1e-15);
        assert!((e.numeric - 2.0).abs() < 1e-6);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParameterStore::new();
        store.add("w", Matrix::filled(2, 2, 0.3)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let report = fd_gradient_check(
            |t| Ok(t.constant(Matrix::filled(1, 1, 4.2))),
            &store,
            10,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.entries.len(), 4);
        for e in &report.entries {
            assert_eq!(e.analytic, 0.0);
            assert_eq!(e.numeric, 0.0);
        }
    }
}
