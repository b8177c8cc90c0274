//! Central finite-difference verification of analytic gradients.
//!
//! The harness re-evaluates the loss from scratch for every perturbed
//! coordinate, so it is independent of the backward implementation it
//! checks. It runs in `f64`; the required tolerances are unattainable in
//! 32-bit arithmetic.

use super::{ParamId, ParamSet, Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < rel_tol
    }
}

/// Compares the gradients currently stored in `params` (filled by a
/// backward pass the caller ran) against central finite differences of
/// `loss_fn` with step `eps`, over the listed parameters.
///
/// Coordinates where both gradients are below `1e-7` in magnitude are
/// counted but not ratioed; everything else contributes
/// `|analytic - numeric| / max(|analytic|, |numeric|)`.
pub fn check_gradients<F>(
    params: &ParamSet<f64>,
    ids: &[ParamId],
    eps: f64,
    loss_fn: F,
) -> GradCheckReport
where
    F: Fn(&ParamSet<f64>) -> f64,
{
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    for &id in ids {
        let len = params.get(id).value.len();
        for i in 0..len {
            let original = params.get(id).value.data()[i];
            work.get_mut(id).value.data_mut()[i] = original + eps;
            let plus = loss_fn(&work);
            work.get_mut(id).value.data_mut()[i] = original - eps;
            let minus = loss_fn(&work);
            work.get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = params.get(id).grad.data()[i];
            let abs = (analytic - numeric).abs();
            report.max_abs_err = report.max_abs_err.max(abs);
            report.checked += 1;
            if analytic.abs() < 1e-7 && numeric.abs() < 1e-7 {
                continue;
            }
            let rel = abs / analytic.abs().max(numeric.abs());
            report.max_rel_err = report.max_rel_err.max(rel);
        }
    }
    report
}

/// Deterministic pseudo-random tensor fill for test fixtures; values in
/// `(-0.5, 0.5)`, reproducible from the seed alone.
pub fn seeded_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    for v in t.data_mut() {
        // splitmix64
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        *v = T::from_f64((z >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
    }
    t
}
