//! Central finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::context::ContextWindow;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, analytic, numeric)
    pub entries: Vec<(usize, f64, f64)>,
}

/// Compares `analytic[i]` with the fourth-order central difference
/// `(8(f(x + h e_i) - f(x - h e_i)) - (f(x + 2h e_i) - f(x - 2h e_i))) / 12h`
/// for every `i` in `indices`. Truncation error is O(h^4), which permits a
/// step large enough that rounding in `f` stays far below small gradients.
pub fn check_gradients<F>(f: F, x: &[f64], analytic: &[f64], indices: &[usize], step: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut entries = Vec::with_capacity(indices.len());
    let mut worst = 0.0f64;
    for &i in indices {
        let mut at = |k: f64| {
            probe[i] = x[i] + k * step;
            f(&probe)
        };
        let near = at(1.0) - at(-1.0);
        let far = at(2.0) - at(-2.0);
        probe[i] = x[i];
        let numeric = (8.0 * near - far) / (12.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
        entries.push((i, analytic[i], numeric));
    }
    GradCheckReport {
        max_relative_error: worst,
        entries,
    }
}

fn mean_loss(model: &Model<f64>, window: &ContextWindow) -> f64 {
    let dists = model.forward(window).expect("window validated by caller");
    super::cross_entropy(&dists, &window.targets).unwrap() / window.targets.len() as f64
}

/// Checks the gradient of the mean cross-entropy of `window` on `samples`
/// randomly chosen parameters (double precision).
pub fn grad_check(model: &Model<f64>, window: &ContextWindow, samples: usize, seed: u64) -> Result<GradCheckReport> {
    if window.targets.is_empty() {
        return Err(Error::InvalidArgument("window has no targets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.param_count();
    let indices = sample(&mut rng, n, samples.min(n)).into_vec();
    grad_check_at(model, window, &indices)
}

pub fn grad_check_at(model: &Model<f64>, window: &ContextWindow, indices: &[usize]) -> Result<GradCheckReport> {
    let mut grads = vec![0.0; model.param_count()];
    model.loss_and_grad(window, 1.0 / window.targets.len() as f64, &mut grads)?;
    let config = *model.config();
    let f = |p: &[f64]| {
        let probe = Model::from_params(config, p.to_vec()).unwrap();
        mean_loss(&probe, window)
    };
    Ok(check_gradients(f, model.params(), &grads, indices, DEFAULT_STEP))
}
