//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{value_and_grad, value_only, AutodiffError, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("function is not deterministic: {first} then {second} at the same point")]
    NonDeterministic { first: f64, second: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates probed per parameter tensor; `None` probes all of them.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares the analytic gradient of `f` with central differences.
///
/// The error of one coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`; the report
/// carries the maximum over all probed coordinates.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    f: F,
    options: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    F: for<'a> Fn(&'a Tape<'a>) -> Var<'a>,
{
    let (base, grads) = value_and_grad(store, &f)?;
    let again = value_only(store, &f);
    if base.to_bits() != again.to_bits() {
        return Err(GradCheckError::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let eps = options.epsilon;
    for id in ids {
        let len = store.value(id).len();
        let coords: Vec<usize> = match options.max_coords_per_param {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for i in coords {
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + eps;
            let plus = value_only(store, &f);
            store.value_mut(id).data_mut()[i] = original - eps;
            let minus = value_only(store, &f);
            store.value_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if err > report.max_relative_error || report.worst_param.is_none() {
                report.max_relative_error = err;
                report.worst_param = Some(store.name(id).to_string());
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
