//! Finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::nn::ParamStore;

/// Central-difference step. Double precision makes 1e-5 a sweet spot between
/// truncation and roundoff error.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a gradient check: the largest relative error over every scalar
/// parameter, plus where it occurred.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error with an absolute floor: gradients smaller than the floor
/// are compared absolutely, which keeps finite-difference roundoff from
/// dominating near zero.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` computes the scalar loss from the store and fills parameter gradients
/// (forward + backward + `accumulate_param_grads`). Each probe runs on a
/// clone of `base` so stateful layers (batch-norm running statistics) see the
/// same state every time.
pub fn grad_check<F>(base: &ParamStore, f: F) -> Result<GradReport>
where
    F: Fn(&mut ParamStore) -> Result<f64>,
{
    // Analytic gradients.
    let mut analytic_store = base.clone();
    analytic_store.clear_grads();
    f(&mut analytic_store)?;

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };

    let ids: Vec<_> = analytic_store.params().map(|(id, _)| id).collect();
    for id in ids {
        let name = analytic_store.param(id).name.clone();
        let n = analytic_store.value(id).numel();
        for i in 0..n {
            let a = analytic_store
                .param(id)
                .grad
                .as_ref()
                .map(|g| g.data()[i])
                .unwrap_or(0.0);

            let mut plus = base.clone();
            plus.param_mut(id).value.data_mut()[i] += FD_STEP;
            let lp = f(&mut plus)?;

            let mut minus = base.clone();
            minus.param_mut(id).value.data_mut()[i] -= FD_STEP;
            let lm = f(&mut minus)?;

            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
