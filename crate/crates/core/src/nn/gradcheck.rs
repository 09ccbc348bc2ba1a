//! Central finite-difference verification of reverse-mode gradients. Used by
//! the test suites; exposed publicly since it is handy when extending the op
//! set.

use crate::error::Result;
use crate::nn::store::ParameterStore;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare the gradients currently accumulated in `store` against central
/// finite differences of `loss` with step `eps`, touching every scalar of
/// every parameter. The store's values are restored exactly (each nudge is
/// undone by assignment, not by arithmetic).
pub fn check_gradients<F>(
    store: &mut ParameterStore,
    mut loss: F,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for j in 0..n {
            let orig = store.value(id)[j];
            store.value_mut(id)[j] = orig + eps;
            let up = loss(store)?;
            store.value_mut(id)[j] = orig - eps;
            let down = loss(store)?;
            store.value_mut(id)[j] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let analytic = store.grad(id)[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
