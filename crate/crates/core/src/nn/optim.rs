//! AdaDelta (accumulated-gradient / accumulated-update variant) with the
//! usual defaults rho = 0.95, eps = 1e-6. No learning rate to tune, which is
//! exactly why it is the optimizer of choice here.

use crate::error::{Error, Result};
use crate::nn::store::ParameterStore;

#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    eg2: Vec<Vec<f64>>,
    ed2: Vec<Vec<f64>>,
}

impl AdaDelta {
    pub fn new(store: &ParameterStore) -> Self {
        Self::with_params(store, 0.95, 1e-6)
    }

    pub fn with_params(store: &ParameterStore, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .ids()
            .map(|id| vec![0.0; store.value(id).len()])
            .collect();
        Self {
            rho,
            eps,
            eg2: zeros.clone(),
            ed2: zeros,
        }
    }

    /// Apply one update from the gradients accumulated in the store, then
    /// clear them. If any gradient is non-finite the step is aborted and
    /// parameters, accumulators and gradients are all left untouched.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericError(format!(
                    "non-finite gradient in parameter {}",
                    store.name(id)
                )));
            }
        }
        for &id in &ids {
            let i = id.index();
            let n = store.value(id).len();
            for j in 0..n {
                let g = store.grad(id)[j];
                let eg2 = self.rho * self.eg2[i][j] + (1.0 - self.rho) * g * g;
                let delta = -((self.ed2[i][j] + self.eps).sqrt() / (eg2 + self.eps).sqrt()) * g;
                self.eg2[i][j] = eg2;
                self.ed2[i][j] = self.rho * self.ed2[i][j] + (1.0 - self.rho) * delta * delta;
                store.value_mut(id)[j] += delta;
            }
        }
        store.zero_grads();
        Ok(())
    }
}
