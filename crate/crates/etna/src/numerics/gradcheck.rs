//! Central finite-difference gradient checker.
//!
//! The caller evaluates the loss and fills analytic gradients into the store
//! first; `grad_check` then perturbs every scalar parameter in turn and
//! compares `(f(θ+ε) − f(θ−ε)) / 2ε` against the stored gradient.

use crate::error::{Error, Result};
use crate::numerics::ParamStore;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry, for diagnostics.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check<F>(
    store: &mut ParamStore,
    loss_fn: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> f64,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut max_rel_err: f64 = 0.0;

    for name in names {
        let len = store.param(&name).data().len();
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..len {
            let original = store.param(&name).data()[i];

            store.param_mut(&name).data_mut()[i] = original + epsilon;
            let loss_plus = loss_fn(store);
            store.param_mut(&name).data_mut()[i] = original - epsilon;
            let loss_minus = loss_fn(store);
            store.param_mut(&name).data_mut()[i] = original;

            if !loss_plus.is_finite() || !loss_minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing {name}[{i}]"
                )));
            }

            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let analytic = store.grad(&name).data()[i];
            let rel = relative_error(analytic, numeric);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        max_rel_err = max_rel_err.max(check.max_rel_err);
        per_param.push(check);
    }

    Ok(GradCheckReport { per_param, max_rel_err, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn quadratic_loss_checks_exactly() {
        // f(θ) = ½θ² at θ = 3: analytic gradient 3, central differences are
        // exact for quadratics up to roundoff.
        let mut store = ParamStore::new();
        store.insert("theta", Matrix::from_vec(1, 1, vec![3.0]).unwrap());
        store.grad_mut("theta").set(0, 0, 3.0);
        let report = grad_check(
            &mut store,
            |s| 0.5 * s.param("theta").get(0, 0).powi(2),
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
        let numeric = report.per_param[0].numeric;
        assert!((numeric - 3.0).abs() < 1e-9);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut store = ParamStore::new();
        store.insert("theta", Matrix::from_vec(1, 1, vec![3.0]).unwrap());
        store.grad_mut("theta").set(0, 0, 6.0); // doubled on purpose
        let report = grad_check(
            &mut store,
            |s| 0.5 * s.param("theta").get(0, 0).powi(2),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("theta", Matrix::from_vec(1, 1, vec![0.0]).unwrap());
        let result = grad_check(&mut store, |_| f64::NAN, 1e-5, 1e-4);
        assert!(result.is_err());
    }
}
