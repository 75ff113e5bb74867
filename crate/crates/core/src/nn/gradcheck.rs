//! Central finite-difference verification of analytic gradients.

use alloc::string::String;

use super::params::ParamStore;
use crate::error::Result;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = math::abs(analytic).max(math::abs(numeric)).max(floor);
    math::abs(analytic - numeric) / denom
}

/// Rounding error of a loss evaluation, in units of the loss's last place.
const LOSS_ROUNDING_ULPS: f64 = 4.0;

/// Smallest gradient magnitude whose relative error `tol` central
/// differences with step `h` can resolve when the loss is about `loss`.
/// A loss carrying a few ulps of rounding error moves the difference
/// quotient by about `ulps·ε·|loss|/h`, so smaller gradients are compared on
/// that absolute scale. Use it as the `floor` of [`check_gradients`].
pub fn resolution_floor(loss: f64, h: f64, tol: f64) -> f64 {
    LOSS_ROUNDING_ULPS * f64::EPSILON * math::abs(loss).max(1.0) / (h * tol)
}

/// Compares gradients already accumulated in `store` against central
/// differences of `loss` with step `h`. `loss` must evaluate the same
/// objective that produced the analytic gradients.
pub fn check_gradients<F>(store: &mut ParamStore, h: f64, floor: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_analytic: 0.0, worst_numeric: 0.0, worst_parameter: String::new(), worst_index: 0, checked: 0 };
    let ids: alloc::vec::Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad_or_zeros();
        for j in 0..analytic.values().len() {
            let original = store.get(id).value.values()[j];
            store.get_mut(id).value.values_mut()[j] = original + h;
            let plus = loss(store)?;
            store.get_mut(id).value.values_mut()[j] = original - h;
            let minus = loss(store)?;
            store.get_mut(id).value.values_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.values()[j], numeric, floor);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_analytic = analytic.values()[j];
                report.worst_numeric = numeric;
                report.worst_parameter = store.get(id).name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_uniform, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_layer_loss(store: &ParamStore, x: &Tensor, y: &Tensor, backward: bool, store_mut: Option<&mut ParamStore>) -> f64 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = |name: &str, tape: &mut Tape| tape.param(store, store.id(name).unwrap());
        let (w1, b1, w2, b2, w3, b3) =
            (p("w1", &mut tape), p("b1", &mut tape), p("w2", &mut tape), p("b2", &mut tape), p("w3", &mut tape), p("b3", &mut tape));
        let h = tape.matmul(xv, w1).unwrap();
        let h = tape.add_bias(h, b1).unwrap();
        let h = tape.relu(h);
        let h = tape.matmul(h, w2).unwrap();
        let h = tape.add_bias(h, b2).unwrap();
        let h = tape.sigmoid(h);
        let o = tape.matmul(h, w3).unwrap();
        let o = tape.add_bias(o, b3).unwrap();
        let loss = tape.sum_squared_error(o, y.clone()).unwrap();
        if backward {
            tape.backward(loss, store_mut.unwrap()).unwrap();
        }
        tape.value(loss).values()[0]
    }

    #[test]
    fn three_layer_network_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        for (name, r, c) in [("w1", 4, 6), ("b1", 1, 6), ("w2", 6, 5), ("b2", 1, 5), ("w3", 5, 2), ("b3", 1, 2)] {
            store.add(name, init_uniform(&mut rng, r, c, r)).unwrap();
        }
        let x = init_uniform(&mut rng, 7, 4, 1);
        let y = init_uniform(&mut rng, 7, 2, 1);
        let snapshot = store.clone();
        three_layer_loss(&snapshot, &x, &y, true, Some(&mut store));
        let report = check_gradients(&mut store, 1e-6, 1e-7, |s| Ok(three_layer_loss(s, &x, &y, false, None))).unwrap();
        assert_eq!(report.checked, 4 * 6 + 6 + 6 * 5 + 5 + 5 * 2 + 2);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-8) - 0.1 / 1.1).abs() < 1e-15);
    }
}
