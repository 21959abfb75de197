use serde::Serialize;

use super::params::{GradBuffer, ParameterStore};
use crate::error::{Error, Result};

/// Worst disagreement between analytic and numeric gradients within one slot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `loss_fn` with central differences at
/// every coordinate of every slot.
///
/// The numeric derivative uses the fourth-order five-point stencil
/// `(8 (f(x+e) - f(x-e)) - (f(x+2e) - f(x-2e))) / 12e`. Its truncation error
/// is small enough at `e` near `1e-2` that rounding noise in the loss stays
/// far below the gradients being checked.
///
/// `loss_fn` evaluates the loss at the store's current values and, when
/// handed a buffer, writes the analytic gradient into it. The store is
/// restored bit-for-bit before returning.
pub fn finite_difference_check<F>(
    store: &mut ParameterStore,
    epsilon: f64,
    mut loss_fn: F,
) -> Result<Vec<SlotCheck>>
where
    F: FnMut(&ParameterStore, Option<&mut GradBuffer>) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let mut analytic = GradBuffer::for_store(store);
    let base = loss_fn(store, Some(&mut analytic))?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }

    let ids: Vec<_> = store.ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.slot(id).name.clone();
        let mut worst = SlotCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..store.value(id).len() {
            let original = store.value(id).values()[j];
            let mut at = |offset: f64| -> Result<f64> {
                store.value_mut(id).values_mut()[j] = original + offset;
                let v = loss_fn(store, None);
                store.value_mut(id).values_mut()[j] = original;
                let v = v?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("loss with `{name}`[{j}] perturbed")));
                }
                Ok(v)
            };
            let near = at(epsilon)? - at(-epsilon)?;
            let far = at(2.0 * epsilon)? - at(-2.0 * epsilon)?;
            let numeric = (8.0 * near - far) / (12.0 * epsilon);
            let a = analytic.get(id).map_or(0.0, |g| g.values()[j]);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error {
                worst = SlotCheck {
                    name: name.clone(),
                    max_rel_error: err,
                    worst_index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
        report.push(worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn linear_loss_is_exact() {
        let mut store = ParameterStore::new();
        let w = store.insert("w", Tensor::vector(vec![0.4, -1.1, 2.5])).unwrap();
        let x = Tensor::vector(vec![1.5, -0.5, 3.0]);
        let report = finite_difference_check(&mut store, 1e-5, |s, grads| {
            let mut tape = Tape::new(s);
            let wn = tape.param(w);
            let xn = tape.constant(x.clone());
            let p = tape.mul(wn, xn)?;
            let loss = tape.sum(p);
            if let Some(g) = grads {
                tape.backward(loss, g)?;
            }
            Ok(tape.scalar(loss))
        })
        .unwrap();
        assert!(report[0].max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn epsilon_out_of_range_is_rejected() {
        let mut store = ParameterStore::new();
        for eps in [0.0, -1e-5, 0.5, f64::NAN] {
            let r = finite_difference_check(&mut store, eps, |_, _| Ok(0.0));
            assert!(matches!(r, Err(Error::InvalidArgument(_))), "{eps}");
        }
    }

    #[test]
    fn non_finite_perturbed_loss_names_the_coordinate() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 0.0])).unwrap();
        let err = finite_difference_check(&mut store, 1e-3, |s, _| {
            let w = s.value(s.id("w").unwrap()).values();
            Ok(if w[1] != 0.0 { f64::INFINITY } else { w[0] })
        })
        .unwrap_err();
        assert!(err.to_string().contains("`w`[1]"), "{err}");
    }

    #[test]
    fn store_is_restored() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![0.1, 0.2])).unwrap();
        let before = store.clone();
        finite_difference_check(&mut store, 1e-4, |s, _| {
            Ok(s.value(s.id("w").unwrap()).values().iter().map(|v| v * v).sum())
        })
        .unwrap();
        assert_eq!(store, before);
    }
}
