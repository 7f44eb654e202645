//! Central finite-difference verification of tape gradients.

use crate::error::{config_err, Error, Result};
use crate::numerics::params::{Bound, ParamRegistry};
use crate::numerics::tape::{Tape, Var};
use crate::scalar::Scalar;

/// Gradients below this magnitude are compared in absolute rather than
/// relative terms; central differences cannot resolve them relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose step straddled a non-differentiable point (a ReLU
    /// kink); these are checked against the one-sided slopes instead.
    pub kinks: usize,
    /// (parameter, flat index, analytic, numeric) at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// One-sided slopes differing by more than this (relative) mark a kink.
pub const KINK_RATIO: f64 = 1e-3;

/// Compares the tape gradient of `loss_fn` with `(f(θ+ε) - f(θ-ε)) / 2ε`
/// for every trainable parameter entry, or for `max_per_param` evenly spaced
/// entries of each parameter when given.
pub fn grad_check<T, F>(
    params: &mut ParamRegistry<T>,
    eps: f64,
    max_per_param: Option<usize>,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &Bound<'t, T>) -> Result<Var<'t, T>>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(config_err!("grad_check eps {eps} outside [1e-6, 1e-3]"));
    }
    let eval = |params: &ParamRegistry<T>| -> Result<f64> {
        let tape = Tape::new();
        let bound = params.bind(&tape)?;
        let loss = loss_fn(&tape, &bound)?;
        let v = loss.value().item()?;
        Ok(v.to_f64_lossy())
    };

    let analytic: Vec<Option<Vec<f64>>> = {
        let tape = Tape::new();
        let bound = params.bind(&tape)?;
        let loss = loss_fn(&tape, &bound)?;
        let grads = tape.backward(loss)?;
        (0..params.len())
            .map(|i| {
                let id = crate::numerics::params::ParamId(i);
                if !params.get(id).requires_grad {
                    return None;
                }
                let n = params.get(id).value.len();
                Some(match grads.get(bound.var(id)) {
                    Some(g) => g.data().iter().map(|v| v.to_f64_lossy()).collect(),
                    None => vec![0.0; n],
                })
            })
            .collect()
    };

    let f0 = eval(params)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        kinks: 0,
        worst: None,
    };
    for (i, grad) in analytic.into_iter().enumerate() {
        let Some(grad) = grad else { continue };
        let id = crate::numerics::params::ParamId(i);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite analytic gradient for {}",
                params.name(id)
            )));
        }
        let n = grad.len();
        let picks: Vec<usize> = match max_per_param {
            Some(m) if m < n && m > 0 => (0..m).map(|j| j * n / m).collect(),
            _ => (0..n).collect(),
        };
        for j in picks {
            let orig = params.get(id).value.data()[j];
            let mut probe = |h: f64| -> Result<(f64, f64)> {
                params.get_mut(id).value.data_mut()[j] = T::from_f64_lossy(orig.to_f64_lossy() + h);
                let fp = eval(params);
                params.get_mut(id).value.data_mut()[j] = T::from_f64_lossy(orig.to_f64_lossy() - h);
                let fm = eval(params);
                params.get_mut(id).value.data_mut()[j] = orig;
                Ok((fp?, fm?))
            };
            // A step that straddles a kink is retried with smaller steps; if
            // every step straddles one, any value between the one-sided
            // slopes is accepted.
            let mut err = f64::NAN;
            let mut numeric = f64::NAN;
            for (attempt, h) in [eps, eps / 10.0, eps / 100.0].into_iter().enumerate() {
                let (fp, fm) = probe(h)?;
                numeric = (fp - fm) / (2.0 * h);
                let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
                if relative_error(right, left) <= KINK_RATIO {
                    err = relative_error(grad[j], numeric);
                    break;
                }
                if attempt == 2 {
                    report.kinks += 1;
                    let nearest = grad[j].clamp(left.min(right), left.max(right));
                    err = relative_error(grad[j], nearest);
                }
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), j, grad[j], numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn square_matches_finite_difference() {
        let mut reg = ParamRegistry::<f64>::new();
        let th = reg.register("theta", Tensor::scalar(3.0)).unwrap();
        let rep = grad_check(&mut reg, 1e-6, None, |_, b| b.var(th).mean_squares()).unwrap();
        assert_eq!((rep.checked, rep.kinks), (1, 0));
        let (_, _, a, n) = rep.worst.unwrap();
        assert_eq!(a, 6.0);
        assert!((n - 6.0).abs() < 1e-6);
    }

    #[test]
    fn relu_kink_is_detected_not_failed() {
        let mut reg = ParamRegistry::<f64>::new();
        let th = reg.register("theta", Tensor::scalar(1e-9)).unwrap();
        let rep = grad_check(&mut reg, 1e-5, None, |_, b| b.var(th).relu()).unwrap();
        assert_eq!(rep.kinks, 1);
        assert_eq!(rep.max_rel_error, 0.0);
    }

    #[test]
    fn eps_range_enforced() {
        let mut reg = ParamRegistry::<f64>::new();
        let th = reg.register("theta", Tensor::scalar(1.0)).unwrap();
        assert!(grad_check(&mut reg, 1e-2, None, |_, b| b.var(th).mean_squares()).is_err());
    }
}
