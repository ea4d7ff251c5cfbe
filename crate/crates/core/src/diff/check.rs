//! Central-difference verification of tape gradients.

use std::collections::BTreeMap;

use super::{DiffError, Result, Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`check_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input name, flat index)` of the largest relative error.
    pub worst_coordinate: Option<(String, usize)>,
    /// Largest `|f(x+h) − 2f(x) + f(x−h)| / h²` seen; large values mean the
    /// central difference itself is unreliable at this step size.
    pub curvature_estimate: f64,
    pub ill_conditioned: bool,
    pub coordinates: usize,
}

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-3;
const ILL_CONDITIONED_CURVATURE: f64 = 1e6;
const ILL_CONDITIONED_ERR: f64 = 1e-4;

/// Compares analytic gradients of a scalar composite with central differences.
///
/// `build` records the function on a fresh tape from the input nodes (given in
/// the order of `point`) and returns the scalar output.
pub fn check_gradient<F>(build: F, point: &[(&str, Tensor)], h: f64) -> Result<GradReport>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .map(|(n, t)| tape.input(n, t.clone()))
        .collect();
    let out = build(&mut tape, &vars)?;
    tape.mark_output("__out", out);
    let f0 = finite(tape.value(out).item(), "output", 0)?;
    let grads = tape.backward(out)?;

    let mut inputs: BTreeMap<String, Tensor> = point
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_coordinate: None,
        curvature_estimate: 0.0,
        ill_conditioned: false,
        coordinates: 0,
    };
    for ((name, value), var) in point.iter().zip(&vars) {
        let analytic = grads.wrt(*var);
        for idx in 0..value.len() {
            let base = value.data()[idx];
            let mut eval = |x: f64| -> Result<f64> {
                inputs.get_mut(*name).expect("known input").data_mut()[idx] = x;
                let vals = tape.forward(&inputs)?;
                finite(vals["__out"].item(), name, idx)
            };
            let fp = eval(base + h)?;
            let fm = eval(base - h)?;
            eval(base)?;
            // divide by the representable step, not the nominal one
            let numeric = (fp - fm) / ((base + h) - (base - h));
            let a = analytic.data()[idx];
            if !a.is_finite() {
                return Err(DiffError::NonFinite {
                    name: format!("grad {name}"),
                    index: idx,
                });
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            let curv = (fp - 2.0 * f0 + fm).abs() / (h * h);
            report.curvature_estimate = report.curvature_estimate.max(curv);
            if err > report.max_rel_err || report.worst_coordinate.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst_coordinate = Some((name.to_string(), idx));
            }
            report.coordinates += 1;
        }
    }
    report.ill_conditioned = report.curvature_estimate > ILL_CONDITIONED_CURVATURE
        || report.max_rel_err > ILL_CONDITIONED_ERR;
    Ok(report)
}

fn finite(v: f64, name: &str, index: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DiffError::NonFinite {
            name: name.to_string(),
            index,
        })
    }
}
