//! Central finite-difference gradient verification.

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Central difference formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error O(h²).
    ThreePoint,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, error O(h⁴). For
    /// losses with large values and strong curvature, where no single `h`
    /// keeps both round-off and truncation of the three-point rule small.
    FivePoint,
}

/// Compares reverse-mode gradients of `build` with central differences of step `h`.
///
/// `build` must register `inputs` as params (in order) and return a scalar loss.
/// `floor` bounds the denominator so near-zero gradients are compared absolutely.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_with(inputs, h, floor, Stencil::ThreePoint, build)
}

pub fn check_gradients_with<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, stencil: Stencil, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let mut at = |dx: f64| {
                work[i].data_mut()[j] = x0 + dx;
                eval(&work)
            };
            let d1 = at(h)? - at(-h)?;
            let numeric = match stencil {
                Stencil::ThreePoint => d1 / (2.0 * h),
                Stencil::FivePoint => (8.0 * d1 - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
            };
            work[i].data_mut()[j] = x0;
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
