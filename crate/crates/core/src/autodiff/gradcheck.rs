//! Central finite-difference check of tape gradients.
//!
//! The relative error of coordinate `k` is
//! `|analytic − numeric| / max(|analytic|, |numeric|, floor)`; the floor keeps
//! coordinates whose true gradient is ~0 from turning round-off into a huge
//! ratio. Coordinates sitting on (or within `h` of) a kink are detected by
//! comparing difference quotients at `h` and `h/2` and are excluded.

use super::params::{Bound, Params};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub floor: f64,
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-3,
            kink_tol: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

impl GradCheckReport {
    fn merge(&mut self, other: GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.excluded += other.excluded;
    }
}

/// Checks `d f / d x` for a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let opts = GradCheckOptions {
        h,
        ..Default::default()
    };
    grad_check_many(|tape, xs| f(tape, xs[0]), std::slice::from_ref(x), opts)
}

/// Checks every coordinate of every input of a scalar function.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let f0 = eval(inputs)?;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for k in 0..grad.numel() {
            let orig = work[which].data()[k];
            let mut at = |delta: f64| -> Result<f64> {
                work[which].data_mut()[k] = orig + delta;
                let v = eval(&work);
                work[which].data_mut()[k] = orig;
                v
            };
            let (fp, fm) = (at(opts.h)?, at(-opts.h)?);
            let (fp2, fm2) = (at(opts.h / 2.0)?, at(-opts.h / 2.0)?);
            let numeric = (fp - fm) / (2.0 * opts.h);
            let numeric_half = (fp2 - fm2) / opts.h;
            let gap = (fp - 2.0 * f0 + fm) / opts.h;
            let gap_half = (fp2 - 2.0 * f0 + fm2) / (opts.h / 2.0);
            let a = grad.data()[k];
            let scale = a.abs().max(numeric.abs()).max(opts.floor);
            let kink = (numeric - numeric_half).abs() > opts.kink_tol * scale
                || (gap_half - gap / 2.0).abs() > opts.kink_tol * scale;
            if kink {
                report.excluded += 1;
                continue;
            }
            report.merge(GradCheckReport {
                max_rel_error: (a - numeric).abs() / scale,
                checked: 1,
                excluded: 0,
            });
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar function with respect to every tensor in
/// `params`.
pub fn grad_check_params<F>(f: F, params: &Params, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    grad_check_many(|tape, vars| f(tape, &params.bind_vars(vars)), &inputs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_tight() {
        let x = Tensor::matrix(2, 2, vec![0.3, -1.7, 2.2, 0.9]);
        let r = grad_check(|t, x| t.sum(t.mul(x, x)?), &x, 1e-5).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Tensor::row(vec![0.0, 1.5, -0.7]);
        let r = grad_check(|t, x| t.sum(t.relu(x)?), &x, 1e-5).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-8);
    }
}
