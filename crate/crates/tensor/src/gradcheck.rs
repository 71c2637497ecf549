//! Finite-difference verification of tape gradients.
//!
//! The function under test runs on `f64` tensors, so both the tape gradient
//! and the central differences are computed in double precision.
//!
//! Per-entry relative error is `|a − n| / max(|a|, |n|, floor)` with
//! `floor = 1e-3·max|n|` (and never below `1e-12`). The floor keeps entries
//! whose true derivative is orders of magnitude below the rest of the
//! gradient from failing on truncation noise alone.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

const FLOOR_FRACTION: f64 = 1e-3;
const FLOOR_ABS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let leaf = x.detach().into_param();
    let y = f(&leaf)?;
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let base = x.to_vec();
    let mut numeric = Vec::with_capacity(base.len());
    no_grad(|| -> Result<()> {
        let mut probe = base.clone();
        for i in 0..base.len() {
            probe[i] = base[i] + h;
            let up = f(&Tensor::from_vec(probe.clone(), x.shape())?)?.item();
            probe[i] = base[i] - h;
            let down = f(&Tensor::from_vec(probe.clone(), x.shape())?)?.item();
            probe[i] = base[i];
            numeric.push((up - down) / (2.0 * h));
        }
        Ok(())
    })?;

    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (FLOOR_FRACTION * scale).max(FLOOR_ABS);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: None,
        analytic,
        numeric,
        tol,
        passed: true,
    };
    for (i, (a, n)) in report.analytic.iter().zip(&report.numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(floor);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = rel.max(report.max_rel_err);
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_err <= tol && report.max_rel_err.is_finite();
    Ok(report)
}
