//! Finite-difference gradient checking.
//!
//! Compares gradients produced by the reverse pass against central
//! differences with step 1e-5, element by element, in 64-bit. The relative
//! error is measured against `max(1, |analytic|, |numeric|)` so that
//! near-zero gradients are compared absolutely, where difference noise
//! (~1e-11) dominates.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    /// `check/input` label for the parameter group.
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Default, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(GradCheckEntry::passed)
    }

    pub fn extend(&mut self, entries: Vec<GradCheckEntry>) {
        self.entries.extend(entries);
    }

    /// One line per parameter group: name, max relative error, verdict.
    pub fn lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{:<40} max_rel_err {:>12.3e}  tol {:>8.0e}  {}",
                    e.name,
                    e.max_rel_err,
                    e.tolerance,
                    if e.passed() { "ok" } else { "FAIL" }
                )
            })
            .collect()
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the analytic gradient of a scalar-valued function against central
/// finite differences, per named input tensor. `f` must be a pure function
/// of the input tensors' current values.
pub fn grad_check<F>(
    check: &str,
    f: F,
    inputs: &[(&str, Tensor)],
    tolerance: f64,
) -> Result<Vec<GradCheckEntry>>
where
    F: Fn() -> Result<Tensor>,
{
    grad_check_with_fault(check, f, inputs, tolerance, false)
}

/// Same as [`grad_check`], with an optional fault injection that corrupts
/// the first analytic gradient entry before comparison. The fault path is a
/// negative control: a healthy checker must flag it.
pub fn grad_check_with_fault<F>(
    check: &str,
    f: F,
    inputs: &[(&str, Tensor)],
    tolerance: f64,
    inject_fault: bool,
) -> Result<Vec<GradCheckEntry>>
where
    F: Fn() -> Result<Tensor>,
{
    for (_, t) in inputs {
        t.zero_grad();
    }
    let loss = f()?;
    if loss.numel() != 1 {
        return Err(Error::numeric(format!(
            "grad_check {check}: function returned shape {:?}, want a scalar",
            loss.shape()
        )));
    }
    loss.backward()?;

    let mut entries = Vec::with_capacity(inputs.len());
    for (input_idx, (input_name, tensor)) in inputs.iter().enumerate() {
        let mut analytic = tensor
            .grad()
            .unwrap_or_else(|| vec![0.0; tensor.numel()]);
        if inject_fault && input_idx == 0 && !analytic.is_empty() {
            analytic[0] = -analytic[0] - 0.5;
        }
        let mut max_err = 0.0f64;
        for i in 0..tensor.numel() {
            let orig = tensor.get_element(i);
            tensor.set_element(i, orig + FD_STEP);
            let plus = f()?.item()?;
            tensor.set_element(i, orig - FD_STEP);
            let minus = f()?.item()?;
            tensor.set_element(i, orig);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_err = max_err.max(rel_err(analytic[i], numeric));
        }
        entries.push(GradCheckEntry {
            name: format!("{check}/{input_name}"),
            max_rel_err: max_err,
            tolerance,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_nearly_exact() {
        let x = Tensor::param(&[4], vec![0.3, -1.2, 0.7, 2.0]).unwrap();
        let xc = x.clone();
        let entries = grad_check("sum", move || xc.sum(), &[("x", x)], 1e-10).unwrap();
        assert!(entries[0].passed(), "{}", entries[0].max_rel_err);
        assert!(entries[0].max_rel_err < 1e-10);
    }

    #[test]
    fn product_of_activations_passes() {
        let x = Tensor::param(&[2, 3], vec![0.3, -0.8, 0.2, 1.1, -0.4, 0.9]).unwrap();
        let y = Tensor::param(&[2, 3], vec![-0.6, 0.5, 1.4, -0.2, 0.8, -1.0]).unwrap();
        let (xc, yc) = (x.clone(), y.clone());
        let entries = grad_check(
            "tanh*sigmoid",
            move || xc.tanh()?.mul(&yc.sigmoid()?)?.sum(),
            &[("x", x), ("y", y)],
            1e-6,
        )
        .unwrap();
        assert!(entries.iter().all(GradCheckEntry::passed));
    }

    #[test]
    fn injected_fault_is_flagged() {
        let x = Tensor::param(&[3], vec![0.4, -0.9, 1.3]).unwrap();
        let xc = x.clone();
        let entries =
            grad_check_with_fault("control", move || xc.sum(), &[("x", x)], 1e-6, true).unwrap();
        assert!(!entries[0].passed());
    }
}
