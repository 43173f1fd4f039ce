//! Central-difference gradient oracle.

use super::Tensor;
use crate::error::{Error, Result};

/// Floor for the relative-error denominator.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub per_input_errors: Vec<f64>,
    pub passed: bool,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Element-wise comparison of two gradient vectors.
pub fn compare_gradients(op_name: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let per_input_errors: Vec<f64> = analytic.iter().zip(numeric).map(|(&a, &n)| rel_error(a, n)).collect();
    let max_rel_error = per_input_errors.iter().copied().fold(0.0, f64::max);
    GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error,
        passed: max_rel_error <= tol,
        per_input_errors,
    }
}

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element of `inputs[which]`,
/// with all other inputs held fixed. `f` receives constant tensors.
pub fn central_differences<F>(f: F, inputs: &[Tensor], which: usize, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let base = inputs[which].data().to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        probe[which] = Tensor::new(inputs[which].shape(), plus)?;
        let fp = f(&probe)?;
        let mut minus = base.clone();
        minus[i] -= h;
        probe[which] = Tensor::new(inputs[which].shape(), minus)?;
        let fm = f(&probe)?;
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Checks the autodiff gradient of a scalar `f` against central differences
/// over every element of every input.
pub fn finite_diff_check_many<F>(op_name: &str, f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step h must be > 0, got {h}")));
    }
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach_param).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check of {op_name} needs a scalar output, got shape {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (idx, leaf) in leaves.iter().enumerate() {
        analytic.extend(leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]));
        numeric.extend(central_differences(|xs| f(xs).map(|t| t.item()), inputs, idx, h)?);
    }
    Ok(compare_gradients(op_name, &analytic, &numeric, tol))
}

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check<F>(op_name: &str, f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    finite_diff_check_many(op_name, |xs| f(&xs[0]), std::slice::from_ref(x), h, tol)
}
