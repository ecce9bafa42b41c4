//! Central finite-difference checks of analytic gradients.

use std::fmt;

use super::param::Module;
use super::tensor::Tensor;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "  {:<32} {:>6} elems  max rel err {:.3e}  {}",
                e.name,
                e.elements,
                e.max_rel_error,
                if e.max_rel_error < self.tolerance { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Checks the gradients returned by `f` against central differences of its
/// value. `f` maps inputs to `(value, gradient per input)`.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor], eps: f64, tolerance: f64) -> GradReport
where
    F: FnMut(&[Tensor]) -> (f64, Vec<Tensor>),
{
    let (_, analytic) = f(inputs);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut entries = Vec::with_capacity(inputs.len());
    for (idx, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for e in 0..work[idx].len() {
            let orig = work[idx].data()[e];
            work[idx].data_mut()[e] = orig + eps;
            let up = f(&work).0;
            work[idx].data_mut()[e] = orig - eps;
            let down = f(&work).0;
            work[idx].data_mut()[e] = orig;
            worst = worst.max(relative_error(grad.data()[e], (up - down) / (2.0 * eps)));
        }
        entries.push(GradEntry {
            name: format!("input{idx}"),
            max_rel_error: worst,
            elements: work[idx].len(),
        });
    }
    GradReport { tolerance, entries }
}

/// Checks every parameter gradient of `module`. `loss` must run the forward
/// and backward passes, leaving gradients in the module's params, and return
/// the loss value.
pub fn grad_check_module<M, F>(module: &mut M, mut loss: F, eps: f64, tolerance: f64) -> GradReport
where
    M: Module,
    F: FnMut(&mut M) -> f64,
{
    module.zero_grad();
    loss(module);
    let analytic: Vec<Tensor> = module
        .params()
        .iter()
        .map(|p| p.grad.clone().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    let names: Vec<String> = module.params().iter().map(|p| p.name.clone()).collect();
    let mut entries = Vec::with_capacity(analytic.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for e in 0..grad.len() {
            let orig = module.params()[pi].value.data()[e];
            module.params_mut()[pi].value.data_mut()[e] = orig + eps;
            let up = loss(module);
            module.params_mut()[pi].value.data_mut()[e] = orig - eps;
            let down = loss(module);
            module.params_mut()[pi].value.data_mut()[e] = orig;
            worst = worst.max(relative_error(grad.data()[e], (up - down) / (2.0 * eps)));
        }
        entries.push(GradEntry {
            name: names[pi].clone(),
            max_rel_error: worst,
            elements: grad.len(),
        });
    }
    module.zero_grad();
    GradReport { tolerance, entries }
}
