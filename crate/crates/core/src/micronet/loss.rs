use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-element Smooth-L1 with transition `beta`: `0.5 d^2 / beta` when
/// `|d| < beta`, else `|d| - 0.5 beta`. Returns the sum over elements and
/// its gradient with respect to `pred`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor, beta: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "smooth_l1: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::Config(format!("smooth_l1 beta must be positive, got {beta}")));
    }
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        if d.abs() < beta {
            total += 0.5 * d * d / beta;
            *g = d / beta;
        } else {
            total += d.abs() - 0.5 * beta;
            *g = d.signum();
        }
    }
    Ok((total, grad))
}

/// Mean negative log-likelihood of `targets` under row-wise
/// log-distributions `logp` of shape `(T, S)`.
pub fn nll_loss(logp: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    logp.expect_rank("nll input", 2)?;
    let (t, s) = (logp.dim(0), logp.dim(1));
    if targets.len() != t {
        return Err(Error::ShapeMismatch(format!("nll: {t} rows, {} targets", targets.len())));
    }
    if t == 0 {
        return Err(Error::EmptyTarget);
    }
    let mut grad = Tensor::zeros(&[t, s]);
    let mut total = 0.0;
    for (row, &y) in targets.iter().enumerate() {
        if y >= s {
            return Err(Error::IndexOutOfRange { index: y, size: s });
        }
        total -= logp.data()[row * s + y];
        grad.data_mut()[row * s + y] = -1.0 / t as f64;
    }
    Ok((total / t as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn smooth_l1_values() {
        let zero = scalar(0.0);
        assert!((smooth_l1(&scalar(0.5), &zero, 1.0).unwrap().0 - 0.125).abs() < 1e-15);
        assert!((smooth_l1(&scalar(2.0), &zero, 1.0).unwrap().0 - 1.5).abs() < 1e-15);
        assert!((smooth_l1(&scalar(-2.0), &zero, 1.0).unwrap().0 - 1.5).abs() < 1e-15);
        assert!(smooth_l1(&scalar(1.0), &Tensor::zeros(&[2]), 1.0).is_err());
    }

    #[test]
    fn smooth_l1_derivative_continuous_at_transition() {
        let zero = scalar(0.0);
        let f = |d: f64| smooth_l1(&scalar(d), &zero, 1.0).unwrap().0;
        let h = 1e-7;
        for b in [1.0, -1.0] {
            let left = (f(b) - f(b - h)) / h;
            let right = (f(b + h) - f(b)) / h;
            assert!((left - right).abs() < 1e-6, "at {b}: {left} vs {right}");
        }
    }

    #[test]
    fn nll_uniform_and_one_hot() {
        let s = 63;
        let logp = Tensor::filled(&[5, s], -(s as f64).ln());
        let (l, _) = nll_loss(&logp, &[0, 5, 62, 3, 9]).unwrap();
        assert!((l - 63f64.ln()).abs() < 1e-12);
        assert!((l - 4.1431).abs() < 1e-4);

        let mut one_hot = Tensor::filled(&[2, 3], f64::NEG_INFINITY);
        one_hot.data_mut()[1] = 0.0;
        one_hot.data_mut()[5] = 0.0;
        assert_eq!(nll_loss(&one_hot, &[1, 2]).unwrap().0, 0.0);
        assert!(matches!(nll_loss(&logp, &[0, 1, 2, 3, 63]), Err(Error::IndexOutOfRange { .. })));
    }
}
