use super::param::Param;
use crate::error::{Error, Result};

/// SGD with momentum and L2 weight decay:
/// `v <- momentum * v + grad + weight_decay * value; value <- value - lr * v`.
/// Gradients are cleared afterwards.
pub fn sgd_update(params: &mut [&mut Param], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    for p in params.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        let Param { value, momentum: buf, .. } = &mut **p;
        for ((v, m), g) in value.data_mut().iter_mut().zip(buf.data_mut()).zip(grad.data()) {
            *m = momentum * *m + g + weight_decay * *v;
            *v -= lr * *m;
        }
    }
    Ok(())
}

/// Optimizer settings shared by every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut [&mut Param]) -> Result<()> {
        sgd_update(params, self.lr, self.momentum, self.weight_decay)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::tensor::Tensor;

    fn param(v: f64, g: f64) -> Param {
        let mut p = Param::new("p", Tensor::filled(&[3], v));
        p.grad = Some(Tensor::filled(&[3], g));
        p
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut p = param(2.0, 0.0);
        sgd_update(&mut [&mut p], 0.1, 0.9, 0.0).unwrap();
        assert!(p.value.data().iter().all(|&v| v == 2.0));
        assert!(p.grad.is_none());
    }

    #[test]
    fn plain_step() {
        let mut p = param(1.0, 0.5);
        sgd_update(&mut [&mut p], 0.1, 0.0, 0.0).unwrap();
        assert!(p.value.data().iter().all(|&v| v == 1.0 - 0.1 * 0.5));
    }

    #[test]
    fn momentum_unrolls() {
        let mut p = param(0.0, 1.0);
        sgd_update(&mut [&mut p], 0.1, 0.9, 0.0).unwrap();
        p.grad = Some(Tensor::filled(&[3], 1.0));
        sgd_update(&mut [&mut p], 0.1, 0.9, 0.0).unwrap();
        for &v in p.value.data() {
            assert!((v + 0.1 * 1.0 * (1.0 + 1.9)).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient() {
        let mut a = param(0.0, 1.0);
        let mut b = Param::new("b", Tensor::zeros(&[1]));
        assert!(matches!(sgd_update(&mut [&mut a, &mut b], 0.1, 0.0, 0.0), Err(Error::MissingGradient(n)) if n == "b"));
        // nothing was applied
        assert_eq!(a.value.data()[0], 0.0);
    }
}
