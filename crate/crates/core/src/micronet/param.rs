use rand::Rng;

use super::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub momentum: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let momentum = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad: None,
            momentum,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Uniform in `(-a, a)` with `a = 1 / sqrt(fan_in)`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("size matches shape"))
    }

    /// Gradient accumulator, created as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut Tensor {
        let shape = self.value.shape().to_vec();
        self.grad.get_or_insert_with(|| Tensor::zeros(&shape))
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Anything that owns trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
