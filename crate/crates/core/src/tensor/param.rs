use super::{Element, Tensor};

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T: Element = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Element> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Element>(&self) -> Parameter<U> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
            adam_m: self.adam_m.cast(),
            adam_v: self.adam_v.cast(),
            step_count: self.step_count,
        }
    }
}

/// Bias-corrected Adam (no weight decay).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every parameter, then zeroes its gradient.
    pub fn step<T: Element>(&self, params: &mut [&mut Parameter<T>]) {
        for p in params.iter_mut() {
            self.step_one(p);
        }
    }

    pub fn step_one<T: Element>(&self, p: &mut Parameter<T>) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c = |v: f64| T::from_f64_lossy(v);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let (lr, eps) = (c(self.lr), c(self.eps));
        let one = T::one();
        let value = p.value.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for (i, g) in p.grad.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (one - b1) * *g;
            v[i] = b2 * v[i] + (one - b2) * *g * *g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            *g = T::zero();
        }
    }
}
