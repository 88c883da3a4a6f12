use crate::scalar::Real;

use super::{AutodiffError, Tensor};

/// Adam moment estimates and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `params`, with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update. Parameters whose gradient is `None`
    /// are frozen: neither they nor their moments change.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let correction1 = T::of(1.0 - self.beta1.powi(t));
        let correction2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);

        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    left: param.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![1.5f64, -2.0])];
        let mut state = AdamState::new(&params, 0.1);
        state.step(&mut params, &[Some(Tensor::zeros(&[2]))]).unwrap();
        assert_eq!(params[0].data(), &[1.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after bias correction, so Δ = lr·g/(|g|+ε).
        let mut params = vec![Tensor::scalar(0.0f64)];
        let mut state = AdamState::new(&params, 0.1);
        state.step(&mut params, &[Some(Tensor::scalar(1.0))]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut params = vec![Tensor::scalar(0.3f32), Tensor::scalar(0.3f32)];
        let mut state = AdamState::new(&params, 1e-3);
        for k in 0..5 {
            let g = Tensor::scalar(0.1 * k as f32 - 0.2);
            state.step(&mut params, &[Some(g.clone()), Some(g)]).unwrap();
        }
        assert_eq!(params[0], params[1]);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut params = vec![Tensor::scalar(1.0f64), Tensor::scalar(2.0f64)];
        let mut state = AdamState::new(&params, 0.5);
        state.step(&mut params, &[None, Some(Tensor::scalar(3.0))]).unwrap();
        assert_eq!(params[0].data()[0].to_bits(), 1.0f64.to_bits());
        assert_eq!(state.first_moment[0].data()[0], 0.0);
        assert!(params[1].data()[0] < 2.0);
    }
}
