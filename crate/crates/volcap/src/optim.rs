//! Adadelta: per-coordinate step sizes from running averages of squared
//! gradients and squared updates. No learning rate.

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamSet, Scalar, Tensor};

/// Hyperparameters and per-parameter accumulators.
///
/// Update rule, per coordinate:
/// `E[g^2] <- rho E[g^2] + (1-rho) g^2`,
/// `dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g`,
/// `E[dx^2] <- rho E[dx^2] + (1-rho) dx^2`,
/// `x <- x + dx`.
#[derive(Debug, Clone)]
pub struct AdadeltaState<T> {
    pub rho: f64,
    pub epsilon: f64,
    acc_grad_sq: Vec<Tensor<T>>,
    acc_update_sq: Vec<Tensor<T>>,
}

/// Serializable hyperparameters (accumulators are stored in checkpoints as
/// tensors).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl<T: Scalar> AdadeltaState<T> {
    /// Zero accumulators shaped like `params`.
    pub fn new(params: &ParamSet<T>, config: AdadeltaConfig) -> Self {
        AdadeltaState {
            rho: config.rho,
            epsilon: config.epsilon,
            acc_grad_sq: params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect(),
            acc_update_sq: params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn config(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            rho: self.rho,
            epsilon: self.epsilon,
        }
    }

    pub fn accumulators(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.acc_grad_sq, &self.acc_update_sq)
    }

    /// Restores accumulators (checkpoint load). Shapes must match.
    pub fn restore(&mut self, grad_sq: Vec<Tensor<T>>, update_sq: Vec<Tensor<T>>) {
        assert_eq!(grad_sq.len(), self.acc_grad_sq.len());
        assert_eq!(update_sq.len(), self.acc_update_sq.len());
        self.acc_grad_sq = grad_sq;
        self.acc_update_sq = update_sq;
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        let rho = T::from_f64(self.rho);
        let one_minus = T::from_f64(1.0 - self.rho);
        let eps = T::from_f64(self.epsilon);
        for (idx, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let eg = self.acc_grad_sq[idx].data_mut();
            let eu = self.acc_update_sq[idx].data_mut();
            for ((x, &g), (eg_i, eu_i)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(eg.iter_mut().zip(eu.iter_mut()))
            {
                *eg_i = rho * *eg_i + one_minus * g * g;
                let dx = -((*eu_i + eps).sqrt() / (*eg_i + eps).sqrt()) * g;
                *eu_i = rho * *eu_i + one_minus * dx * dx;
                *x = *x + dx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_param(value: &[f64], grad: &[f64]) -> (ParamSet<f64>, AdadeltaState<f64>) {
        let mut params: ParamSet<f64> = ParamSet::new();
        let id = params.add("p", Tensor::from_vec(&[value.len()], value.to_vec()).unwrap());
        let state = AdadeltaState::new(&params, AdadeltaConfig::default());
        params.get_mut(id).grad =
            Tensor::from_vec(&[grad.len()], grad.to_vec()).unwrap();
        (params, state)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut params, mut state) = one_param(&[1.0, -2.0, 3.0], &[0.0, 0.0, 0.0]);
        state.step(&mut params);
        let id = params.by_name("p").unwrap();
        assert_eq!(params.get(id).value.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_from_zero_state_matches_closed_form() {
        // |dx| = sqrt(eps) / sqrt((1-rho) g^2 + eps) * |g|
        let g = 0.37;
        let cfg = AdadeltaConfig::default();
        let (mut params, mut state) = one_param(&[0.0], &[g]);
        state.step(&mut params);
        let id = params.by_name("p").unwrap();
        let expect = -(cfg.epsilon.sqrt() / ((1.0 - cfg.rho) * g * g + cfg.epsilon).sqrt()) * g;
        assert_relative_eq!(params.get(id).value.data()[0], expect, max_relative = 1e-12);
    }

    #[test]
    fn opposite_gradients_give_opposite_updates() {
        let g = 1.3;
        let (mut params, mut state) = one_param(&[0.0, 0.0], &[g, -g]);
        state.step(&mut params);
        let id = params.by_name("p").unwrap();
        let v = params.get(id).value.data();
        assert_relative_eq!(v[0], -v[1], max_relative = 1e-15);
        assert!(v[0] != 0.0);
    }

    #[test]
    fn constant_gradient_stays_bounded_on_quadratic_bowl() {
        // minimize 0.5 x^2: gradient = x; 1000 steps must not diverge
        let mut params: ParamSet<f64> = ParamSet::new();
        let id = params.add("x", Tensor::from_vec(&[1], vec![5.0]).unwrap());
        let mut state = AdadeltaState::new(&params, AdadeltaConfig::default());
        for _ in 0..1000 {
            let x = params.get(id).value.data()[0];
            params.get_mut(id).grad = Tensor::from_vec(&[1], vec![x]).unwrap();
            state.step(&mut params);
            assert!(params.get(id).value.data()[0].is_finite());
        }
        let x = params.get(id).value.data()[0].abs();
        assert!(x < 5.0, "did not contract toward the minimum: |x| = {x}");
    }
}
