//! Adam with bias correction, plus the step learning-rate schedule.

use crate::autodiff::Tensor;
use crate::models::ParamStore;

use super::TrainError;

/// First/second moment accumulators aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = (0..store.len())
            .map(|i| Tensor::zeros(store.tensor(i).shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. `grads[i] = None` (unbound) and frozen parameters are
/// skipped entirely: values and moments stay untouched even if gradients
/// exist for them.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
    frozen: &[bool],
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        if frozen[i] {
            continue;
        }
        let Some(g) = &grads[i] else { continue };
        if !g.all_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: params.name(i).to_string(),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.tensor_mut(i).data_mut();
        let gd = g.data();
        for k in 0..p.len() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gd[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gd[k] * gd[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Step schedule: `lr0 * gamma^(epoch / period)` with integer division.
pub fn lr_at(epoch: usize, lr0: f64, gamma: f64, period: usize) -> f64 {
    lr0 * gamma.powi((epoch / period.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::vector(values));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = store_with(vec![1.0, -2.0]);
        let mut state = AdamState::new(&store);
        adam_step(
            &mut store,
            &[Some(Tensor::vector(vec![0.0, 0.0]))],
            &mut state,
            1e-2,
            &[false],
        )
        .unwrap();
        assert_eq!(store.get("x").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // With bias correction, the first update is lr * g/|g| (up to eps).
        let mut store = store_with(vec![0.0]);
        let mut state = AdamState::new(&store);
        let lr = 1e-3;
        adam_step(
            &mut store,
            &[Some(Tensor::vector(vec![0.37]))],
            &mut state,
            lr,
            &[false],
        )
        .unwrap();
        let moved = store.get("x").unwrap().data()[0].abs();
        assert!((moved - lr).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = |x|^2, grad = 2x; 500 steps at lr 1e-2.
        let mut store = store_with(vec![1.0, 1.0, 1.0]);
        let mut state = AdamState::new(&store);
        for _ in 0..500 {
            let g: Vec<f64> = store.get("x").unwrap().data().iter().map(|x| 2.0 * x).collect();
            adam_step(
                &mut store,
                &[Some(Tensor::vector(g))],
                &mut state,
                1e-2,
                &[false],
            )
            .unwrap();
        }
        let norm: f64 = store
            .get("x")
            .unwrap()
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-3, "|x| = {norm}");
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![1.0]));
        store.add("b", Tensor::vector(vec![1.0]));
        let mut state = AdamState::new(&store);
        adam_step(
            &mut store,
            &[
                Some(Tensor::vector(vec![5.0])),
                Some(Tensor::vector(vec![5.0])),
            ],
            &mut state,
            1e-2,
            &[true, false],
        )
        .unwrap();
        assert_eq!(store.get("a").unwrap().data(), &[1.0]);
        assert_ne!(store.get("b").unwrap().data(), &[1.0]);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut store = store_with(vec![1.0]);
        let mut state = AdamState::new(&store);
        let err = adam_step(
            &mut store,
            &[Some(Tensor::vector(vec![f64::NAN]))],
            &mut state,
            1e-2,
            &[false],
        );
        assert!(err.is_err());
    }

    #[test]
    fn schedule_is_exact() {
        let lr0 = 1e-3;
        assert_eq!(lr_at(0, lr0, 0.5, 100), lr0);
        assert_eq!(lr_at(99, lr0, 0.5, 100), lr0);
        assert_eq!(lr_at(100, lr0, 0.5, 100), lr0 * 0.5);
        assert_eq!(lr_at(250, lr0, 0.5, 100), lr0 * 0.25);
        assert_eq!(lr_at(999, lr0, 0.5, 100), lr0 * 0.5f64.powi(9));
    }
}
