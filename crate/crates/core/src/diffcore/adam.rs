use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore};
use crate::error::{Result, UnmixError};

const BASE_LR: f64 = 1e-3;
const LR_DECAY: f64 = 0.9;
const LR_DECAY_EPOCHS: u32 = 10;

/// Moment accumulators for Adam, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_hyperparameters(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, _, t)| t.len()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam descent step on `store` along `grads`.
///
/// Gradients are validated before any parameter moves, so a rejected step
/// leaves both the store and the state untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(UnmixError::Contract(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(UnmixError::dim("adam parameter count", store.len(), grads.len()));
    }
    for id in store.ids() {
        if let Some(g) = grads.raw(id) {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(UnmixError::Training(format!(
                    "non-finite gradient {bad} for parameter `{}`",
                    store.name(id)
                )));
            }
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for id in store.ids() {
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let p = store.get_mut(id).data_mut();
        match grads.raw(id) {
            Some(g) => {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
            None => {
                for i in 0..p.len() {
                    m[i] *= b1;
                    v[i] *= b2;
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// 0.001 decayed by 0.9 per epoch through epoch 10, constant afterwards.
pub fn lr_schedule(epoch: u32) -> f64 {
    BASE_LR * LR_DECAY.powi(epoch.min(LR_DECAY_EPOCHS) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{ParamId, Tensor};

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::vector(vec![v]));
        s
    }

    fn grads_of(g: f64) -> Gradients {
        let mut gr = Gradients::zeros_like(&scalar_store(0.0));
        gr.slot(ParamId(0))[0] = g;
        gr
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0), 0.001);
        assert!((lr_schedule(1) - 0.0009).abs() < 1e-18);
        let ten = 0.001 * 0.9f64.powi(10);
        assert!((lr_schedule(15) - ten).abs() < 1e-18);
        assert_eq!(lr_schedule(15), lr_schedule(10));
        assert!((lr_schedule(15) - 3.4868e-4).abs() < 1e-8);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.5);
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &grads_of(1.0), &mut st, 0.001).unwrap();
        let moved = 0.5 - store.get(ParamId(0)).item();
        assert!((moved - 0.001).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut store = scalar_store(2.0);
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &grads_of(0.0), &mut st, 0.01).unwrap();
        assert_eq!(store.get(ParamId(0)).item(), 2.0);
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut store = scalar_store(2.0);
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &grads_of(1.0), &mut st, 0.01).unwrap();
        let m_before = st.m[0][0];
        let v_before = st.v[0][0];
        adam_step(&mut store, &grads_of(0.0), &mut st, 0.01).unwrap();
        assert!((st.m[0][0] - 0.9 * m_before).abs() < 1e-15);
        assert!((st.v[0][0] - 0.999 * v_before).abs() < 1e-15);
    }

    #[test]
    fn sign_flips_shrink_the_second_step() {
        let run = |g2: f64| {
            let mut store = scalar_store(0.0);
            let mut st = AdamState::new(&store);
            adam_step(&mut store, &grads_of(1.0), &mut st, 0.001).unwrap();
            let after_one = store.get(ParamId(0)).item();
            adam_step(&mut store, &grads_of(g2), &mut st, 0.001).unwrap();
            (store.get(ParamId(0)).item() - after_one).abs()
        };
        assert!(run(-1.0) < run(1.0));
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = scalar_store(1.0);
        let mut st = AdamState::new(&store);
        let err = adam_step(&mut store, &grads_of(f64::NAN), &mut st, 0.001).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(store.get(ParamId(0)).item(), 1.0);
        assert_eq!(st.step, 0);
    }
}
