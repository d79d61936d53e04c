use crate::tensor::{ParamStore, TensorError};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
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

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                for v in g.data_mut() {
                    *v *= s;
                }
            }
        }
    }
    norm
}

/// One update: `p *= 1 - lr * wd`, then the bias-corrected Adam step.
/// A non-finite gradient leaves every parameter untouched.
pub fn adam_step(
    store: &mut ParamStore,
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<(), TensorError> {
    for p in store.iter() {
        if let Some(g) = &p.grad {
            if let Some((index, value)) = g.first_non_finite() {
                return Err(TensorError::InvalidArgument {
                    op: "adam_step",
                    message: format!("gradient of {} entry {index} is {value}", p.name),
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - learning_rate * weight_decay;
    for (k, p) in store.iter_mut().enumerate() {
        let grad = p.grad.as_ref().map(|g| g.data().to_vec());
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w = *w * decay - learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::row(vec![value]));
        s.get_mut(id).grad = Some(Tensor::row(vec![grad]));
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = one_param(0.0, 1.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.01, 0.0).unwrap();
        let delta = s.iter().next().unwrap().tensor.data()[0];
        assert!((delta + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = one_param(0.7, 0.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.01, 0.0).unwrap();
        assert_eq!(s.iter().next().unwrap().tensor.data()[0], 0.7);
    }

    #[test]
    fn decoupled_decay_scales_parameter() {
        let mut s = one_param(2.0, 0.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.01, 0.01).unwrap();
        assert_eq!(s.iter().next().unwrap().tensor.data()[0], 2.0 * 0.9999);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = one_param(1.0, f64::NAN);
        let mut st = AdamState::new(&s);
        assert!(adam_step(&mut s, &mut st, 0.01, 0.0).is_err());
        assert_eq!(s.iter().next().unwrap().tensor.data()[0], 1.0);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::row(vec![0.0, 0.0]));
        let b = s.add("b", Tensor::row(vec![0.0]));
        s.get_mut(a).grad = Some(Tensor::row(vec![3.0, 0.0]));
        s.get_mut(b).grad = Some(Tensor::row(vec![4.0]));
        assert_eq!(clip_grad_norm(&mut s, 5.0), 5.0);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
    }
}
