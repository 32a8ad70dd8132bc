use super::{Gradients, NumericsError, ParameterStore, Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators mirroring a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParameterStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. A non-finite gradient rejects the whole
/// step and leaves both parameters and state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), NumericsError> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(NumericsError::InvalidLearningRate(lr));
    }
    check_alignment(params, grads, state)?;
    for (id, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(NumericsError::NonFiniteGradient {
                name: params.name(id).to_string(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(EPSILON));

    for (id, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.get(id).data();
        let m = state.first[id].data_mut();
        let v = state.second[id].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

fn check_alignment<T: Scalar>(
    params: &ParameterStore<T>,
    grads: &Gradients<T>,
    state: &AdamState<T>,
) -> Result<(), NumericsError> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    for (id, (_, p)) in params.iter().enumerate() {
        if grads.get(id).shape() != p.shape() || state.first[id].shape() != p.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: grads.get(id).shape().to_vec(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(v)).unwrap();
        s
    }

    fn grads_of(v: f64) -> Gradients<f64> {
        Gradients::from_tensors(vec![Tensor::scalar(v)])
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for &g in &[3.7, -0.02, 150.0] {
            let mut p = scalar_store(1.0);
            let mut st = AdamState::new(&p);
            let lr = 1e-3;
            adam_step(&mut p, &grads_of(g), &mut st, lr).unwrap();
            let delta = p.get("w").unwrap().item() - 1.0;
            assert!((delta + lr * g.signum()).abs() <= lr * 1e-6, "g={g} delta={delta}");
            assert_eq!(st.step(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_but_counts_step() {
        let mut p = scalar_store(0.25);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads_of(0.0), &mut st, 1e-2).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.25);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn two_constant_steps_match_closed_form() {
        // Direct evaluation of the moment recurrences for constant g.
        let (g, lr) = (0.5f64, 1e-3);
        let mut expected = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = BETA1 * m + (1.0 - BETA1) * g;
            v = BETA2 * v + (1.0 - BETA2) * g * g;
            let mh = m / (1.0 - BETA1.powi(t));
            let vh = v / (1.0 - BETA2.powi(t));
            expected -= lr * mh / (vh.sqrt() + EPSILON);
        }
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p);
        for _ in 0..2 {
            adam_step(&mut p, &grads_of(g), &mut st, lr).unwrap();
        }
        let got = p.get("w").unwrap().item();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn nan_gradient_rejects_step_without_side_effects() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        let before = (p.clone(), st.clone());
        assert!(adam_step(&mut p, &grads_of(f64::NAN), &mut st, 1e-3).is_err());
        assert_eq!(p, before.0);
        assert_eq!(st, before.1);
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &grads_of(1.0), &mut st, 0.0).is_err());
    }
}
