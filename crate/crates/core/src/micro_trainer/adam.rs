use super::TrainerError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), TrainerError> {
    let n = state.first_moment.len();
    for len in [params.len(), grads.len(), state.second_moment.len()] {
        if len != n {
            return Err(TrainerError::ShapeMismatch { expected: n, got: len });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3, 0.1);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert!(s.first_moment.iter().chain(&s.second_moment).all(|&m| m == 0.0));
        assert_eq!(s.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, 1e-3);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-18, "{}", p[0]);
        assert!((p[0] + 9.9999999e-4).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2, 1e-3);
        assert_eq!(
            adam_step(&mut p, &[1.0], &mut s),
            Err(TrainerError::ShapeMismatch { expected: 2, got: 1 })
        );
    }

    proptest! {
        #[test]
        fn first_step_is_scale_free_without_epsilon(g in prop::num::f64::NORMAL, k in 1e-3..1e3f64) {
            prop_assume!(g.abs() > 1e-100 && g.abs() < 1e100);
            let step = |g: f64| {
                let mut p = vec![0.0];
                let mut s = AdamState { epsilon: 0.0, ..AdamState::new(1, 1e-3) };
                adam_step(&mut p, &[g], &mut s).unwrap();
                p[0]
            };
            let (a, b) = (step(g), step(g * k));
            prop_assert!((a - b).abs() <= 1e-15);
            prop_assert!((a + g.signum() * 1e-3).abs() <= 1e-15);
        }
    }
}
