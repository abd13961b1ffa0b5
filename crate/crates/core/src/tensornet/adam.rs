use super::train::TrainConfig;
use crate::error::{Error, Result};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update of every weight tensor.
pub fn adam_step(weights: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam: {} weight tensors, {} gradients, {} moment slots",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((w, g), m) in weights.iter().zip(grads).zip(&state.m) {
        if w.len() != g.len() || w.len() != m.len() {
            return Err(Error::dim("adam: tensor length mismatch"));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, w) in weights.iter_mut().enumerate() {
        let g = &grads[k];
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            w[i] -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut w = vec![0.5, -0.25];
        let mut fresh = AdamState::new(&[2]);
        adam_step(&mut [&mut w[..]], &[vec![0.0, 0.0]], &mut fresh, &cfg).unwrap();
        assert_eq!(w, vec![0.5, -0.25]);

        let mut st = AdamState::new(&[2]);
        st.m[0] = vec![0.2, 0.1];
        st.v[0] = vec![0.04, 0.01];
        adam_step(&mut [&mut w[..]], &[vec![0.0, 0.0]], &mut st, &cfg).unwrap();
        assert!((st.m[0][0] - 0.9 * 0.2).abs() < 1e-15);
        assert!((st.v[0][1] - 0.999 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let cfg = TrainConfig::default();
        let mut w = vec![1.0];
        let mut st = AdamState::new(&[1]);
        adam_step(&mut [&mut w[..]], &[vec![1.0]], &mut st, &cfg).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let cfg = TrainConfig::default();
        let g = vec![0.3, -1.2, 0.0, 4.0];
        let mut a = vec![0.1, 0.2, 0.3, 0.4];
        let mut b = a.clone();
        let mut st = AdamState::new(&[4, 4]);
        adam_step(&mut [&mut a[..], &mut b[..]], &[g.clone(), g], &mut st, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let cfg = TrainConfig::default();
        let mut w = vec![1.0, 2.0];
        let mut st = AdamState::new(&[2]);
        assert!(adam_step(&mut [&mut w[..]], &[vec![1.0]], &mut st, &cfg).is_err());
    }
}
