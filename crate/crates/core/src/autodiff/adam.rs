use serde::{Deserialize, Serialize};

use super::NnError;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Default betas (0.9, 0.999) and epsilon 1e-8, moments sized to `shapes`.
    pub fn new(lr: f64, param_lens: &[usize]) -> Self {
        Self {
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&[f64]]) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(lr, &lens)
    }

    /// Applies one update in place and increments `t`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::InvalidTensor(format!(
                "adam tracks {} buffers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(NnError::InvalidTensor(format!(
                    "adam buffer {i} length mismatch"
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut w = vec![0.5, -1.5, 3.0];
        let mut adam = AdamState::new(0.1, &[3]);
        for _ in 0..10 {
            adam.step(&mut [&mut w], &[&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(w, vec![0.5, -1.5, 3.0]);
        assert_eq!(adam.t, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.7, -42.0] {
            let mut w = vec![1.0];
            let mut adam = AdamState::new(0.01, &[1]);
            adam.step(&mut [&mut w], &[&[g]]).unwrap();
            let step = 1.0 - w[0];
            assert!((step.abs() - 0.01).abs() < 1e-6, "g={g} step={step}");
            assert_eq!(step.signum(), g.signum());
        }
    }

    #[test]
    fn minimizes_square_from_one() {
        // Running the recurrence: 200 steps of lr 0.05 on w^2 bring |w| below 0.1.
        let mut w = vec![1.0];
        let mut adam = AdamState::new(0.05, &[1]);
        for _ in 0..200 {
            let g = 2.0 * w[0];
            adam.step(&mut [&mut w], &[&[g]]).unwrap();
        }
        assert!(w[0].abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut w = vec![1.0, 2.0];
        let mut adam = AdamState::new(0.1, &[3]);
        assert!(adam.step(&mut [&mut w], &[&[0.0, 0.0]]).is_err());
    }
}
