use crate::error::{OsrError, Result};
use crate::tensor::Tensor;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of completed steps.
    pub t: u64,
    first: Vec<Vec<Tensor>>,
    second: Vec<Vec<Tensor>>,
}

impl AdamState {
    pub fn new(params: &[Vec<Tensor>], learning_rate: f64) -> Self {
        let zeros = |ps: &[Vec<Tensor>]| -> Vec<Vec<Tensor>> {
            ps.iter()
                .map(|layer| layer.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect()
        };
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<Tensor>], grads: &[Vec<Tensor>]) -> Result<()> {
        let shapes_match = params.len() == self.first.len()
            && grads.len() == params.len()
            && params.iter().zip(grads).zip(&self.first).all(|((p, g), m)| {
                p.len() == g.len()
                    && p.len() == m.len()
                    && p
                        .iter()
                        .zip(g)
                        .zip(m)
                        .all(|((a, b), c)| a.shape() == b.shape() && a.shape() == c.shape())
            });
        if !shapes_match {
            return Err(OsrError::Input(
                "parameter, gradient and optimizer shapes disagree".into(),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (l, layer) in params.iter_mut().enumerate() {
            for (k, p) in layer.iter_mut().enumerate() {
                let g = grads[l][k].data();
                let m = self.first[l][k].data_mut();
                let v = self.second[l][k].data_mut();
                for (i, w) in p.data_mut().iter_mut().enumerate() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Vec<Tensor>> {
        vec![vec![Tensor::filled(&[1], v)]]
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar(0.25);
        let mut adam = AdamState::new(&p, 0.001);
        adam.step(&mut p, &scalar(0.0)).unwrap();
        assert_eq!(p[0][0].data(), &[0.25]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps)
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(&p, 0.001);
        adam.step(&mut p, &scalar(1.0)).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0][0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_tensors_get_identical_updates() {
        let mut p = vec![vec![Tensor::filled(&[3], 1.0), Tensor::filled(&[3], 1.0)]];
        let g = vec![vec![
            Tensor::from_vec(&[3], vec![0.1, -2.0, 5.0]).unwrap(),
            Tensor::from_vec(&[3], vec![0.1, -2.0, 5.0]).unwrap(),
        ]];
        let mut adam = AdamState::new(&p, 0.01);
        for _ in 0..5 {
            adam.step(&mut p, &g).unwrap();
        }
        assert_eq!(p[0][0], p[0][1]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(&p, 0.001);
        let g = vec![vec![Tensor::zeros(&[2])]];
        assert!(adam.step(&mut p, &g).is_err());
    }
}
