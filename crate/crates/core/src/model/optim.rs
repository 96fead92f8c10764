//! Adam with bias-corrected moment estimates.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};

use crate::nn::Real;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: Vec<ArrayD<T>>,
    second: Vec<ArrayD<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates `params[i]` with `grads[i]`. Moment slots are bound to list
    /// positions, so callers must pass tensors in the same order every step.
    pub fn step(&mut self, params: Vec<ArrayViewMutD<'_, T>>, grads: Vec<ArrayViewD<'_, T>>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ in length");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let correct1 = T::of(1.0 - self.beta1.powi(t));
        let correct2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.eps);
        for (((mut p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(&mut p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = array![1.0f64, -2.0].into_dyn();
        let g = array![0.5f64, -3.0].into_dyn();
        let mut adam = Adam::new(0.1);
        adam.step(vec![w.view_mut()], vec![g.view()]);
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut w = array![3.0f64, -4.0].into_dyn();
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            let g = w.mapv(|v| 2.0 * v);
            adam.step(vec![w.view_mut()], vec![g.view()]);
        }
        assert!(w.iter().all(|v| v.abs() < 1e-3), "{w:?}");
    }
}
