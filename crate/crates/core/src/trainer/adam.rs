use crate::tensorgraph::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moments kept in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// State for parameters of the given element counts.
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    /// One update of every parameter; `grads[i]` pairs with the `i`-th
    /// parameter.
    pub fn step<'a, T: Scalar + 'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Vec<f64>],
        lr: f64,
    ) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let mut count = 0;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *x = T::lit(x.to_f64_lossy() - update);
            }
            count += 1;
        }
        assert_eq!(count, grads.len(), "parameter count mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(param: f64, grad: f64, lr: f64) -> (f64, Adam) {
        let mut p = [Tensor::<f64>::scalar(param)];
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        adam.step(p.iter_mut(), &[vec![grad]], lr);
        (p[0].data()[0], adam)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (p, _) = run(1.0, 2.0, 0.1);
        assert!((p - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_param_and_decays_moments() {
        let mut p = [Tensor::<f64>::scalar(1.0)];
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        adam.step(p.iter_mut(), &[vec![2.0]], 0.1);
        let after_first = p[0].data()[0];
        let (m1, v1) = (adam.moments(0).0[0], adam.moments(0).1[0]);
        let mut q = [Tensor::<f64>::scalar(5.0)];
        let mut fresh = Adam::new(AdamConfig::default(), &[1]);
        fresh.step(q.iter_mut(), &[vec![0.0]], 0.1);
        assert_eq!(q[0].data()[0], 5.0);
        adam.step(p.iter_mut(), &[vec![0.0]], 0.1);
        assert_eq!(adam.moments(0).0[0], 0.9 * m1);
        assert_eq!(adam.moments(0).1[0], 0.999 * v1);
        assert!(p[0].data()[0] < after_first, "momentum keeps moving the parameter");
    }

    #[test]
    fn identical_gradients_update_identically() {
        let mut p = [Tensor::<f64>::full(&[2], 0.3), Tensor::<f64>::full(&[1], 0.3)];
        let mut adam = Adam::new(AdamConfig::default(), &[2, 1]);
        for k in 0..5 {
            let g = 0.1 * k as f64 - 0.2;
            adam.step(p.iter_mut(), &[vec![g, g], vec![g]], 0.01);
        }
        assert_eq!(p[0].data()[0], p[0].data()[1]);
        assert_eq!(p[0].data()[0], p[1].data()[0]);
        assert_eq!(adam.steps_taken(), 5);
    }
}
