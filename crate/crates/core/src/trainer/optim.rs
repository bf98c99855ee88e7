//! Adam with decoupled weight decay.

use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. `grads[i]` must have the shape of `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        let c = self.config;
        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let update = (m[j] / bias1) / ((v[j] / bias2).sqrt() + c.eps) + c.weight_decay * *w;
                let delta = c.learning_rate * update;
                if delta != 0.0 {
                    *w -= delta;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::vector(vec![0.5, -3.0])];
        let cfg = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &g);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let init = vec![Tensor::vector(vec![0.0, -0.0, 1.5, -7.25])];
        let mut p = init.clone();
        let g = vec![Tensor::vector(vec![1.0, -1.0, 2.0, 0.0])];
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.0,
                ..AdamWConfig::default()
            },
            &p,
        );
        for _ in 0..3 {
            opt.step(&mut p, &g);
        }
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p[0]), bits(&init[0]));
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut p = vec![Tensor::vector(vec![2.0])];
        let g = vec![Tensor::vector(vec![0.0])];
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.5,
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            &p,
        );
        opt.step(&mut p, &g);
        assert!((p[0].data()[0] - 1.9).abs() < 1e-12);
    }
}
