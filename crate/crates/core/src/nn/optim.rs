use super::Real;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient to this L2 norm when it is exceeded.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

/// Adam over a list of flat parameter buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update. `params` and `grads` must be in the same order as the
    /// shapes passed to [`Adam::new`].
    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count");
        assert_eq!(grads.len(), self.m.len(), "gradient group count");
        self.t += 1;
        let mut scale = 1.0;
        if let Some(max_norm) = self.config.max_grad_norm {
            let sq: f64 = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| {
                    let f = v.to_f64().unwrap();
                    f * f
                })
                .sum();
            let norm = sq.sqrt();
            if norm > max_norm {
                scale = max_norm / (norm + 1e-12);
            }
        }
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let lr_t = T::lit(c.lr * bc2.sqrt() / bc1);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let eps = T::lit(c.eps * bc2.sqrt());
        let scale = T::lit(scale);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "gradient length");
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
