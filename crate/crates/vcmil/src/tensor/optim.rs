//! Adam with bias correction, plus global gradient-norm clipping.

use super::Tensor;

pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global L2 norm ceiling applied to all gradients before the update.
    pub clip_norm: Option<f32>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    /// First/second moment buffers, one pair per parameter, in the order the
    /// parameters are passed to `step`.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Adam {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over `params`. Parameters with no gradient buffer are left
    /// untouched (their moments still decay is deliberately NOT modeled; the
    /// moment buffers simply do not advance for them this step).
    ///
    /// `lr_override` substitutes the configured learning rate for this step
    /// only, which is how schedules plug in.
    pub fn step(&mut self, params: &[Tensor], lr_override: Option<f32>) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        self.step += 1;
        let lr = lr_override.unwrap_or(self.config.lr);

        let mut grads: Vec<Option<Vec<f32>>> = params.iter().map(|p| p.grad()).collect();

        if let Some(max_norm) = self.config.clip_norm {
            let total: f64 = grads
                .iter()
                .flatten()
                .flat_map(|g| g.iter())
                .map(|&x| (x as f64) * (x as f64))
                .sum();
            let norm = total.sqrt();
            if norm > max_norm as f64 {
                let scale = (max_norm as f64 / norm) as f32;
                for g in grads.iter_mut().flatten() {
                    for x in g.iter_mut() {
                        *x *= scale;
                    }
                }
            }
        }

        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in params.iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut data = p.to_vec();
            for j in 0..data.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= lr * mhat / (vhat.sqrt() + self.config.eps);
            }
            p.set_data(&data);
        }
    }
}
