//! Gradient descent with momentum, cosine learning-rate decay, and global
//! gradient-norm clipping. Operates on flat parameter vectors.

#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub base_lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub total_steps: usize,
    step: usize,
    velocity: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(n_params: usize, base_lr: f64, total_steps: usize) -> Self {
        MomentumSgd {
            base_lr,
            momentum: 0.9,
            clip_norm: 5.0,
            total_steps: total_steps.max(1),
            step: 0,
            velocity: vec![0.0; n_params],
        }
    }

    /// Cosine-decayed learning rate for the current step.
    pub fn current_lr(&self) -> f64 {
        let t = (self.step as f64 / self.total_steps as f64).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// One update: clip the gradient's global norm, fold into the velocity,
    /// and descend.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grads.len(), params.len());
        let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.current_lr();
        for ((p, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grads) {
            *v = self.momentum * *v + scale * g;
            *p -= lr * *v;
        }
        self.step += 1;
    }
}
