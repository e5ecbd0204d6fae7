//! Plain SGD with global gradient-norm clipping.

use super::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct SgdOptimizer {
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for SgdOptimizer {
    fn default() -> Self {
        SgdOptimizer { learning_rate: 0.005, clip_norm: 5.0 }
    }
}

impl SgdOptimizer {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        SgdOptimizer { learning_rate, clip_norm }
    }

    /// Clip the global gradient norm, apply `p -= lr * grad`, zero the grads.
    pub fn step(&self, params: &mut ParamSet) {
        let norm = params.grad_norm();
        let scale = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        for p in params.iter_mut() {
            let t = &mut p.value;
            if let Some(g) = t.grad.as_mut() {
                for (v, gv) in t.values.iter_mut().zip(g.iter_mut()) {
                    *v -= self.learning_rate * scale * *gv;
                    *gv = 0.0;
                }
            }
        }
    }
}
