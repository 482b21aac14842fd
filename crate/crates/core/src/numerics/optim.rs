use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrad};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ v + (g + λ w)`, `w ← w − η v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<MlpGrad>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &MlpGrad, lr: f64) {
        let velocity = self.velocity.get_or_insert_with(|| MlpGrad::zeros_like(net));
        for ((layer, g), v) in net.layers_mut().iter_mut().zip(&grad.layers).zip(&mut velocity.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let grads = g.weights.iter().chain(&g.bias);
            let vels = v.weights.iter_mut().chain(v.bias.iter_mut());
            for ((w, gi), vi) in params.zip(grads).zip(vels) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine annealing from the base rate towards zero over the run.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = epoch as f64 / total_epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}
