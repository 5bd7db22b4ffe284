use super::TrainConfig;
use crate::model::DomainParameters;

/// One RMSprop update on a flat tensor:
/// `s ← ρ·s + (1−ρ)·g²`, `w ← w − lr·g / (√s + eps)`.
pub fn rmsprop_update(w: &mut [f64], g: &[f64], s: &mut [f64], lr: f64, decay: f64, eps: f64) {
    debug_assert!(w.len() == g.len() && w.len() == s.len());
    for ((w, &g), s) in w.iter_mut().zip(g).zip(s.iter_mut()) {
        *s = decay * *s + (1.0 - decay) * g * g;
        *w -= lr * g / (s.sqrt() + eps);
    }
}

/// RMSprop state over every domain's tensors.
#[derive(Debug, Clone)]
pub struct RmsProp {
    lr: f64,
    decay: f64,
    eps: f64,
    freeze_x0: bool,
    freeze_mapping: bool,
    state: Vec<DomainParameters>,
}

impl RmsProp {
    pub fn new(cfg: &TrainConfig, params: &[DomainParameters]) -> Self {
        Self {
            lr: cfg.learning_rate,
            decay: cfg.rmsprop_decay,
            eps: cfg.rmsprop_eps,
            freeze_x0: cfg.freeze_x0,
            freeze_mapping: cfg.identity_mapping,
            state: params.iter().map(DomainParameters::zeros_like).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [DomainParameters], grads: &[DomainParameters]) {
        let (freeze_x0, freeze_mapping) = (self.freeze_x0, self.freeze_mapping);
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.state.iter_mut()) {
            let grads = g.named_tensors();
            let states = s.named_tensors_mut();
            for (((name, w), (_, g)), (_, s)) in p.named_tensors_mut().into_iter().zip(grads).zip(states) {
                if is_frozen(&name, freeze_x0, freeze_mapping) {
                    continue;
                }
                rmsprop_update(w, g, s, self.lr, self.decay, self.eps);
            }
        }
    }

}

fn is_frozen(name: &str, freeze_x0: bool, freeze_mapping: bool) -> bool {
    match name {
        "x0" => freeze_x0,
        "w_b" | "w1" | "b1" | "w2" | "b2" => freeze_mapping,
        _ => false,
    }
}
