use ndarray::{Array2, Zip};

use super::params::ParamSet;

/// Adam with decoupled weight decay. Decay applies only to parameters the
/// `decays` predicate selects (weight matrices by default).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay_mask: Vec<bool>,
}

pub fn is_weight_matrix(name: &str) -> bool {
    name.ends_with(".weight")
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|(_, v)| Array2::zeros(v.raw_dim())).collect(),
            v: params.iter().map(|(_, v)| Array2::zeros(v.raw_dim())).collect(),
            decay_mask: params.iter().map(|(n, _)| is_weight_matrix(n)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Array2<f64>>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for i in 0..params.len() {
            let p = params.value_mut(i);
            if self.decay_mask[i] && self.weight_decay != 0.0 {
                let shrink = 1.0 - lr * self.weight_decay;
                p.mapv_inplace(|x| x * shrink);
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grads[i] {
                Some(g) => {
                    Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| x * b1);
                    v.mapv_inplace(|x| x * b2);
                }
            }
            if lr == 0.0 {
                continue;
            }
            Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let update = (m / bc1) / ((v / bc2).sqrt() + eps);
                if update != 0.0 {
                    *p -= lr * update;
                }
            });
        }
    }
}
