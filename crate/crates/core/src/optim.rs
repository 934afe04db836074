use serde::{Deserialize, Serialize};

use crate::autograd::{Grads, ParamSet};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Tensors without a gradient in a step are
/// left untouched, moments included.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Mat> = params
            .iter()
            .map(|(_, _, p)| Mat::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut set = ParamSet::new();
        let x = set.insert("x", Mat::row_vector(&[3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &set,
        );
        for _ in 0..2000 {
            let mut t = Tape::new();
            let v = t.param(&set, x);
            let l = t.sum_squares(v);
            let g = t.backward(l, &set);
            opt.step(&mut set, &g);
        }
        assert!(set.get(x).max_abs() < 1e-3, "{:?}", set.get(x));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut set = ParamSet::new();
        let x = set.insert("x", Mat::scalar(1.0));
        let mut opt = Adam::new(AdamConfig::default(), &set);
        let mut t = Tape::new();
        let v = t.param(&set, x);
        let l = t.scale(v, 5.0);
        let l = t.sum_all(l);
        let g = t.backward(l, &set);
        opt.step(&mut set, &g);
        assert!((set.get(x).item() - (1.0 - 0.001)).abs() < 1e-9);
    }
}
