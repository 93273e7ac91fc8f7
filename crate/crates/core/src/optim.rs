use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// AdamW with decoupled weight decay, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Advances the shared step counter; call once per optimisation step
    /// before the per-parameter [`AdamW::update`] calls.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) {
        let n = param.numel();
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = AdamW::new(0.1);
        let mut p = Tensor::from_rows(&[&[1.0, -1.0]]);
        let g = Tensor::from_rows(&[&[3.0, -0.5]]);
        opt.begin_step();
        opt.update("w", &mut p, &g);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = AdamW::new(0.05);
        let mut p = Tensor::from_rows(&[&[4.0, -3.0]]);
        for _ in 0..2000 {
            let g = p.scale(2.0);
            opt.begin_step();
            opt.update("w", &mut p, &g);
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-2));
    }
}
