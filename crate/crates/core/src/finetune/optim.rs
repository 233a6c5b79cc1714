use serde::{Deserialize, Serialize};

use crate::encoder::{Gradients, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with bias correction and optional decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(params).0;
        Adam { config, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &Gradients) {
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((tensor, g), m), v) in params.tensors_mut().into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in tensor.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                *p -= c.learning_rate * (update + c.weight_decay * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Head, HeadKind};

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut head = Head::new(HeadKind::Classification { num_classes: 3 }, 5, 1).unwrap();
        let before = head.clone();
        let mut adam = Adam::new(&head, AdamConfig::new(1e-3));
        let zero = Gradients::zeros_like(&head);
        for _ in 0..10 {
            adam.step(&mut head, &zero);
        }
        assert_eq!(head, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected m / sqrt(v) is sign(g) on the first step
        let mut head = Head::new(HeadKind::Regression, 2, 1).unwrap();
        let before = head.weight().data.clone();
        let mut adam = Adam::new(&head, AdamConfig::new(0.01));
        let grads = Gradients(vec![vec![3.0, -0.5], vec![0.0]]);
        adam.step(&mut head, &grads);
        let after = &head.weight().data;
        assert!((before[0] - after[0] - 0.01).abs() < 1e-9);
        assert!((after[1] - before[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut head = Head::new(HeadKind::Regression, 1, 0).unwrap();
        head.weight_mut().data = vec![5.0];
        let mut adam = Adam::new(&head, AdamConfig::new(0.1));
        for _ in 0..500 {
            let w = head.weight().data[0];
            adam.step(&mut head, &Gradients(vec![vec![2.0 * (w - 1.0)], vec![0.0]]));
        }
        assert!((head.weight().data[0] - 1.0).abs() < 1e-3);
    }
}
