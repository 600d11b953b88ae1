use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "Adam state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Spec("non-finite gradient passed to Adam".into()));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Per-epoch learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchedulerSpec {
    Constant,
    /// Multiply by `factor` after `patience` epochs without improvement.
    Plateau { patience: usize, factor: f64 },
    /// Multiply by `factor` every epoch, never going below `floor`.
    Exponential { factor: f64, floor: f64 },
}

impl SchedulerSpec {
    pub fn plateau() -> Self {
        Self::Plateau {
            patience: 15,
            factor: 0.7,
        }
    }

    pub fn exponential() -> Self {
        Self::Exponential {
            factor: 0.99,
            floor: 1e-4,
        }
    }
}

/// Relative improvement needed to reset the plateau counter.
const PLATEAU_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct Scheduler {
    spec: SchedulerSpec,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Scheduler {
    pub fn new(spec: SchedulerSpec, lr: f64) -> Self {
        Self {
            spec,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records the epoch metric and returns the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        match self.spec {
            SchedulerSpec::Constant => {}
            SchedulerSpec::Plateau { patience, factor } => {
                if metric < self.best * (1.0 - PLATEAU_THRESHOLD) {
                    self.best = metric;
                    self.bad_epochs = 0;
                } else {
                    self.bad_epochs += 1;
                    if self.bad_epochs >= patience {
                        self.lr *= factor;
                        self.bad_epochs = 0;
                    }
                }
            }
            SchedulerSpec::Exponential { factor, floor } => {
                self.lr = (self.lr * factor).max(floor);
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut adam = Adam::new(2);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[0.5, 0.5], 0.01).unwrap();
        let before = p.clone();
        let m_before = adam.moments().0.to_vec();
        adam.step(&mut p, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(p, before);
        for (a, b) in adam.moments().0.iter().zip(m_before) {
            assert!((a - 0.9 * b).abs() < 1e-18);
        }
        let mut fresh = Adam::new(1);
        let mut q = vec![3.0];
        fresh.step(&mut q, &[0.0], 0.1).unwrap();
        assert_eq!(q, vec![3.0]);
    }

    #[test]
    fn first_step_size() {
        let mut adam = Adam::new(1);
        let mut p = vec![0.0];
        adam.step(&mut p, &[0.5], 0.001).unwrap();
        // m̂ = 0.5, v̂ = 0.25 after bias correction
        let expected = -0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn minimises_a_parabola() {
        let mut adam = Adam::new(1);
        let mut p = vec![1.0];
        let mut reached = None;
        for i in 0..5000 {
            let g = 2.0 * p[0];
            adam.step(&mut p, &[g], 0.01).unwrap();
            if p[0].abs() < 1e-3 {
                reached = Some(i);
                break;
            }
        }
        assert!(reached.is_some());
    }

    #[test]
    fn rejects_bad_input() {
        let mut adam = Adam::new(1);
        assert!(adam.step(&mut [0.0], &[f64::NAN], 0.1).is_err());
        assert!(adam.step(&mut [0.0, 1.0], &[0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn plateau_schedule() {
        let mut s = Scheduler::new(SchedulerSpec::plateau(), 0.001);
        s.step(1.0);
        for _ in 0..14 {
            assert_eq!(s.step(1.0), 0.001);
        }
        assert!((s.step(1.0) - 0.0007).abs() < 1e-18);
        let mut s = Scheduler::new(SchedulerSpec::plateau(), 0.001);
        for i in 0..100 {
            assert_eq!(s.step(1.0 / (i + 1) as f64), 0.001);
        }
    }

    #[test]
    fn exponential_schedule() {
        let mut s = Scheduler::new(SchedulerSpec::exponential(), 0.005);
        for k in 1..=600 {
            let lr = s.step(0.0);
            let expected = (0.005 * 0.99f64.powi(k)).max(1e-4);
            assert!((lr - expected).abs() <= 1e-12 * expected);
        }
        assert_eq!(s.lr(), 1e-4);
    }
}
