use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, SeparableSystem, SystemKind};
use crate::ad::Tensor;
use crate::integrators::PhaseState;
use crate::Result;

pub const N_MASSES: usize = 20;
/// Fine leapfrog steps per coarse sample.
pub const COARSEN: usize = 100;

/// Masses on a line joined by springs, with both ends tied to fixed ground.
///
/// `H = Σ p_i²/(2m_i) + Σ_j (k_j/2)(q_{j+1} − q_j)²` over the `n + 1` springs,
/// with the ground positions fixed at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringChain {
    pub masses: Vec<f64>,
    /// `masses.len() + 1` spring constants; spring `j` joins mass `j − 1` and
    /// mass `j`, with ground on either end.
    pub springs: Vec<f64>,
}

impl SpringChain {
    /// Masses and spring constants drawn from `U(0.5, 1.5)`.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masses = (0..N_MASSES).map(|_| rng.random_range(0.5..1.5)).collect();
        let springs = (0..=N_MASSES).map(|_| rng.random_range(0.5..1.5)).collect();
        Self { masses, springs }
    }

    /// Symmetric `S` with `V(q) = ½ qᵀ S q`.
    pub fn stiffness(&self) -> Tensor {
        let n = self.masses.len();
        let k = &self.springs;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = k[i] + k[i + 1];
            if i + 1 < n {
                s[i * n + i + 1] = -k[i + 1];
                s[(i + 1) * n + i] = -k[i + 1];
            }
        }
        Tensor::matrix(n, n, s)
    }

    pub fn inverse_masses(&self) -> Vec<f64> {
        self.masses.iter().map(|m| 1.0 / m).collect()
    }

    /// Initial state with `p_i, q_i ~ N(0, 1)`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseState {
        let n = self.masses.len();
        let p = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let q = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        PhaseState { p, q }
    }

    /// Fine leapfrog at `dt / COARSEN`, keeping every `COARSEN`-th state.
    pub fn ground_truth(&self, initial: &PhaseState, traj_len: usize, dt: f64) -> Result<Vec<PhaseState>> {
        let fine = self.leapfrog(initial, (traj_len - 1) * COARSEN, dt / COARSEN as f64)?;
        Ok(fine.into_iter().step_by(COARSEN).collect())
    }

    pub fn generate(&self, n_traj: usize, traj_len: usize, dt: f64, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::empty(SystemKind::SpringChain, self.masses.len(), traj_len, dt, seed);
        ds.extra = serde_json::to_value(self)?;
        for _ in 0..n_traj {
            let z0 = self.sample_initial(&mut rng);
            ds.push_trajectory(&self.ground_truth(&z0, traj_len, dt)?)?;
        }
        Ok(ds)
    }
}

impl SeparableSystem for SpringChain {
    fn dim(&self) -> usize {
        self.masses.len()
    }

    fn kinetic_grad(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.masses).map(|(p, m)| p / m).collect()
    }

    fn potential_grad(&self, q: &[f64]) -> Result<Vec<f64>> {
        let n = q.len();
        let k = &self.springs;
        Ok((0..n)
            .map(|i| {
                let left = if i == 0 { 0.0 } else { q[i - 1] };
                let right = if i + 1 == n { 0.0 } else { q[i + 1] };
                k[i] * (q[i] - left) - k[i + 1] * (right - q[i])
            })
            .collect())
    }

    fn energy(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        let n = q.len();
        let kin: f64 = p.iter().zip(&self.masses).map(|(p, m)| p * p / (2.0 * m)).sum();
        let pot: f64 = (0..=n)
            .map(|j| {
                let a = if j == 0 { 0.0 } else { q[j - 1] };
                let b = if j == n { 0.0 } else { q[j] };
                0.5 * self.springs[j] * (b - a) * (b - a)
            })
            .sum();
        Ok(kin + pot)
    }
}
