use std::f64::consts::{FRAC_PI_3, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, SeparableSystem, SystemKind};
use crate::integrators::{adaptive_integrate, DopriOptions, PhaseState};
use crate::{Error, Result};

/// Below this pairwise distance the field refuses to evaluate.
pub const COLLISION_DISTANCE: f64 = 1e-6;
/// Sampled trajectories whose bodies come closer than this are rejected.
pub const REJECT_DISTANCE: f64 = 0.2;
pub const MAX_REJECTIONS: usize = 100;
const JITTER: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Three gravitating bodies in the plane; `q = (x₁, y₁, x₂, y₂, x₃, y₃)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeBody {
    pub masses: [f64; 3],
    pub g: f64,
}

impl Default for ThreeBody {
    fn default() -> Self {
        Self {
            masses: [1.0; 3],
            g: 1.0,
        }
    }
}

impl ThreeBody {
    fn pairs() -> [(usize, usize); 3] {
        [(0, 1), (0, 2), (1, 2)]
    }

    fn separation(q: &[f64], i: usize, j: usize) -> (f64, f64, f64) {
        let dx = q[2 * i] - q[2 * j];
        let dy = q[2 * i + 1] - q[2 * j + 1];
        (dx, dy, (dx * dx + dy * dy).sqrt())
    }

    pub fn min_distance(q: &[f64]) -> f64 {
        Self::pairs()
            .iter()
            .map(|&(i, j)| Self::separation(q, i, j).2)
            .fold(f64::INFINITY, f64::min)
    }

    /// Bodies near a circle of radius `r ~ U(0.9, 1.2)`, 120° apart up to a
    /// few degrees of jitter, moving tangentially at roughly the circular-orbit
    /// speed. Positions and momenta are shifted to the centre-of-mass frame.
    pub fn sample_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseState {
        let r: f64 = rng.random_range(0.9..1.2);
        let base: f64 = rng.random_range(0.0..TAU);
        // Circular speed for three equal masses on an equilateral triangle.
        let v_circ = (self.g * self.masses[0] / (3f64.sqrt() * r)).sqrt();
        let mut p = vec![0.0; 6];
        let mut q = vec![0.0; 6];
        for b in 0..3 {
            let th = base + 2.0 * FRAC_PI_3 * b as f64 + rng.random_range(-JITTER..JITTER);
            let speed = v_circ * rng.random_range(0.95..1.05);
            q[2 * b] = r * th.cos();
            q[2 * b + 1] = r * th.sin();
            p[2 * b] = -self.masses[b] * speed * th.sin();
            p[2 * b + 1] = self.masses[b] * speed * th.cos();
        }
        let total: f64 = self.masses.iter().sum();
        for axis in 0..2 {
            let mom: f64 = (0..3).map(|b| p[2 * b + axis]).sum();
            let com: f64 = (0..3).map(|b| self.masses[b] * q[2 * b + axis]).sum::<f64>() / total;
            for b in 0..3 {
                p[2 * b + axis] -= self.masses[b] * mom / total;
                q[2 * b + axis] -= com;
            }
        }
        PhaseState { p, q }
    }

    /// Adaptive ground truth sampled every `dt`.
    pub fn ground_truth(&self, initial: &PhaseState, traj_len: usize, dt: f64) -> Result<Vec<PhaseState>> {
        let opts = DopriOptions {
            rtol: 1e-10,
            atol: 1e-10,
            sample_every: Some(dt),
            initial_step: Some(1e-3 * dt),
            ..Default::default()
        };
        let t_end = dt * (traj_len - 1) as f64;
        let dense = adaptive_integrate(|z| self.field_concat(z), &initial.to_concat(), t_end, &opts)?;
        if dense.states.len() != traj_len {
            return Err(Error::Length(format!(
                "solver returned {} samples, wanted {traj_len}",
                dense.states.len()
            )));
        }
        dense.states.iter().map(|z| PhaseState::from_concat(z)).collect()
    }

    /// Draws candidates until one integrates cleanly for `traj_len` samples
    /// without a close encounter.
    pub fn sample_trajectory<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        traj_len: usize,
        dt: f64,
    ) -> Result<Vec<PhaseState>> {
        for _ in 0..=MAX_REJECTIONS {
            let z0 = self.sample_candidate(rng);
            match self.ground_truth(&z0, traj_len, dt) {
                Ok(traj) if traj.iter().all(|s| Self::min_distance(&s.q) > REJECT_DISTANCE) => {
                    return Ok(traj)
                }
                Ok(_) | Err(Error::NearCollision { .. }) | Err(Error::StepUnderflow { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Err(Error::SamplerExhausted(MAX_REJECTIONS))
    }

    pub fn sample_initial(&self, seed: u64) -> Result<PhaseState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_trajectory(&mut rng, 2, 1.0)?.swap_remove(0))
    }

    pub fn generate(&self, n_traj: usize, traj_len: usize, dt: f64, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::empty(SystemKind::ThreeBody, 6, traj_len, dt, seed);
        ds.extra = serde_json::to_value(self)?;
        for _ in 0..n_traj {
            ds.push_trajectory(&self.sample_trajectory(&mut rng, traj_len, dt)?)?;
        }
        Ok(ds)
    }
}

impl SeparableSystem for ThreeBody {
    fn dim(&self) -> usize {
        6
    }

    fn kinetic_grad(&self, p: &[f64]) -> Vec<f64> {
        (0..6).map(|i| p[i] / self.masses[i / 2]).collect()
    }

    fn potential_grad(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; 6];
        for (i, j) in Self::pairs() {
            let (dx, dy, r) = Self::separation(q, i, j);
            if r < COLLISION_DISTANCE {
                return Err(Error::NearCollision { distance: r });
            }
            let c = self.g * self.masses[i] * self.masses[j] / (r * r * r);
            g[2 * i] += c * dx;
            g[2 * i + 1] += c * dy;
            g[2 * j] -= c * dx;
            g[2 * j + 1] -= c * dy;
        }
        Ok(g)
    }

    fn energy(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        let kin: f64 = (0..6).map(|i| p[i] * p[i] / (2.0 * self.masses[i / 2])).sum();
        let mut pot = 0.0;
        for (i, j) in Self::pairs() {
            let r = Self::separation(q, i, j).2;
            if r < COLLISION_DISTANCE {
                return Err(Error::NearCollision { distance: r });
            }
            pot -= self.g * self.masses[i] * self.masses[j] / r;
        }
        Ok(kin + pot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::test_util::assert_field_matches_energy;

    #[test]
    fn equilateral_forces_point_to_centroid() {
        let sys = ThreeBody::default();
        let q: Vec<f64> = (0..3)
            .flat_map(|b| {
                let th = 2.0 * FRAC_PI_3 * b as f64 + 0.3;
                [th.cos(), th.sin()]
            })
            .collect();
        let (f, _) = sys.field(&[0.0; 6], &q).unwrap();
        // side √3 at unit radius: |F| = 2 cos 30° / 3 = 1/√3
        for b in 0..3 {
            let (fx, fy) = (f[2 * b], f[2 * b + 1]);
            let mag = (fx * fx + fy * fy).sqrt();
            assert!((mag - 1.0 / 3f64.sqrt()).abs() < 1e-12);
            let cross = fx * q[2 * b + 1] - fy * q[2 * b];
            assert!(cross.abs() < 1e-12);
            assert!(fx * q[2 * b] + fy * q[2 * b + 1] < 0.0);
        }
        let q2: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
        let (f2, _) = sys.field(&[0.0; 6], &q2).unwrap();
        for (a, b) in f.iter().zip(&f2) {
            assert!((a / 4.0 - b).abs() < 1e-14);
        }
    }

    #[test]
    fn field_matches_energy() {
        let sys = ThreeBody::default();
        let z = sys.sample_initial(3).unwrap();
        assert_field_matches_energy(&sys, &z.p, &z.q, 1e-8);
    }

    #[test]
    fn near_collision_is_an_error() {
        let sys = ThreeBody::default();
        let q = [0.0, 0.0, 1e-7, 0.0, 1.0, 1.0];
        assert!(matches!(sys.potential_grad(&q), Err(Error::NearCollision { .. })));
    }

    #[test]
    fn sampler_properties() {
        let sys = ThreeBody::default();
        for seed in 0..10 {
            let z = sys.sample_initial(seed).unwrap();
            assert_eq!(z, sys.sample_initial(seed).unwrap());
            for axis in 0..2 {
                let m: f64 = (0..3).map(|b| z.p[2 * b + axis]).sum();
                assert!(m.abs() < 1e-12);
            }
            assert!(ThreeBody::min_distance(&z.q) > 0.5);
        }
    }

    #[test]
    fn ground_truth_conserves_energy() {
        let sys = ThreeBody::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = sys.sample_trajectory(&mut rng, 10, 1.0).unwrap();
        let e0 = sys.energy(&traj[0].p, &traj[0].q).unwrap();
        for s in &traj {
            assert!((sys.energy(&s.p, &s.q).unwrap() - e0).abs() < 1e-7 * e0.abs());
        }
    }
}
