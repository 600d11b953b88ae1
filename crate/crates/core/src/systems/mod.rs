//! Ground-truth physical systems, trajectory generation, noise and the
//! dataset file format.

mod billiard;
mod dataset;
mod spring;
mod three_body;

pub use billiard::{extract_patch, Billiard, BilliardWorld, WallImage};
pub use dataset::{add_noise, Dataset, DATASET_MAGIC};
pub use spring::SpringChain;
pub use three_body::ThreeBody;

use serde::{Deserialize, Serialize};

use crate::integrators::{leapfrog_trajectory, PhaseState};
use crate::{Error, Result};

/// Which physical system a dataset or experiment refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    SpringChain,
    ThreeBody,
    Billiard,
}

impl SystemKind {
    pub fn dim(self) -> usize {
        match self {
            Self::SpringChain => spring::N_MASSES,
            Self::ThreeBody => 6,
            Self::Billiard => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SpringChain => "spring_chain",
            Self::ThreeBody => "three_body",
            Self::Billiard => "billiard",
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spring_chain" | "spring" => Ok(Self::SpringChain),
            "three_body" => Ok(Self::ThreeBody),
            "billiard" => Ok(Self::Billiard),
            other => Err(Error::Config(format!("unknown system {other:?}"))),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A known separable Hamiltonian `H = K(p) + V(q)`.
pub trait SeparableSystem {
    fn dim(&self) -> usize;

    fn kinetic_grad(&self, p: &[f64]) -> Vec<f64>;

    fn potential_grad(&self, q: &[f64]) -> Result<Vec<f64>>;

    fn energy(&self, p: &[f64], q: &[f64]) -> Result<f64>;

    /// `(ṗ, q̇) = (−∂H/∂q, ∂H/∂p)`.
    fn field(&self, p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dp = self.potential_grad(q)?.into_iter().map(|v| -v).collect();
        Ok((dp, self.kinetic_grad(p)))
    }

    /// Field on the concatenated state `[p, q]`, for the adaptive solver.
    fn field_concat(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let (dp, dq) = self.field(&z[..d], &z[d..])?;
        let mut out = dp;
        out.extend(dq);
        Ok(out)
    }

    fn leapfrog(&self, initial: &PhaseState, n_steps: usize, dt: f64) -> Result<Vec<PhaseState>> {
        leapfrog_trajectory(
            |q| self.potential_grad(q),
            |p| Ok(self.kinetic_grad(p)),
            initial,
            n_steps,
            dt,
        )
    }
}
