//! Discrete flow maps: Euler, leapfrog, differentiable rollouts, the
//! rebound-augmented leapfrog and an adaptive Dormand–Prince solver.

mod dopri;
mod rebound;
mod tape;

use serde::{Deserialize, Serialize};

pub use dopri::{adaptive_integrate, DenseTrajectory, DopriOptions};
pub use rebound::{rebound_step, reflect, reflect_tape, ReboundContext, ReboundOutput};
pub use tape::{
    euler_step_tape, leapfrog_step_tape, rollout, Duration, LinearSeparableField, Rollout, Scheme,
    TapeState,
};

use crate::ad::{Tape, Var};
use crate::{Error, Result};

/// Momenta and positions at one time point.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PhaseState {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::Dimension(format!(
                "p has {} entries, q has {}",
                p.len(),
                q.len()
            )));
        }
        Ok(Self { p, q })
    }

    /// Splits `[p, q]`.
    pub fn from_concat(z: &[f64]) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(Error::Dimension(format!("odd state length {}", z.len())));
        }
        let (p, q) = z.split_at(z.len() / 2);
        Ok(Self {
            p: p.to_vec(),
            q: q.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn to_concat(&self) -> Vec<f64> {
        let mut z = self.p.clone();
        z.extend_from_slice(&self.q);
        z
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

/// Which step to use for training or testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Euler,
    Leapfrog,
    ReboundLeapfrog,
}

impl IntegratorKind {
    /// Single-letter label used in the E-E / E-L / L-L naming.
    pub fn letter(self) -> &'static str {
        match self {
            Self::Euler => "E",
            Self::Leapfrog => "L",
            Self::ReboundLeapfrog => "R",
        }
    }
}

impl std::str::FromStr for IntegratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" | "e" => Ok(Self::Euler),
            "leapfrog" | "l" => Ok(Self::Leapfrog),
            "rebound_leapfrog" | "rebound" | "r" => Ok(Self::ReboundLeapfrog),
            other => Err(Error::Config(format!("unknown integrator {other:?}"))),
        }
    }
}

impl std::fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Leapfrog => "leapfrog",
            Self::ReboundLeapfrog => "rebound_leapfrog",
        })
    }
}

/// A vector field `(p, q) ↦ (ṗ, q̇)` recorded on a tape, batched over rows.
pub trait PhaseField {
    fn momentum_rate(&self, tape: &mut Tape, p: Var, q: Var) -> Result<Var>;

    fn position_rate(&self, tape: &mut Tape, p: Var, q: Var) -> Result<Var>;

    fn rates(&self, tape: &mut Tape, p: Var, q: Var) -> Result<(Var, Var)> {
        Ok((self.momentum_rate(tape, p, q)?, self.position_rate(tape, p, q)?))
    }

    /// True when `ṗ` depends on `q` only and `q̇` on `p` only.
    fn is_separable(&self) -> bool;
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step: 0 })
    }
}

/// `z' = z + Δt f(z)`.
pub fn euler_step<F>(mut field: F, state: &PhaseState, dt: f64) -> Result<PhaseState>
where
    F: FnMut(&[f64], &[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let (dp, dq) = field(&state.p, &state.q)?;
    check_finite(&dp)?;
    check_finite(&dq)?;
    let p = state.p.iter().zip(&dp).map(|(a, b)| a + dt * b).collect();
    let q = state.q.iter().zip(&dq).map(|(a, b)| a + dt * b).collect();
    PhaseState::new(p, q)
}

/// Half kick, drift, half kick with `V'` and `K'` supplied separately.
pub fn leapfrog_step<V, K>(
    mut potential_grad: V,
    mut kinetic_grad: K,
    state: &PhaseState,
    dt: f64,
) -> Result<PhaseState>
where
    V: FnMut(&[f64]) -> Result<Vec<f64>>,
    K: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let v0 = potential_grad(&state.q)?;
    check_finite(&v0)?;
    let (p, q, _) = leapfrog_from(&mut potential_grad, &mut kinetic_grad, &state.p, &state.q, &v0, dt)?;
    PhaseState::new(p, q)
}

fn leapfrog_from<V, K>(
    potential_grad: &mut V,
    kinetic_grad: &mut K,
    p: &[f64],
    q: &[f64],
    v0: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    V: FnMut(&[f64]) -> Result<Vec<f64>>,
    K: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let half = 0.5 * dt;
    let p_half: Vec<f64> = p.iter().zip(v0).map(|(a, g)| a - half * g).collect();
    let k = kinetic_grad(&p_half)?;
    check_finite(&k)?;
    let q1: Vec<f64> = q.iter().zip(&k).map(|(a, g)| a + dt * g).collect();
    let v1 = potential_grad(&q1)?;
    check_finite(&v1)?;
    let p1 = p_half.iter().zip(&v1).map(|(a, g)| a - half * g).collect();
    Ok((p1, q1, v1))
}

/// `n_steps` leapfrog steps on plain vectors, reusing `V'` between steps.
/// Returns `n_steps + 1` states.
pub fn leapfrog_trajectory<V, K>(
    mut potential_grad: V,
    mut kinetic_grad: K,
    initial: &PhaseState,
    n_steps: usize,
    dt: f64,
) -> Result<Vec<PhaseState>>
where
    V: FnMut(&[f64]) -> Result<Vec<f64>>,
    K: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(initial.clone());
    let mut p = initial.p.clone();
    let mut q = initial.q.clone();
    let mut v = potential_grad(&q)?;
    for step in 0..n_steps {
        let (p1, q1, v1) = leapfrog_from(&mut potential_grad, &mut kinetic_grad, &p, &q, &v, dt)
            .map_err(|e| match e {
                Error::NonFiniteState { .. } => Error::NonFiniteState { step: step + 1 },
                other => other,
            })?;
        v = v1;
        p = p1;
        q = q1;
        out.push(PhaseState::new(p.clone(), q.clone())?);
    }
    Ok(out)
}
