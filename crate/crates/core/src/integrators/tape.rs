use super::rebound::{rebound_step, ReboundContext};
use super::PhaseField;
use crate::ad::{AdError, Tape, Tensor, Var};
use crate::{Error, Result};

/// Batched phase state on a tape: `p` and `q` are `[rows, d]`.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub p: Var,
    pub q: Var,
}

/// Step duration, either shared by all rows or one value per row (`[rows, 1]`).
#[derive(Clone, Copy, Debug)]
pub enum Duration {
    Fixed(f64),
    PerRow(Var),
}

/// `x + factor·duration·rate`.
fn advance(tape: &mut Tape, x: Var, rate: Var, dur: Duration, factor: f64) -> Result<Var> {
    let inc = match dur {
        Duration::Fixed(dt) => tape.scale(rate, factor * dt)?,
        Duration::PerRow(col) => {
            let col = if factor == 1.0 { col } else { tape.scale(col, factor)? };
            tape.mul_col(rate, col)?
        }
    };
    Ok(tape.add(x, inc)?)
}

/// `z' = z + Δt f(z)`.
pub fn euler_step_tape(
    tape: &mut Tape,
    field: &dyn PhaseField,
    state: TapeState,
    dt: f64,
) -> Result<TapeState> {
    let (dp, dq) = field.rates(tape, state.p, state.q)?;
    Ok(TapeState {
        p: advance(tape, state.p, dp, Duration::Fixed(dt), 1.0)?,
        q: advance(tape, state.q, dq, Duration::Fixed(dt), 1.0)?,
    })
}

/// One leapfrog step of duration `dur`.
///
/// `p½ = p + ½τ ṗ(p, q)`, `q' = q + τ q̇(p½, q)`, `p' = p½ + ½τ ṗ(p½, q')`,
/// which for a separable field is exactly the half kick, drift, half kick
/// scheme. `cached` may carry `ṗ` at the incoming state; the returned `Var` is
/// `ṗ(p½, q')`, reusable as the next cache when the field is separable.
pub fn leapfrog_step_tape(
    tape: &mut Tape,
    field: &dyn PhaseField,
    state: TapeState,
    dur: Duration,
    cached: Option<Var>,
) -> Result<(TapeState, Var)> {
    let a0 = match cached {
        Some(a) if field.is_separable() => a,
        _ => field.momentum_rate(tape, state.p, state.q)?,
    };
    let p_half = advance(tape, state.p, a0, dur, 0.5)?;
    let v = field.position_rate(tape, p_half, state.q)?;
    let q1 = advance(tape, state.q, v, dur, 1.0)?;
    let a1 = field.momentum_rate(tape, p_half, q1)?;
    let p1 = advance(tape, p_half, a1, dur, 0.5)?;
    Ok((TapeState { p: p1, q: q1 }, a1))
}

/// Which step a [`rollout`] uses.
pub enum Scheme<'a> {
    Euler,
    Leapfrog,
    Rebound(ReboundContext<'a>),
}

/// States `0..=n_steps` of a rollout plus the per-step γ outputs of the
/// rebound heads (empty for the plain schemes).
#[derive(Clone, Debug)]
pub struct Rollout {
    pub states: Vec<TapeState>,
    pub gammas: Vec<Var>,
}

/// Unrolls `n_steps` steps of `scheme` from `initial`; differentiable with
/// respect to everything `initial` and `field` were built from.
pub fn rollout(
    tape: &mut Tape,
    scheme: &Scheme<'_>,
    field: &dyn PhaseField,
    initial: TapeState,
    n_steps: usize,
    dt: f64,
) -> Result<Rollout> {
    if n_steps == 0 {
        return Err(Error::Spec("rollout needs at least one step".into()));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut gammas = Vec::new();
    states.push(initial);
    let mut state = initial;
    let mut cache = None;
    for step in 0..n_steps {
        let at_step = |e: Error| match e {
            Error::Ad(AdError::NonFinite { .. }) => Error::NonFiniteState { step: step + 1 },
            other => other,
        };
        state = match scheme {
            Scheme::Euler => euler_step_tape(tape, field, state, dt).map_err(at_step)?,
            Scheme::Leapfrog => {
                let (s, a) = leapfrog_step_tape(tape, field, state, Duration::Fixed(dt), cache)
                    .map_err(at_step)?;
                cache = Some(a);
                s
            }
            Scheme::Rebound(ctx) => {
                let out = rebound_step(tape, field, ctx, state, dt, cache).map_err(at_step)?;
                cache = Some(out.rate);
                gammas.push(out.heads.gamma);
                out.state
            }
        };
        states.push(state);
    }
    Ok(Rollout { states, gammas })
}

/// Quadratic separable field `ṗ = −q S`, `q̇ = p ⊙ m⁻¹` with symmetric `S`.
/// Used to put known linear systems (harmonic oscillator, spring chain)
/// on the tape.
#[derive(Clone, Debug)]
pub struct LinearSeparableField {
    neg_stiffness: Var,
    inv_mass: Var,
}

impl LinearSeparableField {
    pub fn new(tape: &mut Tape, stiffness: &Tensor, inv_mass: &[f64]) -> Result<Self> {
        let d = inv_mass.len();
        if stiffness.shape() != [d, d] {
            return Err(Error::Dimension(format!(
                "stiffness {:?} does not match {d} masses",
                stiffness.shape()
            )));
        }
        let neg = Tensor::matrix(d, d, stiffness.data().iter().map(|v| -v).collect());
        Ok(Self {
            neg_stiffness: tape.constant(neg)?,
            inv_mass: tape.constant(Tensor::row(inv_mass.to_vec()))?,
        })
    }
}

impl PhaseField for LinearSeparableField {
    fn momentum_rate(&self, tape: &mut Tape, _p: Var, q: Var) -> Result<Var> {
        Ok(tape.matmul(q, self.neg_stiffness)?)
    }

    fn position_rate(&self, tape: &mut Tape, p: Var, _q: Var) -> Result<Var> {
        Ok(tape.mul_row(p, self.inv_mass)?)
    }

    fn is_separable(&self) -> bool {
        true
    }
}
