use super::tape::{leapfrog_step_tape, Duration, TapeState};
use super::PhaseField;
use crate::ad::{Tape, Tensor, Var};
use crate::models::{BoundRebound, HeadOutputs, SMALL_INPUTS, WIDE_INPUTS};
use crate::systems::{extract_patch, BilliardWorld};
use crate::{Error, Result};

/// Momentum reflection `p − 2(p·n)n`.
pub fn reflect(p: &[f64], n: &[f64]) -> Vec<f64> {
    let pn: f64 = p.iter().zip(n).map(|(a, b)| a * b).sum();
    p.iter().zip(n).map(|(a, b)| a - 2.0 * pn * b).collect()
}

/// Row-wise [`reflect`] on a tape; `p` and `n` are `[rows, d]`.
pub fn reflect_tape(tape: &mut Tape, p: Var, n: Var) -> Result<Var> {
    let pn = tape.row_dot(p, n)?;
    let k = tape.scale(pn, 2.0)?;
    let t = tape.mul_col(n, k)?;
    Ok(tape.sub(p, t)?)
}

/// The wall geometry and head networks a rebound step needs.
pub struct ReboundContext<'a> {
    pub heads: &'a BoundRebound,
    pub world: &'a BilliardWorld,
}

#[derive(Clone, Copy, Debug)]
pub struct ReboundOutput {
    pub state: TapeState,
    pub heads: HeadOutputs,
    /// `ṗ` at the returned state, reusable by the next step.
    pub rate: Var,
}

/// Head inputs for a batch: the 10×10 patches at `q_now` and `q_tent` side by
/// side, and the 2×2 patch at `q_tent`. Built from values, so no gradient
/// flows into the patch positions.
fn head_inputs(world: &BilliardWorld, q_now: &Tensor, q_tent: &Tensor) -> (Tensor, Tensor) {
    let rows = q_now.rows();
    let mut wide = Vec::with_capacity(rows * WIDE_INPUTS);
    let mut small = Vec::with_capacity(rows * SMALL_INPUTS);
    let image = world.image();
    for r in 0..rows {
        let c_now = world.to_pixel(q_now.row_slice(r));
        let c_tent = world.to_pixel(q_tent.row_slice(r));
        wide.extend(extract_patch(image, c_now, 10));
        wide.extend(extract_patch(image, c_tent, 10));
        small.extend(extract_patch(image, c_tent, 2));
    }
    (
        Tensor::matrix(rows, WIDE_INPUTS, wide),
        Tensor::matrix(rows, SMALL_INPUTS, small),
    )
}

/// Leapfrog step with a learned rebound event.
///
/// A tentative full step gives `q̃`; the heads read patches at `q_t` and `q̃`
/// and return `n̄`, `α` and `γ`. The state is advanced by `αΔt`, its momentum
/// reflected about `n = γ n̄`, then advanced by the remaining `(1 − α)Δt`.
pub fn rebound_step(
    tape: &mut Tape,
    field: &dyn PhaseField,
    ctx: &ReboundContext<'_>,
    state: TapeState,
    dt: f64,
    cached: Option<Var>,
) -> Result<ReboundOutput> {
    let d = tape.shape(state.q).get(1).copied().unwrap_or(0);
    if d != 2 {
        return Err(Error::Dimension(format!(
            "rebound step needs planar states, got d = {d}"
        )));
    }
    let a0 = match cached {
        Some(a) if field.is_separable() => a,
        _ => field.momentum_rate(tape, state.p, state.q)?,
    };
    let (tentative, _) = leapfrog_step_tape(tape, field, state, Duration::Fixed(dt), Some(a0))?;
    let (wide, small) = head_inputs(ctx.world, tape.value(state.q), tape.value(tentative.q));
    let wide = tape.constant(wide)?;
    let small = tape.constant(small)?;
    let heads = ctx.heads.forward(tape, wide, small)?;
    let n = tape.mul_col(heads.normal, heads.gamma)?;

    let first = tape.scale(heads.alpha, dt)?;
    let (pre, a1) = leapfrog_step_tape(tape, field, state, Duration::PerRow(first), Some(a0))?;
    let p_post = reflect_tape(tape, pre.p, n)?;
    let rest = tape.scale(heads.alpha, -1.0)?;
    let rest = tape.add_scalar(rest, 1.0)?;
    let rest = tape.scale(rest, dt)?;
    let post = TapeState { p: p_post, q: pre.q };
    let (state, rate) = leapfrog_step_tape(tape, field, post, Duration::PerRow(rest), Some(a1))?;
    Ok(ReboundOutput { state, heads, rate })
}
