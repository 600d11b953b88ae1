use crate::ad::{Tape, Tensor, Var};
use crate::integrators::{
    rollout, IntegratorKind, LinearSeparableField, PhaseField, ReboundContext, Scheme, TapeState,
};
use crate::models::{BoundBundle, BoundDynamics, ModelBundle};
use crate::systems::BilliardWorld;
use crate::{Error, Result};

/// How a model is stepped forward in time.
#[derive(Clone, Copy, Debug)]
pub struct Stepper<'a> {
    pub integrator: IntegratorKind,
    pub dt: f64,
    /// Wall geometry, required by the rebound step.
    pub world: Option<&'a BilliardWorld>,
}

/// Predicted states `0..=n` as `[rows, 2d]` vars, plus rebound γ outputs.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub states: Vec<Var>,
    pub gammas: Vec<Var>,
}

/// Unrolls the bound model from `z0 = [p, q]` (`[rows, 2d]`).
pub fn predict(
    tape: &mut Tape,
    bound: &BoundBundle,
    stepper: &Stepper<'_>,
    z0: Var,
    n_steps: usize,
) -> Result<Prediction> {
    let field: &dyn PhaseField = match &bound.dynamics {
        BoundDynamics::Rnn(rnn) => {
            let states = rnn.rollout(tape, z0, n_steps)?;
            return Ok(Prediction {
                states,
                gammas: Vec::new(),
            });
        }
        BoundDynamics::Hnet(h) => h,
        BoundDynamics::Onet(o) => o,
    };
    let d = tape.shape(z0)[1] / 2;
    let initial = TapeState {
        p: tape.slice_cols(z0, 0, d)?,
        q: tape.slice_cols(z0, d, d)?,
    };
    let scheme = match stepper.integrator {
        IntegratorKind::Euler => Scheme::Euler,
        IntegratorKind::Leapfrog => Scheme::Leapfrog,
        IntegratorKind::ReboundLeapfrog => {
            let heads = bound
                .rebound
                .as_ref()
                .ok_or_else(|| Error::Config("rebound integrator needs a model with rebound heads".into()))?;
            let world = stepper
                .world
                .ok_or_else(|| Error::Config("rebound integrator needs billiard wall geometry".into()))?;
            Scheme::Rebound(ReboundContext { heads, world })
        }
    };
    let out = rollout(tape, &scheme, field, initial, n_steps, stepper.dt)?;
    let mut states = Vec::with_capacity(out.states.len());
    states.push(z0);
    for s in &out.states[1..] {
        states.push(tape.concat_cols(&[s.p, s.q])?);
    }
    Ok(Prediction {
        states,
        gammas: out.gammas,
    })
}

/// Anything that can unroll a batch of initial states on a tape.
pub trait Propagator {
    fn propagate(&self, tape: &mut Tape, z0: Var, n_steps: usize) -> Result<Prediction>;
}

/// A learned model stepped with a chosen integrator.
#[derive(Clone, Copy, Debug)]
pub struct ModelRollout<'a> {
    pub bundle: &'a ModelBundle,
    pub stepper: Stepper<'a>,
}

impl Propagator for ModelRollout<'_> {
    fn propagate(&self, tape: &mut Tape, z0: Var, n_steps: usize) -> Result<Prediction> {
        let bound = self.bundle.bind(tape, false)?;
        predict(tape, &bound, &self.stepper, z0, n_steps)
    }
}

/// A known quadratic Hamiltonian `½ pᵀM⁻¹p + ½ qᵀSq` stepped with a plain
/// integrator; stands in for a perfectly trained model.
#[derive(Clone, Debug)]
pub struct QuadraticRollout {
    pub stiffness: Tensor,
    pub inv_mass: Vec<f64>,
    pub integrator: IntegratorKind,
    pub dt: f64,
}

impl Propagator for QuadraticRollout {
    fn propagate(&self, tape: &mut Tape, z0: Var, n_steps: usize) -> Result<Prediction> {
        let field = LinearSeparableField::new(tape, &self.stiffness, &self.inv_mass)?;
        let d = self.inv_mass.len();
        let initial = TapeState {
            p: tape.slice_cols(z0, 0, d)?,
            q: tape.slice_cols(z0, d, d)?,
        };
        let scheme = match self.integrator {
            IntegratorKind::Euler => Scheme::Euler,
            IntegratorKind::Leapfrog => Scheme::Leapfrog,
            IntegratorKind::ReboundLeapfrog => {
                return Err(Error::Config("a known quadratic Hamiltonian has no rebound heads".into()))
            }
        };
        let out = rollout(tape, &scheme, &field, initial, n_steps, self.dt)?;
        let mut states = vec![z0];
        for s in &out.states[1..] {
            states.push(tape.concat_cols(&[s.p, s.q])?);
        }
        Ok(Prediction {
            states,
            gammas: Vec::new(),
        })
    }
}

/// Value-only rollouts: `[sample][step][2d]` for each initial state.
pub fn rollout_values(prop: &dyn Propagator, initial: &[Vec<f64>], n_steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let rows = initial.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let n = initial[0].len();
    let mut tape = Tape::new();
    let z0 = tape.constant(Tensor::matrix(rows, n, initial.concat()))?;
    let pred = prop.propagate(&mut tape, z0, n_steps)?;
    let mut out = vec![Vec::with_capacity(n_steps + 1); rows];
    for &s in &pred.states {
        let v = tape.value(s);
        for (r, traj) in out.iter_mut().enumerate() {
            traj.push(v.row_slice(r).to_vec());
        }
    }
    Ok(out)
}

/// [`rollout_values`] for a learned model.
pub fn predict_values(
    bundle: &ModelBundle,
    stepper: &Stepper<'_>,
    initial: &[Vec<f64>],
    n_steps: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    rollout_values(
        &ModelRollout {
            bundle,
            stepper: *stepper,
        },
        initial,
        n_steps,
    )
}
