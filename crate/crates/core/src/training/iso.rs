use super::lbfgs::{minimize_lockstep, LbfgsOptions};
use super::loss::trajectory_loss_rows;
use super::predict::Propagator;
use crate::ad::{Tape, Tensor};
use crate::{Error, Result};

/// Observations used by ISO: `steps[t]` stacks step `t` of every problem as
/// `[problems, 2d]`.
#[derive(Clone, Debug)]
pub struct Observations {
    pub steps: Vec<Tensor>,
}

impl Observations {
    /// `per_problem[i][t]` is the observed state of problem `i` at step `t`.
    pub fn from_sequences(per_problem: &[Vec<Vec<f64>>]) -> Result<Self> {
        let first = per_problem
            .first()
            .ok_or_else(|| Error::Length("no observations".into()))?;
        let (len, n) = (first.len(), first.first().map_or(0, Vec::len));
        if len == 0 || n == 0 {
            return Err(Error::Length("empty observation sequence".into()));
        }
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let mut data = Vec::with_capacity(per_problem.len() * n);
            for seq in per_problem {
                if seq.len() != len || seq[t].len() != n {
                    return Err(Error::Length("ragged observation sequences".into()));
                }
                data.extend_from_slice(&seq[t]);
            }
            steps.push(Tensor::matrix(per_problem.len(), n, data));
        }
        Ok(Self { steps })
    }

    pub fn problems(&self) -> usize {
        self.steps[0].rows()
    }

    fn rows(&self, indices: &[usize]) -> Vec<Tensor> {
        let n = self.steps[0].cols();
        self.steps
            .iter()
            .map(|s| {
                let mut data = Vec::with_capacity(indices.len() * n);
                for &i in indices {
                    data.extend_from_slice(s.row_slice(i));
                }
                Tensor::matrix(indices.len(), n, data)
            })
            .collect()
    }
}

/// Trajectory loss of each row and its gradient with respect to the initial
/// states `z0` (one row per problem in `indices`), the model held fixed.
pub fn initial_state_objective(
    prop: &dyn Propagator,
    observed: &Observations,
    indices: &[usize],
    z0: &[&[f64]],
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = observed.steps[0].cols();
    let horizon = observed.steps.len() - 1;
    let mut tape = Tape::new();
    let flat: Vec<f64> = z0.iter().flat_map(|r| r.iter().copied()).collect();
    let z = tape.leaf(Tensor::matrix(z0.len(), n, flat))?;
    let pred = prop.propagate(&mut tape, z, horizon)?;
    let obs = observed
        .rows(indices)
        .into_iter()
        .map(|t| tape.constant(t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rows = trajectory_loss_rows(&mut tape, &pred.states, &obs)?;
    let total = tape.sum(rows)?;
    let grads = tape.backward(total)?;
    let g = grads.wrt(z);
    let f = tape.value(rows);
    Ok((0..z0.len())
        .map(|r| (f.get(r, 0), g.row_slice(r).to_vec()))
        .collect())
}

/// Like [`initial_state_objective`], but a blow-up in one row only marks that
/// row as non-finite instead of failing the batch.
fn robust_objective(
    prop: &dyn Propagator,
    observed: &Observations,
    indices: &[usize],
    z0: &[&[f64]],
) -> Result<Vec<(f64, Vec<f64>)>> {
    match initial_state_objective(prop, observed, indices, z0) {
        Err(Error::NonFiniteState { .. }) | Err(Error::Ad(_)) if indices.len() > 1 => indices
            .iter()
            .zip(z0)
            .map(|(&i, &z)| robust_objective(prop, observed, &[i], &[z]).map(|mut v| v.remove(0)))
            .collect(),
        Err(Error::NonFiniteState { .. }) | Err(Error::Ad(_)) => {
            Ok(vec![(f64::NAN, vec![f64::NAN; z0[0].len()])])
        }
        other => other,
    }
}

/// Fits the initial state of every problem to its observed sequence with the
/// model frozen, starting from `starts`. Returns the best state found for
/// each problem.
pub fn iso_optimize(
    prop: &dyn Propagator,
    observed: &Observations,
    starts: Vec<Vec<f64>>,
    opts: LbfgsOptions,
) -> Result<Vec<Vec<f64>>> {
    if starts.len() != observed.problems() {
        return Err(Error::Length(format!(
            "{} initial states for {} problems",
            starts.len(),
            observed.problems()
        )));
    }
    if observed.steps.len() < 2 {
        // nothing after the anchor: the loss is identically zero
        return Ok(starts);
    }
    let runs = minimize_lockstep(starts, opts, |idx, pts| {
        robust_objective(prop, observed, idx, pts)
    })?;
    Ok(runs.iter().map(|r| r.best().0.to_vec()).collect())
}

/// Estimates clean initial states from the first `k` noisy observations of
/// each sample, starting from the first observation.
pub fn iso_infer_test_initial(
    prop: &dyn Propagator,
    first_k: &[Vec<Vec<f64>>],
    opts: LbfgsOptions,
) -> Result<Vec<Vec<f64>>> {
    let observed = Observations::from_sequences(first_k)?;
    let starts = first_k.iter().map(|s| s[0].clone()).collect();
    iso_optimize(prop, &observed, starts, opts)
}
