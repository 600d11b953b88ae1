use crate::ad::{Tape, Tensor, Var};
use crate::systems::Dataset;
use crate::{Error, Result};

/// `Σ_{i≥1} ‖z_i − ẑ_i‖²` on plain vectors; step 0 is the anchor and skipped.
pub fn trajectory_loss(predicted: &[Vec<f64>], observed: &[Vec<f64>]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::Length(format!(
            "{} predicted states vs {} observed",
            predicted.len(),
            observed.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in predicted.iter().zip(observed).skip(1) {
        if a.len() != b.len() {
            return Err(Error::Dimension(format!("state sizes {} and {}", a.len(), b.len())));
        }
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total)
}

/// Per-row trajectory loss on a tape: `predicted[i]` and `observed[i]` are
/// `[rows, 2d]`; the result is `[rows, 1]`.
pub fn trajectory_loss_rows(tape: &mut Tape, predicted: &[Var], observed: &[Var]) -> Result<Var> {
    if predicted.len() != observed.len() || predicted.len() < 2 {
        return Err(Error::Length(format!(
            "{} predicted states vs {} observed",
            predicted.len(),
            observed.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (&a, &b) in predicted.iter().zip(observed).skip(1) {
        let diff = tape.sub(a, b)?;
        let sq = tape.mul(diff, diff)?;
        let row = tape.row_sum(sq)?;
        acc = Some(match acc {
            Some(s) => tape.add(s, row)?,
            None => row,
        });
    }
    Ok(acc.expect("at least one step"))
}

/// Sub-trajectories of length `T + 1` starting at every step of every
/// trajectory (stride 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub d: usize,
    pub horizon: usize,
    /// `(trajectory, start)` of each window.
    pub origin: Vec<(usize, usize)>,
    /// `[window][step][2d]`, flattened.
    data: Vec<f64>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn state(&self, window: usize, step: usize) -> &[f64] {
        let n = 2 * self.d;
        let off = (window * (self.horizon + 1) + step) * n;
        &self.data[off..off + n]
    }

    /// Step `step` of the given windows stacked as `[indices.len(), 2d]`.
    pub fn gather(&self, indices: &[usize], step: usize) -> Tensor {
        let n = 2 * self.d;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &w in indices {
            data.extend_from_slice(self.state(w, step));
        }
        Tensor::matrix(indices.len(), n, data)
    }
}

/// Every window of `horizon + 1` consecutive states: a trajectory of length
/// `L` gives `L − horizon` windows.
pub fn slice_windows(dataset: &Dataset, horizon: usize) -> Result<Windows> {
    if horizon == 0 || dataset.traj_len < horizon + 1 {
        return Err(Error::Length(format!(
            "window horizon {horizon} needs trajectories of at least {} states, have {}",
            horizon + 1,
            dataset.traj_len
        )));
    }
    let per = dataset.traj_len - horizon;
    let mut origin = Vec::with_capacity(dataset.n_traj() * per);
    let mut data = Vec::new();
    for traj in 0..dataset.n_traj() {
        for start in 0..per {
            origin.push((traj, start));
            for t in start..=start + horizon {
                data.extend_from_slice(dataset.state(traj, t));
            }
        }
    }
    Ok(Windows {
        d: dataset.d,
        horizon,
        origin,
        data,
    })
}
