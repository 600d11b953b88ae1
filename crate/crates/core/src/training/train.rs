use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::iso::{iso_optimize, Observations};
use super::lbfgs::LbfgsOptions;
use super::loss::{slice_windows, trajectory_loss_rows, Windows};
use super::optim::{Adam, Scheduler, SchedulerSpec};
use super::predict::{predict, ModelRollout, Stepper};
use crate::ad::{Tape, Tensor, Var};
use crate::integrators::IntegratorKind;
use crate::models::{BoundBundle, ModelBundle};
use crate::systems::{BilliardWorld, Dataset};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    SingleStep,
    Recurrent,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_step" | "single" => Ok(Self::SingleStep),
            "recurrent" => Ok(Self::Recurrent),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingleStep => "single_step",
            Self::Recurrent => "recurrent",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoConfig {
    pub enabled: bool,
    /// ISO runs after every epoch from this one on (1-based).
    pub start_epoch: usize,
    /// L-BFGS iterations per ISO call.
    pub iterations: usize,
}

impl Default for IsoConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            start_epoch: 100,
            iterations: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub train_integrator: IntegratorKind,
    pub test_integrator: IntegratorKind,
    pub dt: f64,
    /// Window horizon `T`; windows hold `T + 1` states.
    pub horizon: usize,
    pub epochs: usize,
    /// `None` trains on all windows at once.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub scheduler: SchedulerSpec,
    pub iso: IsoConfig,
    /// Weight of the `‖γ‖₁` penalty on the rebound heads.
    pub gamma_l1: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == TrainMode::SingleStep && self.horizon != 1 {
            return Err(Error::Config(format!(
                "single_step training needs T = 1, got T = {}",
                self.horizon
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("window horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !(self.lr >= 0.0) || !(self.gamma_l1 >= 0.0) {
            return Err(Error::Config(format!(
                "need dt > 0, lr ≥ 0 and λ ≥ 0 (dt = {}, lr = {}, λ = {})",
                self.dt, self.lr, self.gamma_l1
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub iso_active: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Fitted initial state of each window when ISO ran.
    pub iso_states: Option<Vec<Vec<f64>>>,
    pub windows: usize,
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,lr,iso_active")?;
    for r in history {
        writeln!(w, "{},{:e},{:e},{}", r.epoch, r.train_loss, r.lr, r.iso_active as u8)?;
    }
    Ok(())
}

/// Regularised objective of a batch, summed over its windows, plus the
/// unregularised part.
pub struct BatchLoss {
    pub objective: Var,
    pub data: Var,
}

/// Rolls the bound model out from `z0` over the windows `indices` and
/// scores it against their observed steps.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    stepper: &Stepper<'_>,
    windows: &Windows,
    indices: &[usize],
    z0: Tensor,
    gamma_l1: f64,
) -> Result<BatchLoss> {
    let z0 = tape.constant(z0)?;
    let pred = predict(tape, bound, stepper, z0, windows.horizon)?;
    let mut obs = Vec::with_capacity(windows.horizon + 1);
    for t in 0..=windows.horizon {
        obs.push(tape.constant(windows.gather(indices, t))?);
    }
    let rows = trajectory_loss_rows(tape, &pred.states, &obs)?;
    let data = tape.sum(rows)?;
    let mut objective = data;
    if gamma_l1 > 0.0 {
        for &g in &pred.gammas {
            let a = tape.abs(g)?;
            let s = tape.sum(a)?;
            let s = tape.scale(s, gamma_l1)?;
            objective = tape.add(objective, s)?;
        }
    }
    Ok(BatchLoss { objective, data })
}

fn window_starts(windows: &Windows) -> Vec<Vec<f64>> {
    (0..windows.len()).map(|w| windows.state(w, 0).to_vec()).collect()
}

fn window_observations(windows: &Windows) -> Observations {
    let all: Vec<usize> = (0..windows.len()).collect();
    Observations {
        steps: (0..=windows.horizon).map(|t| windows.gather(&all, t)).collect(),
    }
}

fn stack(rows: &[Vec<f64>], indices: &[usize]) -> Tensor {
    let n = rows[indices[0]].len();
    let mut data = Vec::with_capacity(indices.len() * n);
    for &i in indices {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::matrix(indices.len(), n, data)
}

/// Trains `bundle` in place with Adam on the windows of `dataset`.
///
/// Each epoch visits the windows in a seeded shuffle. With ISO enabled the
/// initial state of every window becomes a free variable, refit by L-BFGS
/// after each epoch from `iso.start_epoch` on.
pub fn train(
    bundle: &mut ModelBundle,
    dataset: &Dataset,
    world: Option<&BilliardWorld>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.d != bundle.dynamics.dim() {
        return Err(Error::Dimension(format!(
            "dataset has d = {}, model has d = {}",
            dataset.d,
            bundle.dynamics.dim()
        )));
    }
    let windows = slice_windows(dataset, cfg.horizon)?;
    let stepper = Stepper {
        integrator: cfg.train_integrator,
        dt: cfg.dt,
        world,
    };
    let n = windows.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(bundle.param_count());
    let mut scheduler = Scheduler::new(cfg.scheduler, cfg.lr);
    let mut starts = window_starts(&windows);
    let observations = cfg.iso.enabled.then(|| window_observations(&windows));
    let iso_opts = LbfgsOptions {
        max_iter: cfg.iso.iterations,
        ..LbfgsOptions::default()
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut params = bundle.param_values();

    for epoch in 1..=cfg.epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(batch).enumerate() {
            let diverged = |_| Error::Divergence { epoch, batch: b };
            let mut tape = Tape::new();
            let bound = bundle.bind(&mut tape, true)?;
            let loss = batch_loss(
                &mut tape,
                &bound,
                &stepper,
                &windows,
                idx,
                stack(&starts, idx),
                cfg.gamma_l1,
            )
            .map_err(|e| match e {
                Error::NonFiniteState { .. } | Error::Ad(_) => diverged(()),
                other => other,
            })?;
            let value = tape.value(loss.objective).data()[0];
            if !value.is_finite() {
                return Err(diverged(()));
            }
            total += value;
            let mean = tape.scale(loss.objective, 1.0 / idx.len() as f64)?;
            let grads = tape.backward(mean).map_err(|_| diverged(()))?;
            let g = bound.gradient(&grads);
            adam.step(&mut params, &g, lr).map_err(|_| diverged(()))?;
            bundle.set_param_values(&params)?;
        }
        let train_loss = total / n as f64;
        let iso_active = cfg.iso.enabled && epoch >= cfg.iso.start_epoch;
        if iso_active {
            let obs = observations.as_ref().expect("observations built when ISO is enabled");
            let prop = ModelRollout {
                bundle,
                stepper,
            };
            starts = iso_optimize(&prop, obs, starts, iso_opts)?;
        }
        scheduler.step(train_loss);
        history.push(EpochRecord {
            epoch,
            train_loss,
            lr,
            iso_active,
        });
    }
    Ok(TrainOutcome {
        history,
        iso_states: cfg.iso.enabled.then_some(starts),
        windows: n,
    })
}

/// Unregularised-plus-penalty loss of the current model over all windows,
/// starting each from its observed first state; summed over windows.
pub fn evaluate_objective(
    bundle: &ModelBundle,
    windows: &Windows,
    stepper: &Stepper<'_>,
    gamma_l1: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape, false)?;
    let all: Vec<usize> = (0..windows.len()).collect();
    let z0 = windows.gather(&all, 0);
    let loss = batch_loss(&mut tape, &bound, stepper, windows, &all, z0, gamma_l1)?;
    Ok(tape.value(loss.objective).data()[0])
}
