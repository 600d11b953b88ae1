//! Losses, optimizers and training loops.

mod iso;
mod lbfgs;
mod loss;
mod optim;
mod predict;
mod train;

pub use iso::{initial_state_objective, iso_infer_test_initial, iso_optimize, Observations};
pub use lbfgs::{minimize, minimize_lockstep, Lbfgs, LbfgsOptions, Status};
pub use loss::{slice_windows, trajectory_loss, trajectory_loss_rows, Windows};
pub use optim::{Adam, Scheduler, SchedulerSpec};
pub use predict::{
    predict, predict_values, rollout_values, ModelRollout, Prediction, Propagator, QuadraticRollout,
    Stepper,
};
pub use train::{
    batch_loss, evaluate_objective, train, write_history_csv, BatchLoss, EpochRecord, IsoConfig,
    TrainConfig, TrainMode, TrainOutcome,
};
