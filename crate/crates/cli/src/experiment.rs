//! The `generate`, `train` and `evaluate` steps of an experiment run.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srnn_core::integrators::{euler_step, IntegratorKind, PhaseState};
use srnn_core::models::{DynamicsModel, HamiltonianModel, ModelBundle, OdeModel, ReboundHeads, RnnModel};
use srnn_core::systems::{add_noise, BilliardWorld, Dataset, SeparableSystem, SpringChain, SystemKind, ThreeBody};
use srnn_core::training::{
    iso_infer_test_initial, rollout_values, train, write_history_csv, LbfgsOptions, ModelRollout,
    Propagator, QuadraticRollout, Stepper, TrainOutcome,
};

use crate::config::{derive_seed, ExperimentConfig, ModelKind};
use crate::metrics::{error_matrix, EvalReport};

pub const TRAIN_FILE: &str = "train.srnnds";
pub const TEST_FILE: &str = "test.srnnds";
pub const TEST_CLEAN_FILE: &str = "test_clean.srnnds";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const SUMMARY_FILE: &str = "eval_summary.csv";
pub const PER_STEP_FILE: &str = "eval_per_step.csv";
pub const PER_SAMPLE_FILE: &str = "eval_per_sample.csv";

/// Directory holding the datasets of a run.
pub fn data_dir(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    cfg.data_dir.clone().unwrap_or_else(|| out_dir.to_path_buf())
}

/// Clean training and test sets of the configured system. Train and test
/// share one system instance.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let test_len = cfg.eval_steps + 1;
    let (train_seed, test_seed) = (derive_seed(cfg.seed, 2), derive_seed(cfg.seed, 3));
    Ok(match cfg.system {
        SystemKind::SpringChain => {
            let chain = SpringChain::sample(derive_seed(cfg.seed, 1));
            (
                chain.generate(cfg.n_train, cfg.train_len, cfg.dt, train_seed)?,
                chain.generate(cfg.n_test, test_len, cfg.dt, test_seed)?,
            )
        }
        SystemKind::ThreeBody => {
            let sys = ThreeBody::default();
            (
                sys.generate(cfg.n_train, cfg.train_len, cfg.dt, train_seed)?,
                sys.generate(cfg.n_test, test_len, cfg.dt, test_seed)?,
            )
        }
        SystemKind::Billiard => {
            let world = BilliardWorld::default();
            (
                world.generate(cfg.n_train, cfg.train_len, cfg.dt, train_seed)?,
                world.generate(cfg.n_test, test_len, cfg.dt, test_seed)?,
            )
        }
    })
}

/// Writes the noisy training set, the noisy test set and the clean test set.
pub fn generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let dir = data_dir(cfg, out_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let (train_set, test_clean) = simulate(cfg)?;
    let train_noisy = add_noise(&train_set, cfg.noise, derive_seed(cfg.seed, 4))?;
    let test_noisy = add_noise(&test_clean, cfg.noise, derive_seed(cfg.seed, 5))?;
    train_noisy.save(&dir.join(TRAIN_FILE))?;
    test_noisy.save(&dir.join(TEST_FILE))?;
    test_clean.save(&dir.join(TEST_CLEAN_FILE))?;
    Ok(())
}

/// Freshly initialised model for the configuration.
pub fn build_model(cfg: &ExperimentConfig, d: usize) -> Result<ModelBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 10));
    let dynamics = match cfg.model {
        ModelKind::Hnet => DynamicsModel::Hnet(HamiltonianModel::init(d, &cfg.hidden, &mut rng)?),
        ModelKind::Onet => DynamicsModel::Onet(OdeModel::init(d, &cfg.hidden, &mut rng)?),
        ModelKind::Rnn => DynamicsModel::Rnn(RnnModel::init(d, cfg.rnn_hidden, &mut rng)?),
        ModelKind::Truth | ModelKind::Constant => bail!("model '{}' has nothing to train", cfg.model),
    };
    let mut bundle = ModelBundle::new(dynamics);
    if let Some(spec) = cfg.rebound_spec() {
        bundle.rebound = Some(ReboundHeads::init(spec, &mut rng)?);
    }
    Ok(bundle)
}

fn world_of(ds: &Dataset) -> Result<Option<BilliardWorld>> {
    Ok(match ds.system {
        SystemKind::Billiard => Some(serde_json::from_value::<BilliardWorld>(ds.extra.clone())?.rebuilt()),
        _ => None,
    })
}

fn load(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading {}", path.display()))
}

/// Trains the configured model and writes the checkpoint, the loss history
/// and the resolved configuration. Baseline models only get the config.
pub fn train_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Option<TrainOutcome>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join(RESOLVED_FILE), cfg.to_text())?;
    if !cfg.model.is_learned() {
        return Ok(None);
    }
    let ds = load(&data_dir(cfg, out_dir).join(TRAIN_FILE))?;
    ensure!(ds.system == cfg.system, "training data is for {}, config says {}", ds.system, cfg.system);
    let world = world_of(&ds)?;
    let mut bundle = build_model(cfg, ds.d)?;
    let outcome = train(&mut bundle, &ds, world.as_ref(), &cfg.train_config())?;
    bundle.save(&out_dir.join(CHECKPOINT_FILE))?;
    write_history_csv(&outcome.history, BufWriter::new(File::create(out_dir.join(HISTORY_FILE))?))?;
    Ok(Some(outcome))
}

fn sequences(ds: &Dataset, len: usize) -> Vec<Vec<Vec<f64>>> {
    (0..ds.n_traj())
        .map(|i| (0..len).map(|t| ds.state(i, t).to_vec()).collect())
        .collect()
}

/// The true equations of the test system, stepped with `integrator`.
fn truth_rollout(test: &Dataset, integrator: IntegratorKind, initial: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
    let z0 = PhaseState::from_concat(initial)?;
    let dt = test.dt;
    let states = match test.system {
        SystemKind::Billiard => {
            let b = world_of(test)?.expect("billiard data carries its world").billiard();
            let mut s = z0;
            let mut out = vec![s.clone()];
            for _ in 0..n {
                s = b.step(&s, dt);
                out.push(s.clone());
            }
            out
        }
        SystemKind::SpringChain => {
            let chain: SpringChain = serde_json::from_value(test.extra.clone())?;
            separable_rollout(&chain, integrator, z0, n, dt)?
        }
        SystemKind::ThreeBody => {
            let sys: ThreeBody = serde_json::from_value(test.extra.clone())?;
            separable_rollout(&sys, integrator, z0, n, dt)?
        }
    };
    Ok(states.iter().map(PhaseState::to_concat).collect())
}

fn separable_rollout<S: SeparableSystem>(
    sys: &S,
    integrator: IntegratorKind,
    z0: PhaseState,
    n: usize,
    dt: f64,
) -> Result<Vec<PhaseState>> {
    Ok(match integrator {
        IntegratorKind::Leapfrog => sys.leapfrog(&z0, n, dt)?,
        IntegratorKind::Euler => {
            let mut s = z0;
            let mut out = vec![s.clone()];
            for _ in 0..n {
                s = euler_step(|p, q| sys.field(p, q), &s, dt)?;
                out.push(s.clone());
            }
            out
        }
        IntegratorKind::ReboundLeapfrog => bail!("the true equations have no rebound heads"),
    })
}

/// Predicts `n` steps from each initial state. A sample whose rollout blows
/// up yields `None` without discarding the others.
fn predict_all(
    one: &dyn Fn(&[Vec<f64>]) -> srnn_core::Result<Vec<Vec<Vec<f64>>>>,
    initial: &[Vec<f64>],
) -> Result<Vec<Option<Vec<Vec<f64>>>>> {
    match one(initial) {
        Ok(all) => Ok(all.into_iter().map(Some).collect()),
        Err(srnn_core::Error::NonFiniteState { .. }) | Err(srnn_core::Error::Ad(_)) => initial
            .iter()
            .map(|z| match one(std::slice::from_ref(z)) {
                Ok(mut v) => Ok(Some(v.remove(0))),
                Err(srnn_core::Error::NonFiniteState { .. }) | Err(srnn_core::Error::Ad(_)) => Ok(None),
                Err(e) => Err(e.into()),
            })
            .collect(),
        Err(e) => Err(e.into()),
    }
}

/// Scores the run in `out_dir` on the test set and writes the three
/// evaluation CSVs.
pub fn evaluate_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let dir = data_dir(cfg, out_dir);
    let test = load(&dir.join(TEST_FILE))?;
    let clean = load(&dir.join(TEST_CLEAN_FILE))?;
    ensure!(test.system == cfg.system, "test data is for {}, config says {}", test.system, cfg.system);
    let n = cfg.eval_steps;
    ensure!(test.traj_len > n, "test trajectories hold {} states, eval_steps = {n}", test.traj_len);
    let observed = sequences(&test, n + 1);
    let reference_clean = sequences(&clean, n + 1);
    let world = world_of(&test)?;
    let integrator = cfg.test_integrator();
    let iso_opts = LbfgsOptions {
        max_iter: cfg.iso_iterations,
        ..LbfgsOptions::default()
    };
    let first_k: Vec<Vec<Vec<f64>>> = if cfg.iso {
        observed.iter().map(|s| s[..cfg.iso_k].to_vec()).collect()
    } else {
        Vec::new()
    };
    let mut initial: Vec<Vec<f64>> = observed.iter().map(|s| s[0].clone()).collect();

    let predicted = match cfg.model {
        ModelKind::Constant => initial.iter().map(|z| Some(vec![z.clone(); n + 1])).collect(),
        ModelKind::Truth => {
            if cfg.iso {
                let chain: SpringChain = match cfg.system {
                    SystemKind::SpringChain => serde_json::from_value(test.extra.clone())?,
                    other => bail!("ISO with the true equations is only available for the spring chain, not {other}"),
                };
                let prop = QuadraticRollout {
                    stiffness: chain.stiffness(),
                    inv_mass: chain.inverse_masses(),
                    integrator,
                    dt: cfg.dt,
                };
                initial = iso_infer_test_initial(&prop, &first_k, iso_opts)?;
            }
            let one = |z: &[Vec<f64>]| -> srnn_core::Result<Vec<Vec<Vec<f64>>>> {
                z.iter()
                    .map(|z| truth_rollout(&test, integrator, z, n).map_err(|e| srnn_core::Error::Config(e.to_string())))
                    .collect()
            };
            predict_all(&one, &initial)?
        }
        _ => {
            let bundle = ModelBundle::load(&out_dir.join(CHECKPOINT_FILE))
                .with_context(|| format!("loading checkpoint from {}", out_dir.display()))?;
            ensure!(
                bundle.dynamics.dim() == test.d,
                "checkpoint has d = {}, test data has d = {}",
                bundle.dynamics.dim(),
                test.d
            );
            let prop = ModelRollout {
                bundle: &bundle,
                stepper: Stepper {
                    integrator,
                    dt: cfg.dt,
                    world: world.as_ref(),
                },
            };
            if cfg.iso {
                initial = iso_infer_test_initial(&prop, &first_k, iso_opts)?;
            }
            let one = |z: &[Vec<f64>]| rollout_values(&prop as &dyn Propagator, z, n);
            predict_all(&one, &initial)?
        }
    };
    let report = EvalReport {
        noisy: error_matrix(&predicted, &observed, n)?,
        clean: error_matrix(&predicted, &reference_clean, n)?,
        horizon: n,
    };
    fs::create_dir_all(out_dir)?;
    report.write_summary(BufWriter::new(File::create(out_dir.join(SUMMARY_FILE))?))?;
    report.write_per_step(BufWriter::new(File::create(out_dir.join(PER_STEP_FILE))?))?;
    report.write_per_sample(BufWriter::new(File::create(out_dir.join(PER_SAMPLE_FILE))?))?;
    Ok(report)
}
