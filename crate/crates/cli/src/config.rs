//! Experiment configuration: presets plus plain-text `key = value` files.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use srnn_core::integrators::IntegratorKind;
use srnn_core::models::{HeadMode, ReboundSpec};
use srnn_core::systems::SystemKind;
use srnn_core::training::{IsoConfig, SchedulerSpec, TrainConfig, TrainMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => bail!("unknown preset '{other}' (expected paper or desk)"),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Desk => "desk",
        })
    }
}

/// What produces the predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Onet,
    Hnet,
    Rnn,
    /// The true equations stepped with the test integrator.
    Truth,
    /// Predicts the initial state forever.
    Constant,
}

impl ModelKind {
    pub fn is_learned(self) -> bool {
        matches!(self, Self::Onet | Self::Hnet | Self::Rnn)
    }
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "onet" => Self::Onet,
            "hnet" => Self::Hnet,
            "rnn" => Self::Rnn,
            "truth" => Self::Truth,
            "constant" => Self::Constant,
            other => bail!("unknown model '{other}'"),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Onet => "onet",
            Self::Hnet => "hnet",
            Self::Rnn => "rnn",
            Self::Truth => "truth",
            Self::Constant => "constant",
        })
    }
}

/// Rebound heads attached to the dynamics model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReboundKind {
    None,
    /// Heads with `α` pinned to 1: the reflection happens at the end of the step.
    UnitAlpha,
    Learned,
}

impl FromStr for ReboundKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "unit_alpha" => Self::UnitAlpha,
            "learned" => Self::Learned,
            other => bail!("unknown rebound variant '{other}'"),
        })
    }
}

impl fmt::Display for ReboundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::UnitAlpha => "unit_alpha",
            Self::Learned => "learned",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub model: ModelKind,
    pub mode: TrainMode,
    /// Unset means leapfrog (or the rebound step when rebound heads are on).
    pub train_integrator: Option<IntegratorKind>,
    pub test_integrator: Option<IntegratorKind>,
    pub rebound: ReboundKind,
    pub iso: bool,
    pub dt: f64,
    /// Window horizon of recurrent training; single-step training uses 1.
    pub horizon: usize,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: SchedulerSpec,
    pub iso_start_epoch: usize,
    pub iso_iterations: usize,
    /// Observed test steps handed to ISO at evaluation time.
    pub iso_k: usize,
    pub gamma_l1: f64,
    pub hidden: Vec<usize>,
    pub rnn_hidden: usize,
    pub normal_hidden: [usize; 2],
    pub alpha_hidden: usize,
    pub gamma_hidden: [usize; 2],
    pub n_train: usize,
    pub train_len: usize,
    pub n_test: usize,
    /// Predicted steps scored at evaluation; test trajectories hold one more state.
    pub eval_steps: usize,
    pub noise: f64,
    pub seed: u64,
    /// Where datasets live; defaults to the run's output directory.
    pub data_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(system: SystemKind, preset: Preset) -> Self {
        let paper = preset == Preset::Paper;
        let base = Self {
            system,
            model: ModelKind::Hnet,
            mode: TrainMode::Recurrent,
            train_integrator: None,
            test_integrator: None,
            rebound: ReboundKind::None,
            iso: false,
            dt: 0.1,
            horizon: 9,
            epochs: 1000,
            batch_size: 0,
            lr: 0.001,
            scheduler: SchedulerSpec::plateau(),
            iso_start_epoch: 100,
            iso_iterations: 20,
            iso_k: 10,
            gamma_l1: 0.0,
            hidden: vec![2048],
            rnn_hidden: 2048,
            normal_hidden: [128, 32],
            alpha_hidden: 32,
            gamma_hidden: [16, 16],
            n_train: 1000,
            train_len: 10,
            n_test: 32,
            eval_steps: 100,
            noise: 0.0,
            seed: 0,
            data_dir: None,
        };
        match (system, paper) {
            (SystemKind::SpringChain, true) => Self {
                batch_size: 256,
                ..base
            },
            (SystemKind::SpringChain, false) => Self {
                hidden: vec![128],
                rnn_hidden: 128,
                epochs: 150,
                batch_size: 8,
                n_train: 300,
                lr: 0.003,
                iso_start_epoch: 140,
                ..base
            },
            (SystemKind::ThreeBody, true) => Self {
                dt: 1.0,
                horizon: 4,
                hidden: vec![512; 3],
                rnn_hidden: 512,
                lr: 3e-4,
                n_train: 100,
                eval_steps: 9,
                ..base
            },
            (SystemKind::ThreeBody, false) => Self {
                dt: 1.0,
                horizon: 4,
                hidden: vec![64; 3],
                rnn_hidden: 64,
                epochs: 200,
                lr: 1e-3,
                n_train: 100,
                eval_steps: 9,
                iso_start_epoch: 20,
                ..base
            },
            (SystemKind::Billiard, true) => Self {
                hidden: vec![32],
                rnn_hidden: 32,
                epochs: 1500,
                lr: 0.005,
                scheduler: SchedulerSpec::exponential(),
                gamma_l1: 1e-3,
                n_train: 5000,
                eval_steps: 59,
                ..base
            },
            (SystemKind::Billiard, false) => Self {
                hidden: vec![16],
                rnn_hidden: 16,
                normal_hidden: [32, 8],
                alpha_hidden: 8,
                gamma_hidden: [8, 8],
                epochs: 300,
                lr: 0.005,
                scheduler: SchedulerSpec::exponential(),
                gamma_l1: 1e-3,
                n_train: 500,
                eval_steps: 59,
                iso_start_epoch: 30,
                ..base
            },
        }
    }

    /// Preset values for the file's `system`, overridden by the file's entries.
    pub fn from_text(text: &str, preset: Preset) -> Result<Self> {
        let entries = parse_entries(text)?;
        let system = match entries.get("system") {
            Some(v) => v.parse::<SystemKind>()?,
            None => SystemKind::SpringChain,
        };
        let mut cfg = Self::preset(system, preset);
        for (k, v) in &entries {
            cfg.set(k, v).with_context(|| format!("config key '{k}'"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_text(&text, preset).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "system" => self.system = value.parse()?,
            "model" => self.model = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "train_integrator" => self.train_integrator = Some(value.parse()?),
            "test_integrator" => self.test_integrator = Some(value.parse()?),
            "rebound" => self.rebound = value.parse()?,
            "iso" => self.iso = parse_bool(value)?,
            "dt" => self.dt = value.parse()?,
            "horizon" => self.horizon = value.parse()?,
            "epochs" => self.epochs = value.parse()?,
            "batch_size" => self.batch_size = value.parse()?,
            "lr" => self.lr = value.parse()?,
            "scheduler" => {
                self.scheduler = match value {
                    "plateau" => SchedulerSpec::plateau(),
                    "exponential" => SchedulerSpec::exponential(),
                    "constant" => SchedulerSpec::Constant,
                    other => bail!("unknown scheduler '{other}'"),
                }
            }
            "iso_start_epoch" => self.iso_start_epoch = value.parse()?,
            "iso_iterations" => self.iso_iterations = value.parse()?,
            "iso_k" => self.iso_k = value.parse()?,
            "gamma_l1" => self.gamma_l1 = value.parse()?,
            "hidden" => self.hidden = parse_list(value)?,
            "rnn_hidden" => self.rnn_hidden = value.parse()?,
            "normal_hidden" => self.normal_hidden = parse_pair(value)?,
            "alpha_hidden" => self.alpha_hidden = value.parse()?,
            "gamma_hidden" => self.gamma_hidden = parse_pair(value)?,
            "n_train" => self.n_train = value.parse()?,
            "train_len" => self.train_len = value.parse()?,
            "n_test" => self.n_test = value.parse()?,
            "eval_steps" => self.eval_steps = value.parse()?,
            "noise" => self.noise = value.parse()?,
            "seed" => self.seed = value.parse()?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            other => bail!("unknown key '{other}'"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.model == ModelKind::Rnn && (self.train_integrator.is_some() || self.test_integrator.is_some()) {
            bail!("the rnn model has no integrator; remove train_integrator/test_integrator");
        }
        if self.model == ModelKind::Rnn && self.rebound != ReboundKind::None {
            bail!("rebound heads need a Hamiltonian or ODE model");
        }
        if self.rebound != ReboundKind::None && self.system != SystemKind::Billiard {
            bail!("rebound heads are only defined for the billiard system");
        }
        let rebound_int = [self.train_integrator, self.test_integrator]
            .iter()
            .any(|k| *k == Some(IntegratorKind::ReboundLeapfrog));
        if rebound_int && self.rebound == ReboundKind::None {
            bail!("the rebound integrator needs rebound = learned or unit_alpha");
        }
        if self.rebound != ReboundKind::None {
            for k in [self.train_integrator, self.test_integrator].into_iter().flatten() {
                if k != IntegratorKind::ReboundLeapfrog {
                    bail!("with rebound heads both integrators must be rebound_leapfrog, got {k}");
                }
            }
        }
        if self.iso && !self.model.is_learned() && self.model != ModelKind::Truth {
            bail!("ISO needs a model to fit the initial state with");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            bail!("hidden widths must be positive");
        }
        if self.train_len < 2 || self.eval_steps == 0 || self.n_test == 0 {
            bail!("need train_len ≥ 2, eval_steps ≥ 1 and n_test ≥ 1");
        }
        if self.mode == TrainMode::Recurrent && self.horizon + 1 > self.train_len {
            bail!(
                "horizon {} needs training trajectories of at least {} states",
                self.horizon,
                self.horizon + 1
            );
        }
        if self.iso && self.iso_k > self.eval_steps + 1 {
            bail!("iso_k = {} exceeds the test trajectory length", self.iso_k);
        }
        if !(self.dt > 0.0) || !(self.noise >= 0.0) {
            bail!("need dt > 0 and noise ≥ 0");
        }
        self.train_config().validate()?;
        Ok(())
    }

    fn default_integrator(&self) -> IntegratorKind {
        if self.rebound == ReboundKind::None {
            IntegratorKind::Leapfrog
        } else {
            IntegratorKind::ReboundLeapfrog
        }
    }

    pub fn train_integrator(&self) -> IntegratorKind {
        self.train_integrator.unwrap_or_else(|| self.default_integrator())
    }

    pub fn test_integrator(&self) -> IntegratorKind {
        self.test_integrator.unwrap_or_else(|| self.default_integrator())
    }

    pub fn effective_horizon(&self) -> usize {
        match self.mode {
            TrainMode::SingleStep => 1,
            TrainMode::Recurrent => self.horizon,
        }
    }

    pub fn rebound_spec(&self) -> Option<ReboundSpec> {
        let alpha_mode = match self.rebound {
            ReboundKind::None => return None,
            ReboundKind::UnitAlpha => HeadMode::Fixed(1.0),
            ReboundKind::Learned => HeadMode::Learned,
        };
        Some(ReboundSpec {
            normal_hidden: self.normal_hidden,
            alpha_hidden: self.alpha_hidden,
            gamma_hidden: self.gamma_hidden,
            alpha_mode,
            gamma_mode: HeadMode::Learned,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            train_integrator: self.train_integrator(),
            test_integrator: self.test_integrator(),
            dt: self.dt,
            horizon: self.effective_horizon(),
            epochs: self.epochs,
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            lr: self.lr,
            scheduler: self.scheduler,
            iso: IsoConfig {
                enabled: self.iso,
                start_epoch: self.iso_start_epoch,
                iterations: self.iso_iterations,
            },
            gamma_l1: self.gamma_l1,
            seed: derive_seed(self.seed, 11),
        }
    }

    /// Every field as `key = value` lines, readable by [`ExperimentConfig::from_text`].
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let scheduler = match self.scheduler {
            SchedulerSpec::Constant => "constant",
            SchedulerSpec::Plateau { .. } => "plateau",
            SchedulerSpec::Exponential { .. } => "exponential",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("system", self.system.to_string());
        kv("model", self.model.to_string());
        kv("mode", self.mode.to_string());
        if let Some(k) = self.train_integrator {
            kv("train_integrator", k.to_string());
        }
        if let Some(k) = self.test_integrator {
            kv("test_integrator", k.to_string());
        }
        kv("rebound", self.rebound.to_string());
        kv("iso", self.iso.to_string());
        kv("dt", self.dt.to_string());
        kv("horizon", self.horizon.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("scheduler", scheduler.to_string());
        kv("iso_start_epoch", self.iso_start_epoch.to_string());
        kv("iso_iterations", self.iso_iterations.to_string());
        kv("iso_k", self.iso_k.to_string());
        kv("gamma_l1", self.gamma_l1.to_string());
        kv("hidden", list(&self.hidden));
        kv("rnn_hidden", self.rnn_hidden.to_string());
        kv("normal_hidden", list(&self.normal_hidden));
        kv("alpha_hidden", self.alpha_hidden.to_string());
        kv("gamma_hidden", list(&self.gamma_hidden));
        kv("n_train", self.n_train.to_string());
        kv("train_len", self.train_len.to_string());
        kv("n_test", self.n_test.to_string());
        kv("eval_steps", self.eval_steps.to_string());
        kv("noise", self.noise.to_string());
        kv("seed", self.seed.to_string());
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        s
    }
}

/// Independent seed stream `k` of a run seed.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected 'key = value', got '{raw}'", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            bail!("line {}: empty key or value", i + 1);
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            bail!("line {}: duplicate key '{k}'", i + 1);
        }
    }
    Ok(out)
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => bail!("expected a boolean, got '{other}'"),
    }
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad width '{s}'")))
        .collect()
}

fn parse_pair(v: &str) -> Result<[usize; 2]> {
    let l = parse_list(v)?;
    match l.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => bail!("expected two comma-separated widths, got '{v}'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_preset() {
        let cfg = ExperimentConfig::from_text(
            "# noisy chain\nsystem = spring_chain\nnoise = 0.1 # per step\nhidden = 64, 32\n",
            Preset::Desk,
        )
        .unwrap();
        assert_eq!(cfg.noise, 0.1);
        assert_eq!(cfg.hidden, vec![64, 32]);
        assert_eq!(cfg.epochs, ExperimentConfig::preset(SystemKind::SpringChain, Preset::Desk).epochs);
    }

    #[test]
    fn full_size_preset_constants() {
        let s = ExperimentConfig::preset(SystemKind::SpringChain, Preset::Paper);
        assert_eq!((s.hidden.as_slice(), s.epochs, s.lr, s.n_train, s.train_len), (&[2048][..], 1000, 0.001, 1000, 10));
        let t = ExperimentConfig::preset(SystemKind::ThreeBody, Preset::Paper);
        assert_eq!((t.hidden.as_slice(), t.lr, t.dt, t.n_train), (&[512, 512, 512][..], 3e-4, 1.0, 100));
        let b = ExperimentConfig::preset(SystemKind::Billiard, Preset::Paper);
        assert_eq!((b.epochs, b.lr, b.n_train, b.eval_steps + 1), (1500, 0.005, 5000, 60));
        assert_eq!(b.scheduler, SchedulerSpec::exponential());
    }

    #[test]
    fn rnn_with_integrator_is_rejected() {
        let err = ExperimentConfig::from_text("model = rnn\ntrain_integrator = leapfrog\n", Preset::Desk).unwrap_err();
        assert!(format!("{err:#}").contains("integrator"));
        assert!(ExperimentConfig::from_text("model = rnn\n", Preset::Desk).is_ok());
    }

    #[test]
    fn bad_input_is_rejected() {
        for text in [
            "bogus = 1\n",
            "epochs\n",
            "lr = fast\n",
            "seed = 1\nseed = 2\n",
            "rebound = learned\n",
            "system = billiard\nrebound = learned\ntrain_integrator = euler\n",
            "system = billiard\ntest_integrator = rebound_leapfrog\n",
        ] {
            assert!(ExperimentConfig::from_text(text, Preset::Desk).is_err(), "{text:?}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::preset(SystemKind::Billiard, Preset::Desk);
        cfg.rebound = ReboundKind::Learned;
        cfg.test_integrator = Some(IntegratorKind::ReboundLeapfrog);
        cfg.data_dir = Some(PathBuf::from("/tmp/data"));
        let back = ExperimentConfig::from_text(&cfg.to_text(), Preset::Paper).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn single_step_uses_unit_horizon() {
        let cfg = ExperimentConfig::from_text("mode = single_step\n", Preset::Desk).unwrap();
        assert_eq!(cfg.train_config().horizon, 1);
    }
}
