use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{BoundMlp, Mlp, MlpSpec};
use crate::ad::{Activation, Tape, Tensor, Var};
use crate::{Error, Result};

/// Inputs of the normal and α heads: two 10×10 patches.
pub const WIDE_INPUTS: usize = 200;
/// Input of the γ head: one 2×2 patch.
pub const SMALL_INPUTS: usize = 4;
/// Guard below which the pre-normalisation normal is mapped to zero.
pub const NORMAL_EPS: f64 = 1e-8;

/// Whether a head is trained or replaced by a constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    Learned,
    Fixed(f64),
}

/// Hidden widths of the three rebound heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReboundSpec {
    /// Hidden widths of the n̄ network; α branches off after the first one.
    pub normal_hidden: [usize; 2],
    pub alpha_hidden: usize,
    pub gamma_hidden: [usize; 2],
    pub alpha_mode: HeadMode,
    pub gamma_mode: HeadMode,
}

impl Default for ReboundSpec {
    fn default() -> Self {
        Self {
            normal_hidden: [128, 32],
            alpha_hidden: 32,
            gamma_hidden: [16, 16],
            alpha_mode: HeadMode::Learned,
            gamma_mode: HeadMode::Learned,
        }
    }
}

impl ReboundSpec {
    fn normal_spec(&self) -> Result<MlpSpec> {
        let [h1, h2] = self.normal_hidden;
        MlpSpec::tanh(vec![WIDE_INPUTS, h1, h2, 2])
    }

    fn alpha_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            vec![self.normal_hidden[0], self.alpha_hidden, 1],
            Activation::Tanh,
            Activation::Relu,
        )
    }

    fn gamma_spec(&self) -> Result<MlpSpec> {
        let [h1, h2] = self.gamma_hidden;
        MlpSpec::new(
            vec![SMALL_INPUTS, h1, h2, 1],
            Activation::Tanh,
            Activation::Sigmoid,
        )
    }
}

/// The n̄, α and γ networks of the rebound-augmented step.
#[derive(Clone, Debug, PartialEq)]
pub struct ReboundHeads {
    pub spec: ReboundSpec,
    pub normal: Mlp,
    /// Tail of the α network; its input is the first hidden layer of `normal`.
    pub alpha: Mlp,
    pub gamma: Mlp,
}

impl ReboundHeads {
    pub fn zeros(spec: ReboundSpec) -> Result<Self> {
        Ok(Self {
            normal: Mlp::zeros(spec.normal_spec()?),
            alpha: Mlp::zeros(spec.alpha_spec()?),
            gamma: Mlp::zeros(spec.gamma_spec()?),
            spec,
        })
    }

    pub fn init<R: Rng + ?Sized>(spec: ReboundSpec, rng: &mut R) -> Result<Self> {
        Ok(Self {
            normal: Mlp::init(spec.normal_spec()?, rng),
            alpha: Mlp::init(spec.alpha_spec()?, rng),
            gamma: Mlp::init(spec.gamma_spec()?, rng),
            spec,
        })
    }

    pub fn param_count(&self) -> usize {
        self.normal.params.len() + self.alpha.params.len() + self.gamma.params.len()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundRebound> {
        Ok(BoundRebound {
            alpha_mode: self.spec.alpha_mode,
            gamma_mode: self.spec.gamma_mode,
            normal: self.normal.bind(tape, trainable)?,
            alpha: self.alpha.bind(tape, trainable)?,
            gamma: self.gamma.bind(tape, trainable)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BoundRebound {
    pub alpha_mode: HeadMode,
    pub gamma_mode: HeadMode,
    pub normal: BoundMlp,
    pub alpha: BoundMlp,
    pub gamma: BoundMlp,
}

/// Per-row head outputs.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[rows, 2]`, unit rows or zero.
    pub normal: Var,
    /// `[rows, 1]` in `[0, 1]`.
    pub alpha: Var,
    /// `[rows, 1]` in `(0, 1)`.
    pub gamma: Var,
}

impl BoundRebound {
    /// `wide` holds the two flattened 10×10 patches side by side (`[rows, 200]`),
    /// `small` the flattened 2×2 patch (`[rows, 4]`).
    pub fn forward(&self, tape: &mut Tape, wide: Var, small: Var) -> Result<HeadOutputs> {
        let (ws, ss) = (tape.shape(wide).to_vec(), tape.shape(small).to_vec());
        if ws.len() != 2 || ws[1] != WIDE_INPUTS || ss.len() != 2 || ss[1] != SMALL_INPUTS || ws[0] != ss[0] {
            return Err(Error::Dimension(format!(
                "rebound heads expect [n, {WIDE_INPUTS}] and [n, {SMALL_INPUTS}] patches, got {ws:?} and {ss:?}"
            )));
        }
        let rows = ws[0];
        let trace = self.normal.forward_trace(tape, wide)?;
        let normal = tape.normalize_rows(trace.output, NORMAL_EPS)?;
        let alpha = match self.alpha_mode {
            HeadMode::Learned => {
                let a = self.alpha.forward(tape, trace.hidden[0])?;
                tape.min_scalar(a, 1.0)?
            }
            HeadMode::Fixed(v) => tape.constant(Tensor::filled(vec![rows, 1], v))?,
        };
        let gamma = match self.gamma_mode {
            HeadMode::Learned => self.gamma.forward(tape, small)?,
            HeadMode::Fixed(v) => tape.constant(Tensor::filled(vec![rows, 1], v))?,
        };
        Ok(HeadOutputs {
            normal,
            alpha,
            gamma,
        })
    }
}
