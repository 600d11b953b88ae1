use rand::Rng;

use super::params::{BoundParams, ParamVector};
use crate::ad::{Tape, Tensor, Var};
use crate::{Error, Result};

const WX: usize = 0;
const WH: usize = 1;
const B: usize = 2;
const WO: usize = 3;
const BO: usize = 4;

/// Vanilla tanh RNN that reads a phase state and predicts the next one.
///
/// `h' = tanh(x W_x + h W_h + b)`, `ŷ = h' W_o + b_o`, with `x, ŷ ∈ ℝ^{2d}`
/// laid out as `[p, q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    dim: usize,
    hidden: usize,
    pub params: ParamVector,
}

fn shapes(dim: usize, hidden: usize) -> [(usize, usize); 5] {
    [
        (2 * dim, hidden),
        (hidden, hidden),
        (1, hidden),
        (hidden, 2 * dim),
        (1, 2 * dim),
    ]
}

impl RnnModel {
    pub fn zeros(dim: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Spec(format!(
                "RNN needs positive sizes, got dim {dim}, hidden {hidden}"
            )));
        }
        Ok(Self {
            dim,
            hidden,
            params: ParamVector::zeros(&shapes(dim, hidden)),
        })
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(dim, hidden)?;
        let bx = 1.0 / ((2 * dim) as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        m.params.fill_uniform(&[bx, bh, bh, bh, bh], rng);
        Ok(m)
    }

    pub fn from_values(dim: usize, hidden: usize, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(dim, hidden)?;
        m.params = ParamVector::from_values(&shapes(dim, hidden), values)?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundRnn> {
        Ok(BoundRnn {
            dim: self.dim,
            hidden: self.hidden,
            params: self.params.bind(tape, trainable)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BoundRnn {
    dim: usize,
    hidden: usize,
    pub params: BoundParams,
}

impl BoundRnn {
    fn var(&self, i: usize) -> Var {
        self.params.vars[i]
    }

    /// Zero hidden state for a batch of `rows`.
    pub fn initial_hidden(&self, tape: &mut Tape, rows: usize) -> Result<Var> {
        Ok(tape.constant(Tensor::zeros(vec![rows, self.hidden]))?)
    }

    /// One recurrent update; returns `(h', ŷ)`.
    pub fn step(&self, tape: &mut Tape, hidden: Var, input: Var) -> Result<(Var, Var)> {
        let (hs, xs) = (tape.shape(hidden).to_vec(), tape.shape(input).to_vec());
        if xs.len() != 2 || xs[1] != 2 * self.dim || hs.len() != 2 || hs[1] != self.hidden || hs[0] != xs[0] {
            return Err(Error::Dimension(format!(
                "RNN step got hidden {hs:?} and input {xs:?}"
            )));
        }
        let a = tape.matmul(input, self.var(WX))?;
        let r = tape.matmul(hidden, self.var(WH))?;
        let a = tape.add(a, r)?;
        let a = tape.add_row(a, self.var(B))?;
        let h = tape.tanh(a)?;
        let y = tape.matmul(h, self.var(WO))?;
        let y = tape.add_row(y, self.var(BO))?;
        Ok((h, y))
    }

    /// Closed-loop rollout from `z0` (`[rows, 2d]`): each prediction is fed
    /// back as the next input. Returns `n_steps + 1` states, the first being
    /// `z0` itself.
    pub fn rollout(&self, tape: &mut Tape, z0: Var, n_steps: usize) -> Result<Vec<Var>> {
        let rows = tape.shape(z0)[0];
        let mut h = self.initial_hidden(tape, rows)?;
        let mut out = Vec::with_capacity(n_steps + 1);
        out.push(z0);
        let mut x = z0;
        for step in 0..n_steps {
            let (h2, y) = self.step(tape, h, x).map_err(|e| match e {
                Error::Ad(crate::ad::AdError::NonFinite { .. }) => {
                    Error::NonFiniteState { step: step + 1 }
                }
                other => other,
            })?;
            h = h2;
            x = y;
            out.push(y);
        }
        Ok(out)
    }
}
