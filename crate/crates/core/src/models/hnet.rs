use rand::Rng;

use super::mlp::{BoundMlp, Mlp, MlpSpec};
use crate::ad::{Tape, Var};
use crate::integrators::PhaseField;
use crate::{Error, Result};

/// Separable learned Hamiltonian `H(p, q) = K(p) + V(q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianModel {
    pub kinetic: Mlp,
    pub potential: Mlp,
}

impl HamiltonianModel {
    /// Two tanh networks `ℝ^dim → ℝ` with the given hidden widths.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let spec = scalar_spec(dim, hidden)?;
        let kinetic = Mlp::init(spec.clone(), rng);
        let potential = Mlp::init(spec, rng);
        Self::new(kinetic, potential)
    }

    pub fn new(kinetic: Mlp, potential: Mlp) -> Result<Self> {
        for (name, net) in [("kinetic", &kinetic), ("potential", &potential)] {
            if net.spec.output_dim() != 1 {
                return Err(Error::Spec(format!("{name} network must output a scalar")));
            }
        }
        if kinetic.spec.input_dim() != potential.spec.input_dim() {
            return Err(Error::Spec("kinetic and potential input dims differ".into()));
        }
        Ok(Self { kinetic, potential })
    }

    pub fn dim(&self) -> usize {
        self.kinetic.spec.input_dim()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundHamiltonian> {
        Ok(BoundHamiltonian {
            kinetic: self.kinetic.bind(tape, trainable)?,
            potential: self.potential.bind(tape, trainable)?,
        })
    }
}

fn scalar_spec(dim: usize, hidden: &[usize]) -> Result<MlpSpec> {
    let mut widths = vec![dim];
    widths.extend_from_slice(hidden);
    widths.push(1);
    MlpSpec::tanh(widths)
}

#[derive(Clone, Debug)]
pub struct BoundHamiltonian {
    pub kinetic: BoundMlp,
    pub potential: BoundMlp,
}

impl BoundHamiltonian {
    /// `K'(p)`.
    pub fn kinetic_grad(&self, tape: &mut Tape, p: Var) -> Result<Var> {
        self.kinetic.input_gradient(tape, p)
    }

    /// `V'(q)`.
    pub fn potential_grad(&self, tape: &mut Tape, q: Var) -> Result<Var> {
        self.potential.input_gradient(tape, q)
    }
}

impl PhaseField for BoundHamiltonian {
    fn momentum_rate(&self, tape: &mut Tape, _p: Var, q: Var) -> Result<Var> {
        let g = self.potential_grad(tape, q)?;
        Ok(tape.scale(g, -1.0)?)
    }

    fn position_rate(&self, tape: &mut Tape, p: Var, _q: Var) -> Result<Var> {
        self.kinetic_grad(tape, p)
    }

    fn is_separable(&self) -> bool {
        true
    }
}

/// Network that outputs `(ṗ, q̇)` directly from `(p, q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeModel {
    pub net: Mlp,
}

impl OdeModel {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut widths = vec![2 * dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * dim);
        Self::new(Mlp::init(MlpSpec::tanh(widths)?, rng))
    }

    pub fn new(net: Mlp) -> Result<Self> {
        let (i, o) = (net.spec.input_dim(), net.spec.output_dim());
        if i != o || i % 2 != 0 {
            return Err(Error::Spec(format!(
                "O-NET must map ℝ^2d → ℝ^2d, got {i} → {o}"
            )));
        }
        Ok(Self { net })
    }

    pub fn dim(&self) -> usize {
        self.net.spec.input_dim() / 2
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundOde> {
        Ok(BoundOde {
            net: self.net.bind(tape, trainable)?,
            dim: self.dim(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct BoundOde {
    pub net: BoundMlp,
    dim: usize,
}

impl PhaseField for BoundOde {
    fn momentum_rate(&self, tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
        Ok(self.rates(tape, p, q)?.0)
    }

    fn position_rate(&self, tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
        Ok(self.rates(tape, p, q)?.1)
    }

    fn rates(&self, tape: &mut Tape, p: Var, q: Var) -> Result<(Var, Var)> {
        let z = tape.concat_cols(&[p, q])?;
        let f = self.net.forward(tape, z)?;
        let dp = tape.slice_cols(f, 0, self.dim)?;
        let dq = tape.slice_cols(f, self.dim, self.dim)?;
        Ok((dp, dq))
    }

    fn is_separable(&self) -> bool {
        false
    }
}
