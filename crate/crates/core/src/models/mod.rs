//! Trainable dynamics models and the rebound heads.

mod hnet;
mod mlp;
mod params;
mod rebound;
mod rnn;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use hnet::{BoundHamiltonian, BoundOde, HamiltonianModel, OdeModel};
pub use mlp::{BoundMlp, ForwardTrace, Mlp, MlpSpec};
pub use params::{Block, BoundParams, ParamVector};
pub use rebound::{
    BoundRebound, HeadMode, HeadOutputs, ReboundHeads, ReboundSpec, NORMAL_EPS, SMALL_INPUTS,
    WIDE_INPUTS,
};
pub use rnn::{BoundRnn, RnnModel};

use crate::ad::{Gradients, Tape};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRNNCK01";

/// The network that produces the dynamics.
#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsModel {
    Hnet(HamiltonianModel),
    Onet(OdeModel),
    Rnn(RnnModel),
}

/// Shape information needed to rebuild a [`DynamicsModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Hnet { kinetic: MlpSpec, potential: MlpSpec },
    Onet { net: MlpSpec },
    Rnn { dim: usize, hidden: usize },
}

impl DynamicsModel {
    pub fn dim(&self) -> usize {
        match self {
            Self::Hnet(m) => m.dim(),
            Self::Onet(m) => m.dim(),
            Self::Rnn(m) => m.dim(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Self::Hnet(m) => Architecture::Hnet {
                kinetic: m.kinetic.spec.clone(),
                potential: m.potential.spec.clone(),
            },
            Self::Onet(m) => Architecture::Onet {
                net: m.net.spec.clone(),
            },
            Self::Rnn(m) => Architecture::Rnn {
                dim: m.dim(),
                hidden: m.hidden_size(),
            },
        }
    }

    fn blocks(&self) -> Vec<&ParamVector> {
        match self {
            Self::Hnet(m) => vec![&m.kinetic.params, &m.potential.params],
            Self::Onet(m) => vec![&m.net.params],
            Self::Rnn(m) => vec![&m.params],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamVector> {
        match self {
            Self::Hnet(m) => vec![&mut m.kinetic.params, &mut m.potential.params],
            Self::Onet(m) => vec![&mut m.net.params],
            Self::Rnn(m) => vec![&mut m.params],
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundDynamics> {
        Ok(match self {
            Self::Hnet(m) => BoundDynamics::Hnet(m.bind(tape, trainable)?),
            Self::Onet(m) => BoundDynamics::Onet(m.bind(tape, trainable)?),
            Self::Rnn(m) => BoundDynamics::Rnn(m.bind(tape, trainable)?),
        })
    }
}

#[derive(Clone, Debug)]
pub enum BoundDynamics {
    Hnet(BoundHamiltonian),
    Onet(BoundOde),
    Rnn(BoundRnn),
}

impl BoundDynamics {
    fn params(&self) -> Vec<&BoundParams> {
        match self {
            Self::Hnet(m) => vec![&m.kinetic.params, &m.potential.params],
            Self::Onet(m) => vec![&m.net.params],
            Self::Rnn(m) => vec![&m.params],
        }
    }
}

/// A dynamics model plus optional rebound heads, with a single flat
/// parameter layout: dynamics blocks first, then n̄, α and γ heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub dynamics: DynamicsModel,
    pub rebound: Option<ReboundHeads>,
}

#[derive(Clone, Debug)]
pub struct BoundBundle {
    pub dynamics: BoundDynamics,
    pub rebound: Option<BoundRebound>,
}

impl BoundBundle {
    /// Flat gradient in the layout of [`ModelBundle::param_values`].
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.dynamics.params() {
            p.gradient_into(grads, &mut out);
        }
        if let Some(r) = &self.rebound {
            for net in [&r.normal, &r.alpha, &r.gamma] {
                net.params.gradient_into(grads, &mut out);
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    rebound: Option<ReboundSpec>,
    param_count: usize,
}

impl ModelBundle {
    pub fn new(dynamics: DynamicsModel) -> Self {
        Self {
            dynamics,
            rebound: None,
        }
    }

    fn blocks(&self) -> Vec<&ParamVector> {
        let mut v = self.dynamics.blocks();
        if let Some(r) = &self.rebound {
            v.extend([&r.normal.params, &r.alpha.params, &r.gamma.params]);
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamVector> {
        let mut v = self.dynamics.blocks_mut();
        if let Some(r) = &mut self.rebound {
            v.extend([&mut r.normal.params, &mut r.alpha.params, &mut r.gamma.params]);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.values().iter().copied()).collect()
    }

    pub fn set_param_values(&mut self, values: &[f64]) -> Result<()> {
        let n = self.param_count();
        if values.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} parameters, got {}",
                values.len()
            )));
        }
        let mut rest = values;
        for b in self.blocks_mut() {
            let (head, tail) = rest.split_at(b.len());
            b.values_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundBundle> {
        Ok(BoundBundle {
            dynamics: self.dynamics.bind(tape, trainable)?,
            rebound: match &self.rebound {
                Some(r) => Some(r.bind(tape, trainable)?),
                None => None,
            },
        })
    }

    /// Rebuilds a zero-initialised bundle from its architecture description.
    pub fn from_architecture(arch: &Architecture, rebound: Option<&ReboundSpec>) -> Result<Self> {
        let dynamics = match arch {
            Architecture::Hnet { kinetic, potential } => DynamicsModel::Hnet(HamiltonianModel::new(
                Mlp::zeros(kinetic.clone()),
                Mlp::zeros(potential.clone()),
            )?),
            Architecture::Onet { net } => DynamicsModel::Onet(OdeModel::new(Mlp::zeros(net.clone()))?),
            Architecture::Rnn { dim, hidden } => DynamicsModel::Rnn(RnnModel::zeros(*dim, *hidden)?),
        };
        Ok(Self {
            dynamics,
            rebound: rebound.map(|s| ReboundHeads::zeros(s.clone())).transpose()?,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            architecture: self.dynamics.architecture(),
            rebound: self.rebound.as_ref().map(|r| r.spec.clone()),
            param_count: self.param_count(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self.param_values() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint too short".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)
            .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        let mut bundle = Self::from_architecture(&header.architecture, header.rebound.as_ref())?;
        if bundle.param_count() != header.param_count {
            return Err(Error::Format(format!(
                "header declares {} parameters, architecture has {}",
                header.param_count,
                bundle.param_count()
            )));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != 8 * header.param_count {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                8 * header.param_count
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        bundle.set_param_values(&values)?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
