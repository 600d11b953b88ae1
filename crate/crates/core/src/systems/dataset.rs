use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SystemKind;
use crate::integrators::PhaseState;
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"SRNNDS01";

/// Uniformly sampled trajectories. Each state is stored as `[p, q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: SystemKind,
    pub d: usize,
    pub traj_len: usize,
    pub dt: f64,
    pub sigma: f64,
    pub seed: u64,
    /// System parameters needed to rebuild the ground truth.
    pub extra: serde_json::Value,
    /// `[traj][time][2d]`, flattened.
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    system: SystemKind,
    d: usize,
    n_traj: usize,
    traj_len: usize,
    dt: f64,
    sigma: f64,
    seed: u64,
    extra: serde_json::Value,
}

impl Dataset {
    pub fn empty(system: SystemKind, d: usize, traj_len: usize, dt: f64, seed: u64) -> Self {
        Self {
            system,
            d,
            traj_len,
            dt,
            sigma: 0.0,
            seed,
            extra: serde_json::Value::Null,
            data: Vec::new(),
        }
    }

    fn state_len(&self) -> usize {
        2 * self.d
    }

    pub fn n_traj(&self) -> usize {
        if self.traj_len == 0 {
            0
        } else {
            self.data.len() / (self.traj_len * self.state_len())
        }
    }

    pub fn push_trajectory(&mut self, traj: &[PhaseState]) -> Result<()> {
        if traj.len() != self.traj_len {
            return Err(Error::Length(format!(
                "trajectory has {} states, dataset expects {}",
                traj.len(),
                self.traj_len
            )));
        }
        for s in traj {
            if s.dim() != self.d {
                return Err(Error::Dimension(format!("state dim {} != {}", s.dim(), self.d)));
            }
            self.data.extend_from_slice(&s.p);
            self.data.extend_from_slice(&s.q);
        }
        Ok(())
    }

    /// `[p, q]` of trajectory `traj` at step `t`.
    pub fn state(&self, traj: usize, t: usize) -> &[f64] {
        let n = self.state_len();
        let off = (traj * self.traj_len + t) * n;
        &self.data[off..off + n]
    }

    pub fn phase_state(&self, traj: usize, t: usize) -> PhaseState {
        let z = self.state(traj, t);
        PhaseState {
            p: z[..self.d].to_vec(),
            q: z[self.d..].to_vec(),
        }
    }

    /// The first `n` trajectories.
    pub fn take(&self, n: usize) -> Dataset {
        let per = self.traj_len * self.state_len();
        let mut out = self.clone();
        out.data.truncate(n.min(self.n_traj()) * per);
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            system: self.system,
            d: self.d,
            n_traj: self.n_traj(),
            traj_len: self.traj_len,
            dt: self.dt,
            sigma: self.sigma,
            seed: self.seed,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(8 * self.data.len());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("dataset too short".into()))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a dataset (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| Error::Format("truncated dataset header".into()))?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)
            .map_err(|_| Error::Format("truncated dataset header".into()))?;
        let h: Header = serde_json::from_slice(&json)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = h.n_traj * h.traj_len * 2 * h.d * 8;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            system: h.system,
            d: h.d,
            traj_len: h.traj_len,
            dt: h.dt,
            sigma: h.sigma,
            seed: h.seed,
            extra: h.extra,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// One row per `(traj, time)`: `traj,time,p0..,q0..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["traj".to_string(), "time".to_string()];
        header.extend((0..self.d).map(|i| format!("p{i}")));
        header.extend((0..self.d).map(|i| format!("q{i}")));
        writeln!(w, "{}", header.join(","))?;
        for traj in 0..self.n_traj() {
            for t in 0..self.traj_len {
                let vals: Vec<String> = self.state(traj, t).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{traj},{t},{}", vals.join(","))?;
            }
        }
        Ok(())
    }
}

/// Adds i.i.d. `N(0, σ²)` to every stored value.
pub fn add_noise(dataset: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(Error::Spec(format!("noise σ must be non-negative, got {sigma}")));
    }
    let mut out = dataset.clone();
    out.sigma = sigma;
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Spec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.data {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}
