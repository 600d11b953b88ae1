use crate::{Error, Result};

// Dormand–Prince 5(4) tableau; the field is autonomous so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;

#[derive(Clone, Copy, Debug)]
pub struct DopriOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; defaults to `1e-3·t_end` when `None`.
    pub initial_step: Option<f64>,
    /// When set, only states on the grid `0, Δ, 2Δ, …, t_end` are returned
    /// and steps are shortened to land on it exactly.
    pub sample_every: Option<f64>,
    pub max_steps: usize,
}

impl Default for DopriOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            initial_step: None,
            sample_every: None,
            max_steps: 1_000_000,
        }
    }
}

/// Accepted (or sampled) times and states.
#[derive(Clone, Debug, Default)]
pub struct DenseTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Integrates the autonomous system `ż = f(z)` from `0` to `t_end` with the
/// Dormand–Prince 5(4) pair and local extrapolation.
pub fn adaptive_integrate<F>(
    mut field: F,
    initial: &[f64],
    t_end: f64,
    opts: &DopriOptions,
) -> Result<DenseTrajectory>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(t_end > 0.0) {
        return Err(Error::Spec(format!("t_end must be positive, got {t_end}")));
    }
    let n = initial.len();
    let grid = opts.sample_every;
    if let Some(g) = grid {
        if !(g > 0.0) {
            return Err(Error::Spec(format!("sampling interval must be positive, got {g}")));
        }
    }
    let n_samples = grid.map(|g| (t_end / g).round() as usize);
    let mut out = DenseTrajectory::default();
    out.times.push(0.0);
    out.states.push(initial.to_vec());

    let mut t = 0.0;
    let mut y = initial.to_vec();
    let mut h = opts.initial_step.unwrap_or(1e-3 * t_end).min(t_end);
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = field(&y)?;
    let mut next_sample = 1usize;
    let mut ytmp = vec![0.0; n];
    let mut steps = 0;

    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepUnderflow { t });
        }
        // Next boundary the step must not cross.
        let target = match (grid, n_samples) {
            (Some(g), Some(_)) => (next_sample as f64 * g).min(t_end),
            _ => t_end,
        };
        let mut lands = false;
        if t + h >= target - 1e-12 * target.abs().max(1.0) {
            h = target - t;
            lands = true;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t });
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            k[s] = field(&ytmp)?;
        }
        // ytmp now holds the fifth-order solution (stage 7 uses the b weights).
        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(ytmp[i].abs());
            err += (h * e / sc).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= MIN_SCALE;
            continue;
        }
        let scale = if err == 0.0 {
            MAX_SCALE
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
        };
        if err <= 1.0 {
            t = if lands { target } else { t + h };
            y.copy_from_slice(&ytmp);
            k[0] = k[6].clone();
            match grid {
                Some(_) => {
                    if lands {
                        out.times.push(t);
                        out.states.push(y.clone());
                        next_sample += 1;
                    }
                }
                None => {
                    out.times.push(t);
                    out.states.push(y.clone());
                }
            }
            h *= scale;
        } else {
            h *= scale.min(1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let opts = DopriOptions {
            rtol: 1e-8,
            atol: 1e-12,
            ..Default::default()
        };
        let out = adaptive_integrate(|z| Ok(vec![-z[0]]), &[1.0], 1.0, &opts).unwrap();
        let last = out.states.last().unwrap()[0];
        assert!((last - (-1.0f64).exp()).abs() < 1e-8 * 10.0);
        assert_eq!(*out.times.last().unwrap(), 1.0);
    }

    #[test]
    fn harmonic_period() {
        let opts = DopriOptions::default();
        let tau = std::f64::consts::TAU;
        let out = adaptive_integrate(|z| Ok(vec![-z[1], z[0]]), &[0.0, 1.0], tau, &opts).unwrap();
        let z = out.states.last().unwrap();
        assert!(z[0].abs() < 1e-6 && (z[1] - 1.0).abs() < 1e-6, "{z:?}");
    }

    #[test]
    fn kepler_circular_orbit_keeps_radius() {
        // z = (px, py, x, y), unit central mass, circular speed 1 at r = 1.
        let f = |z: &[f64]| {
            let r3 = (z[2] * z[2] + z[3] * z[3]).powf(1.5);
            Ok(vec![-z[2] / r3, -z[3] / r3, z[0], z[1]])
        };
        let out = adaptive_integrate(f, &[0.0, 1.0, 1.0, 0.0], 20.0, &DopriOptions::default()).unwrap();
        for s in &out.states {
            let r = (s[2] * s[2] + s[3] * s[3]).sqrt();
            assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn samples_land_on_grid() {
        let opts = DopriOptions {
            sample_every: Some(0.25),
            ..Default::default()
        };
        let out = adaptive_integrate(|z| Ok(vec![-z[0]]), &[1.0], 2.0, &opts).unwrap();
        assert_eq!(out.times.len(), 9);
        for (i, (t, s)) in out.times.iter().zip(&out.states).enumerate() {
            assert!((t - 0.25 * i as f64).abs() < 1e-12);
            assert!((s[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_field_underflows() {
        // ż = z² from 1 blows up at t = 1.
        let opts = DopriOptions {
            max_steps: 100_000,
            ..Default::default()
        };
        let r = adaptive_integrate(|z| Ok(vec![z[0] * z[0]]), &[1.0], 2.0, &opts);
        assert!(r.is_err());
    }
}
