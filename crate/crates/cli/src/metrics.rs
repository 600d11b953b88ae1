//! Position-error metrics and their CSV exports.

use std::io::Write;

use anyhow::{ensure, Result};

/// Euclidean distance between the position halves of two `[p, q]` states.
pub fn position_error(pred: &[f64], truth: &[f64]) -> f64 {
    let d = pred.len() / 2;
    pred[d..]
        .iter()
        .zip(&truth[d..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `errors[sample][step - 1]` for steps `1..=horizon`. Samples whose
/// prediction is missing (diverged) score `+∞` at every step.
pub fn error_matrix(
    predicted: &[Option<Vec<Vec<f64>>>],
    reference: &[Vec<Vec<f64>>],
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    ensure!(predicted.len() == reference.len(), "prediction and reference sample counts differ");
    predicted
        .iter()
        .zip(reference)
        .map(|(pred, truth)| {
            ensure!(truth.len() > horizon, "reference holds {} states, need {}", truth.len(), horizon + 1);
            Ok(match pred {
                Some(pred) => (1..=horizon).map(|t| position_error(&pred[t], &truth[t])).collect(),
                None => vec![f64::INFINITY; horizon],
            })
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Errors of one evaluation against the noisy and the clean reference.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub noisy: Vec<Vec<f64>>,
    pub clean: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl EvalReport {
    pub fn samples(&self) -> usize {
        self.noisy.len()
    }

    /// Mean error over the horizon for each sample.
    pub fn per_sample(errors: &[Vec<f64>]) -> Vec<f64> {
        errors.iter().map(|e| mean_std(e).0).collect()
    }

    /// Mean error over samples at each step.
    pub fn per_step(errors: &[Vec<f64>]) -> Vec<f64> {
        let n = errors.len() as f64;
        (0..errors[0].len())
            .map(|t| errors.iter().map(|e| e[t]).sum::<f64>() / n)
            .collect()
    }

    /// Mean and std over samples of the per-sample mean error.
    pub fn summary(errors: &[Vec<f64>]) -> (f64, f64) {
        mean_std(&Self::per_sample(errors))
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "reference,error_mean,error_std,samples,horizon")?;
        for (name, e) in [("noisy", &self.noisy), ("clean", &self.clean)] {
            let (m, s) = Self::summary(e);
            writeln!(w, "{name},{m},{s},{},{}", self.samples(), self.horizon)?;
        }
        Ok(())
    }

    pub fn write_per_step<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,error_noisy,error_clean")?;
        let (a, b) = (Self::per_step(&self.noisy), Self::per_step(&self.clean));
        for (t, (x, y)) in a.iter().zip(&b).enumerate() {
            writeln!(w, "{},{x},{y}", t + 1)?;
        }
        Ok(())
    }

    pub fn write_per_sample<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample,error_noisy,error_clean")?;
        let (a, b) = (Self::per_sample(&self.noisy), Self::per_sample(&self.clean));
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            writeln!(w, "{i},{x},{y}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn position_error_matches_brute_force(
            p in prop::collection::vec(-5.0f64..5.0, 40),
            q in prop::collection::vec(-5.0f64..5.0, 40),
        ) {
            let mut sq = 0.0;
            for i in 20..40 {
                sq += (p[i] - q[i]).powi(2);
            }
            let got = position_error(&p, &q);
            prop_assert!((got - sq.sqrt()).abs() <= 1e-12 * sq.sqrt().max(1.0));
        }
    }

    #[test]
    fn momenta_are_ignored() {
        assert_eq!(position_error(&[9.0, 3.0], &[-4.0, 3.0]), 0.0);
        assert_eq!(position_error(&[0.0, 0.0, 3.0, 0.0], &[5.0, 5.0, 0.0, 4.0]), 5.0);
    }

    #[test]
    fn mean_std_is_population() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn step_zero_is_skipped_and_divergence_is_infinite() {
        let truth = vec![vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]]; 2];
        let pred = vec![
            Some(vec![vec![0.0, 7.0], vec![0.0, 1.5], vec![0.0, 2.0]]),
            None,
        ];
        let e = error_matrix(&pred, &truth, 2).unwrap();
        assert_eq!(e[0], vec![0.5, 0.0]);
        assert!(e[1].iter().all(|v| v.is_infinite()));
    }
}
