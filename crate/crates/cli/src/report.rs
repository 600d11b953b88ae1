//! Collects evaluated runs into one comparison table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use crate::config::{ExperimentConfig, ModelKind, Preset};
use crate::experiment::{RESOLVED_FILE, SUMMARY_FILE};

pub const REPORT_HEADER: &str =
    "system,mode,model,rebound,train_integrator,test_integrator,iso,error_mean,error_std,samples,horizon,run";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub config: ExperimentConfig,
    pub error_mean: f64,
    pub error_std: f64,
    pub samples: usize,
    pub horizon: usize,
    pub run: PathBuf,
}

impl ReportRow {
    pub fn read(run: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&run.join(RESOLVED_FILE), Preset::Paper)?;
        let path = run.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let line = text
            .lines()
            .find(|l| l.starts_with("noisy,"))
            .ok_or_else(|| anyhow!("{} has no noisy row", path.display()))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(anyhow!("malformed row in {}: {line}", path.display()));
        }
        Ok(Self {
            config,
            error_mean: f[1].parse()?,
            error_std: f[2].parse()?,
            samples: f[3].parse()?,
            horizon: f[4].parse()?,
            run: run.to_path_buf(),
        })
    }

    fn csv(&self) -> String {
        let c = &self.config;
        let (mode, train, test) = match c.model {
            ModelKind::Rnn => (c.mode.to_string(), "-".to_string(), "-".to_string()),
            ModelKind::Truth | ModelKind::Constant => ("-".into(), "-".into(), c.test_integrator().to_string()),
            _ => (
                c.mode.to_string(),
                c.train_integrator().to_string(),
                c.test_integrator().to_string(),
            ),
        };
        format!(
            "{},{mode},{},{},{train},{test},{},{},{},{},{},{}",
            c.system,
            c.model,
            c.rebound,
            c.iso as u8,
            self.error_mean,
            self.error_std,
            self.samples,
            self.horizon,
            self.run.display()
        )
    }
}

/// Reads every run; unreadable ones are returned separately with the reason.
pub fn collect(runs: &[PathBuf]) -> (Vec<ReportRow>, Vec<(PathBuf, anyhow::Error)>) {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for run in runs {
        match ReportRow::read(run) {
            Ok(r) => rows.push(r),
            Err(e) => missing.push((run.clone(), e)),
        }
    }
    (rows, missing)
}

pub fn write_report<W: Write>(rows: &[ReportRow], mut w: W) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}
