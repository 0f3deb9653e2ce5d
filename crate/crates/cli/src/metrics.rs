//! Training metrics log: one tab-separated line per epoch.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsLine {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

impl MetricsLine {
    pub fn render(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.3}\n",
            self.epoch, self.lr, self.mean_loss, self.wall_seconds
        )
    }
}

pub fn append_line(path: &Path, line: &MetricsLine) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.render().as_bytes())?;
    Ok(())
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(CliError::Format(format!(
                    "metrics line {l:?}: expected 4 fields"
                )));
            }
            Ok(MetricsLine {
                epoch: f[0]
                    .parse()
                    .map_err(|_| CliError::Format(format!("bad epoch in {l:?}")))?,
                lr: f[1]
                    .parse()
                    .map_err(|_| CliError::Format(format!("bad lr in {l:?}")))?,
                mean_loss: f[2]
                    .parse()
                    .map_err(|_| CliError::Format(format!("bad loss in {l:?}")))?,
                wall_seconds: f[3]
                    .parse()
                    .map_err(|_| CliError::Format(format!("bad seconds in {l:?}")))?,
            })
        })
        .collect()
}
