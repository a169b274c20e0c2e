//! Repeated timing of a pipeline stage with wall-time and peak-memory summaries.
//!
//! Peak memory is the process high-water mark (`VmHWM` on Linux), reset before
//! each run where the kernel allows it. It is approximate and only meant for
//! comparing stages run the same way. On other platforms it is reported as
//! absent.

use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Mean and sample standard deviation (0 for a single run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub stage: String,
    pub runs: usize,
    pub wall_ms: Summary,
    pub peak_mem_kib: Option<Summary>,
    /// SHA-256 of the first run's output.
    pub output_digest: String,
    /// Whether every run produced the same output bytes.
    pub outputs_identical: bool,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn reset_peak_memory() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

fn peak_memory_kib() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

/// Runs `stage` `runs` times in sequence. The stage returns its output bytes.
pub fn bench<F>(name: &str, runs: usize, mut stage: F) -> Result<BenchReport>
where
    F: FnMut() -> Result<Vec<u8>>,
{
    if runs == 0 {
        return Err(Error::Argument("bench needs at least one run".into()));
    }
    let mut times = Vec::with_capacity(runs);
    let mut mems = Vec::with_capacity(runs);
    let mut first: Option<Vec<u8>> = None;
    let mut identical = true;
    for _ in 0..runs {
        reset_peak_memory();
        let start = Instant::now();
        let out = stage()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        mems.push(peak_memory_kib());
        match &first {
            None => first = Some(out),
            Some(f) => identical &= *f == out,
        }
    }
    let peak_mem_kib = mems
        .into_iter()
        .collect::<Option<Vec<f64>>>()
        .map(|m| Summary::of(&m));
    Ok(BenchReport {
        stage: name.to_string(),
        runs,
        wall_ms: Summary::of(&times),
        peak_mem_kib,
        output_digest: digest(first.as_deref().unwrap_or_default()),
        outputs_identical: identical,
    })
}
