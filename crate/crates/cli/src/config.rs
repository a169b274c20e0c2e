//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anomaly_seek::embedding::prompt::{DEFAULT_NEGATIVE, DEFAULT_POSITIVE};
use anomaly_seek::embedding::PromptTemplates;
use anomaly_seek::expert::Aggregator;
use anomaly_seek::retrieval::{GmmConfig, KdeSampleConfig};
use anomaly_seek::sparse::SolverSettings;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Topk,
    Kde,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "topk" => Ok(Method::Topk),
            "kde" => Ok(Method::Kde),
            _ => Err(format!("expected topk or kde, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Max,
    Topq,
}

impl FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "max" => Ok(AggregatorKind::Max),
            "topq" => Ok(AggregatorKind::Topq),
            _ => Err(format!("expected max or topq, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub k_max: usize,
    pub variance_floor: f64,
    pub bandwidth_floor: f64,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub min_cluster_size: usize,
    pub budget: usize,
    pub method: Method,
    pub positive_prompt_template: String,
    pub negative_prompt_template: String,
    pub hsp_lambda: f64,
    pub hsp_mu: f64,
    pub hsp_iters: usize,
    pub hsp_tol: f64,
    pub aggregator: AggregatorKind,
    pub top_q: f64,
    pub bench_runs: usize,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gmm = GmmConfig::default();
        let hsp = SolverSettings::default();
        Self {
            seed: 0,
            k_max: gmm.k_max,
            variance_floor: gmm.variance_floor,
            bandwidth_floor: KdeSampleConfig::default().bandwidth_floor,
            gmm_max_iter: gmm.max_iter,
            gmm_tol: gmm.tol,
            min_cluster_size: gmm.min_cluster_size,
            budget: 10,
            method: Method::Kde,
            positive_prompt_template: DEFAULT_POSITIVE.into(),
            negative_prompt_template: DEFAULT_NEGATIVE.into(),
            hsp_lambda: hsp.lambda,
            hsp_mu: hsp.step_scale,
            hsp_iters: hsp.max_iter,
            hsp_tol: hsp.tol,
            aggregator: AggregatorKind::Topq,
            top_q: 0.01,
            bench_runs: 5,
            threads: 1,
        }
    }
}

/// Every configuration key with its documented range.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "RNG seed for mixture initialisation and synthetic fixtures (u64)"),
    ("k_max", "largest mixture size tried during score clustering (1..=64)"),
    ("variance_floor", "lower bound on mixture component variance (> 0)"),
    ("bandwidth_floor", "lower bound on the KDE bandwidth (> 0)"),
    ("gmm_max_iter", "EM iteration cap per mixture fit (>= 1)"),
    ("gmm_tol", "EM log-likelihood change that ends a fit (> 0)"),
    ("min_cluster_size", "fewest scores a component may own for its fit to count (>= 1)"),
    ("budget", "documents returned per query (>= 1)"),
    ("method", "retrieval method: topk | kde"),
    ("positive_prompt_template", "defect prompt template, [cls] and [obj] are substituted"),
    ("negative_prompt_template", "flawless prompt template, [cls] and [obj] are substituted"),
    ("hsp_lambda", "sparse-coding L1 weight for every stage (>= 0)"),
    ("hsp_mu", "ISTA step scale relative to 1/sigma_max (0 < mu <= 1)"),
    ("hsp_iters", "ISTA iteration cap per stage (>= 1)"),
    ("hsp_tol", "ISTA stopping tolerance (> 0)"),
    ("aggregator", "image score reduction: max | topq"),
    ("top_q", "fraction of largest map values averaged by topq (0 < q <= 1)"),
    ("bench_runs", "repetitions used by bench (>= 1)"),
    ("threads", "worker threads for batch work (1..=256)"),
];

pub fn keys_help() -> String {
    let d = RunConfig::default();
    let defaults = serde_json::to_value(&d).expect("config serializes");
    let mut out = String::from("Configuration keys (defaults < --config file < --set / flags):\n");
    for (key, help) in KEYS {
        let default = match &defaults[*key] {
            serde_json::Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        let _ = writeln!(out, "  {key:<26} {help} [default: {default}]");
    }
    out
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "variance_floor" => self.variance_floor = parse(key, value)?,
            "bandwidth_floor" => self.bandwidth_floor = parse(key, value)?,
            "gmm_max_iter" => self.gmm_max_iter = parse(key, value)?,
            "gmm_tol" => self.gmm_tol = parse(key, value)?,
            "min_cluster_size" => self.min_cluster_size = parse(key, value)?,
            "budget" => self.budget = parse(key, value)?,
            "method" => self.method = value.trim().parse().map_err(|e| CliError::Config(format!("method: {e}")))?,
            "positive_prompt_template" => self.positive_prompt_template = value.trim().to_string(),
            "negative_prompt_template" => self.negative_prompt_template = value.trim().to_string(),
            "hsp_lambda" => self.hsp_lambda = parse(key, value)?,
            "hsp_mu" => self.hsp_mu = parse(key, value)?,
            "hsp_iters" => self.hsp_iters = parse(key, value)?,
            "hsp_tol" => self.hsp_tol = parse(key, value)?,
            "aggregator" => {
                self.aggregator = value
                    .trim()
                    .parse()
                    .map_err(|e| CliError::Config(format!("aggregator: {e}")))?
            }
            "top_q" => self.top_q = parse(key, value)?,
            "bench_runs" => self.bench_runs = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key = value", path.display(), n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {assignment:?}")))?;
        self.set(key.trim(), value)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(1..=64).contains(&self.k_max) {
            return bad(format!("k_max must lie in 1..=64, got {}", self.k_max));
        }
        for (key, v) in [
            ("variance_floor", self.variance_floor),
            ("bandwidth_floor", self.bandwidth_floor),
            ("gmm_tol", self.gmm_tol),
            ("hsp_tol", self.hsp_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{key} must be finite and > 0, got {v}"));
            }
        }
        for (key, v) in [
            ("gmm_max_iter", self.gmm_max_iter),
            ("min_cluster_size", self.min_cluster_size),
            ("budget", self.budget),
            ("hsp_iters", self.hsp_iters),
            ("bench_runs", self.bench_runs),
        ] {
            if v == 0 {
                return bad(format!("{key} must be at least 1"));
            }
        }
        if !(self.hsp_lambda.is_finite() && self.hsp_lambda >= 0.0) {
            return bad(format!("hsp_lambda must be finite and >= 0, got {}", self.hsp_lambda));
        }
        if !(self.hsp_mu > 0.0 && self.hsp_mu <= 1.0) {
            return bad(format!("hsp_mu must lie in (0, 1], got {}", self.hsp_mu));
        }
        if !(self.top_q > 0.0 && self.top_q <= 1.0) {
            return bad(format!("top_q must lie in (0, 1], got {}", self.top_q));
        }
        if !(1..=256).contains(&self.threads) {
            return bad(format!("threads must lie in 1..=256, got {}", self.threads));
        }
        for (key, t) in [
            ("positive_prompt_template", &self.positive_prompt_template),
            ("negative_prompt_template", &self.negative_prompt_template),
        ] {
            if t.is_empty() {
                return bad(format!("{key} must not be empty"));
            }
        }
        Ok(())
    }

    pub fn gmm(&self) -> GmmConfig {
        GmmConfig {
            k_max: self.k_max,
            max_iter: self.gmm_max_iter,
            tol: self.gmm_tol,
            variance_floor: self.variance_floor,
            min_cluster_size: self.min_cluster_size,
            ..GmmConfig::default()
        }
    }

    pub fn kde_sample(&self) -> KdeSampleConfig {
        KdeSampleConfig {
            gmm: self.gmm(),
            bandwidth_floor: self.bandwidth_floor,
        }
    }

    pub fn solver(&self) -> SolverSettings {
        SolverSettings {
            lambda: self.hsp_lambda,
            step_scale: self.hsp_mu,
            max_iter: self.hsp_iters,
            tol: self.hsp_tol,
        }
    }

    pub fn aggregator(&self) -> Aggregator {
        match self.aggregator {
            AggregatorKind::Max => Aggregator::Max,
            AggregatorKind::Topq => Aggregator::TopQ(self.top_q),
        }
    }

    pub fn prompt_templates(&self) -> PromptTemplates {
        PromptTemplates {
            positive: self.positive_prompt_template.clone(),
            negative: self.negative_prompt_template.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_table_matches_struct() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        let fields: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(fields.len(), KEYS.len());
        for (k, _) in KEYS {
            assert!(v.get(*k).is_some(), "{k} missing from RunConfig");
        }
    }

    #[test]
    fn every_key_accepts_its_default() {
        let d = RunConfig::default();
        let v = serde_json::to_value(&d).unwrap();
        let mut c = RunConfig::default();
        for (k, _) in KEYS {
            let text = match &v[*k] {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            c.set(k, &text).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_and_out_of_range() {
        let mut c = RunConfig::default();
        assert!(c.set("colour", "blue").is_err());
        c.set("top_q", "1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("hsp_lambda", "0").unwrap();
        c.validate().unwrap();
        assert!(c.set("budget", "-1").is_err());
    }
}
