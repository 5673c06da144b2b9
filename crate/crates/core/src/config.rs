//! Experiment configuration in a flat `key = value` text format.
//!
//! Blank lines and text after `#` are ignored. Lists are comma separated.
//! Unknown keys are errors.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{LadderError, Result};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "LADDER_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: f64,
    /// Bias grid, descending.
    pub lambdas: Vec<f64>,
    pub alpha: f64,
    /// Half-widths of sampled windows for `sample-env` and `hitting-check`.
    pub n1: i64,
    pub n2: i64,
    pub margin: i64,
    pub replicas: usize,
    /// Fixed walk length; `None` derives it from the bias.
    pub n_steps: Option<usize>,
    pub seed: u64,
    /// Worker count; 0 means all cores.
    pub threads: usize,
    pub out: PathBuf,
    /// Upper end of the small-bias regime for the hitting bounds.
    pub lambda0: f64,
    /// Cycles harvested to estimate kappa.
    pub kappa_cycles: usize,
    /// Half-width of the windows cycles are harvested from.
    pub cycle_half_width: i64,
    /// Environments averaged by the psi-moment estimator.
    pub psi_envs: usize,
    pub psi_half_width: i64,
    /// Length of the unbiased paths behind `Var(X_n)/n`.
    pub sigma_steps: usize,
    /// Long runs at bias `lambda` take `ceil(long_factor / lambda^2)` steps.
    pub long_factor: f64,
    /// Minimum regeneration gaps per long run.
    pub min_gaps: usize,
    /// Replicas of the weighted unbiased paths; `None` uses `replicas`.
    pub girsanov_replicas: Option<usize>,
    /// Environments for `sample-env` and `hitting-check`.
    pub envs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p: 0.7,
            lambdas: vec![0.4, 0.2, 0.1, 0.05],
            alpha: 1.0,
            n1: 200,
            n2: 200,
            margin: crate::percolation::DEFAULT_MARGIN,
            replicas: 200,
            n_steps: None,
            seed: 20240601,
            threads: 0,
            out: PathBuf::from("out"),
            lambda0: crate::electrical::DEFAULT_LAMBDA0,
            kappa_cycles: 100_000,
            cycle_half_width: 2000,
            psi_envs: 1000,
            psi_half_width: 600,
            sigma_steps: 100_000,
            long_factor: 12_400.0,
            min_gaps: 30,
            girsanov_replicas: None,
            envs: 100,
        }
    }
}

const KEYS: &[&str] = &[
    "p",
    "lambdas",
    "alpha",
    "n1",
    "n2",
    "margin",
    "replicas",
    "n_steps",
    "seed",
    "threads",
    "out",
    "lambda0",
    "kappa_cycles",
    "cycle_half_width",
    "psi_envs",
    "psi_half_width",
    "sigma_steps",
    "long_factor",
    "min_gaps",
    "girsanov_replicas",
    "envs",
];

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| LadderError::Parse {
        line,
        msg: format!("{key}: cannot parse {v:?}"),
    })
}

fn parse_opt<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(line, key, v).map(Some)
    }
}

impl ExperimentConfig {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| LadderError::Parse {
                line,
                msg: format!("expected `key = value`, got {body:?}"),
            })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key from its text form; `line` is used in error messages.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "p" => self.p = parse_num(line, key, v)?,
            "lambdas" => {
                self.lambdas = v
                    .split(',')
                    .map(|s| parse_num(line, key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = parse_num(line, key, v)?,
            "n1" => self.n1 = parse_num(line, key, v)?,
            "n2" => self.n2 = parse_num(line, key, v)?,
            "margin" => self.margin = parse_num(line, key, v)?,
            "replicas" => self.replicas = parse_num(line, key, v)?,
            "n_steps" => self.n_steps = parse_opt(line, key, v)?,
            "seed" => self.seed = parse_num(line, key, v)?,
            "threads" => self.threads = parse_num(line, key, v)?,
            "out" => self.out = PathBuf::from(v),
            "lambda0" => self.lambda0 = parse_num(line, key, v)?,
            "kappa_cycles" => self.kappa_cycles = parse_num(line, key, v)?,
            "cycle_half_width" => self.cycle_half_width = parse_num(line, key, v)?,
            "psi_envs" => self.psi_envs = parse_num(line, key, v)?,
            "psi_half_width" => self.psi_half_width = parse_num(line, key, v)?,
            "sigma_steps" => self.sigma_steps = parse_num(line, key, v)?,
            "long_factor" => self.long_factor = parse_num(line, key, v)?,
            "min_gaps" => self.min_gaps = parse_num(line, key, v)?,
            "girsanov_replicas" => self.girsanov_replicas = parse_opt(line, key, v)?,
            "envs" => self.envs = parse_num(line, key, v)?,
            _ => {
                return Err(LadderError::Parse {
                    line,
                    msg: format!("unknown key {key:?} (known: {})", KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LadderError::Parameter(m));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p = {} must lie in (0, 1)", self.p));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad(format!("lambdas {:?} must be finite and >= 0", self.lambdas));
        }
        if self.replicas < 1 {
            return bad("replicas must be >= 1".into());
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if self.n1 < 1 || self.n2 < 1 || self.margin < 0 {
            return bad("n1, n2 must be >= 1 and margin >= 0".into());
        }
        Ok(())
    }

    /// Text form that [`ExperimentConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let opt = |o: Option<usize>| o.map_or("auto".to_string(), |v| v.to_string());
        let mut s = String::new();
        let lambdas: Vec<String> = self.lambdas.iter().map(|l| format!("{l:?}")).collect();
        let _ = writeln!(s, "p = {:?}", self.p);
        let _ = writeln!(s, "lambdas = {}", lambdas.join(", "));
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        let _ = writeln!(s, "n1 = {}", self.n1);
        let _ = writeln!(s, "n2 = {}", self.n2);
        let _ = writeln!(s, "margin = {}", self.margin);
        let _ = writeln!(s, "replicas = {}", self.replicas);
        let _ = writeln!(s, "n_steps = {}", opt(self.n_steps));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "lambda0 = {:?}", self.lambda0);
        let _ = writeln!(s, "kappa_cycles = {}", self.kappa_cycles);
        let _ = writeln!(s, "cycle_half_width = {}", self.cycle_half_width);
        let _ = writeln!(s, "psi_envs = {}", self.psi_envs);
        let _ = writeln!(s, "psi_half_width = {}", self.psi_half_width);
        let _ = writeln!(s, "sigma_steps = {}", self.sigma_steps);
        let _ = writeln!(s, "long_factor = {:?}", self.long_factor);
        let _ = writeln!(s, "min_gaps = {}", self.min_gaps);
        let _ = writeln!(s, "girsanov_replicas = {}", opt(self.girsanov_replicas));
        let _ = writeln!(s, "envs = {}", self.envs);
        s
    }

    /// Worker count after the environment override; 0 means all cores.
    pub fn effective_threads(&self) -> usize {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(self.threads)
    }

    pub fn girsanov_replicas(&self) -> usize {
        self.girsanov_replicas.unwrap_or(self.replicas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.lambdas = vec![0.3, 0.1 + 0.2];
        cfg.n_steps = Some(1234);
        cfg.out = PathBuf::from("/tmp/x y");
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = ExperimentConfig::parse("# header\n\np = 0.5  # trailing\nlambdas = 0.2,0.1\n").unwrap();
        assert_eq!(cfg.p, 0.5);
        assert_eq!(cfg.lambdas, vec![0.2, 0.1]);
        match ExperimentConfig::parse("p = 0.5\nreplicas = many\n") {
            Err(LadderError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("\n\nbogus = 1") {
            Err(LadderError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("oops"),
            Err(LadderError::Parse { line: 1, .. })
        ));
        assert!(ExperimentConfig::parse("p = 1.5").is_err());
    }
}
