//! End-to-end experiments and their JSON / CSV artifacts.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::corrector::KappaEstimate;
use crate::error::{LadderError, Result};
use crate::estimators::{
    einstein_verdict, second_order_check, sigma_path_variance, speed_direct, speed_girsanov, LambdaRow,
    PathVarianceEstimate, SigmaMatrix, SigmaSummary, Verdict,
};
use crate::experiment::{kappa_experiment, run_walks, sigma_matrix_experiment, ReplicaOutput, WalkJob};
use crate::regeneration::{regen_tail_diagnostic, speed_regen, RegenRecord, TailReport, DEFAULT_BATCH};
use crate::rng::{phase_seed, GENERATOR_NAME};
use crate::stats::EstimateCI;

pub const SCHEMA_VERSION: u32 = 1;

/// Where a number came from. Worker count and output location are left out
/// on purpose so reruns compare byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    pub generator: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(version: &str, seed: u64) -> Self {
        Provenance {
            tool_version: version.to_string(),
            generator: GENERATOR_NAME.to_string(),
            seed,
        }
    }

    /// `# key: value` lines for CSV headers.
    pub fn csv_header(&self, cfg: &ExperimentConfig) -> String {
        let mut s = format!(
            "# schema_version: {SCHEMA_VERSION}\n# tool_version: {}\n# generator: {}\n# seed: {}\n",
            self.tool_version, self.generator, self.seed
        );
        for line in deterministic_config_text(cfg).lines() {
            let _ = writeln!(s, "# config: {line}");
        }
        s
    }
}

/// The config text without the worker count and output directory.
pub fn deterministic_config_text(cfg: &ExperimentConfig) -> String {
    cfg.to_text()
        .lines()
        .filter(|l| !l.starts_with("threads ") && !l.starts_with("out "))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[derive(Serialize)]
struct ConfigView<'a> {
    p: f64,
    lambdas: &'a [f64],
    alpha: f64,
    n1: i64,
    n2: i64,
    margin: i64,
    replicas: usize,
    n_steps: Option<usize>,
    seed: u64,
    lambda0: f64,
    kappa_cycles: usize,
    cycle_half_width: i64,
    psi_envs: usize,
    psi_half_width: i64,
    sigma_steps: usize,
    long_factor: f64,
    min_gaps: usize,
    girsanov_replicas: usize,
    envs: usize,
}

fn config_view(c: &ExperimentConfig) -> ConfigView<'_> {
    ConfigView {
        p: c.p,
        lambdas: &c.lambdas,
        alpha: c.alpha,
        n1: c.n1,
        n2: c.n2,
        margin: c.margin,
        replicas: c.replicas,
        n_steps: c.n_steps,
        seed: c.seed,
        lambda0: c.lambda0,
        kappa_cycles: c.kappa_cycles,
        cycle_half_width: c.cycle_half_width,
        psi_envs: c.psi_envs,
        psi_half_width: c.psi_half_width,
        sigma_steps: c.sigma_steps,
        long_factor: c.long_factor,
        min_gaps: c.min_gaps,
        girsanov_replicas: c.girsanov_replicas(),
        envs: c.envs,
    }
}

/// JSON document with the common envelope.
pub fn to_json<T: Serialize>(kind: &str, cfg: &ExperimentConfig, prov: &Provenance, body: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Envelope<'a, T: Serialize> {
        schema_version: u32,
        kind: &'a str,
        provenance: &'a Provenance,
        config: ConfigView<'a>,
        #[serde(flatten)]
        body: &'a T,
    }
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        provenance: prov,
        config: config_view(cfg),
        body,
    };
    serde_json::to_string_pretty(&env).map_err(|e| LadderError::Io(e.to_string()))
}

/// Flat `lambda,estimator,value,se` rows.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    rows: Vec<(f64, String, f64, f64)>,
}

impl CsvTable {
    pub fn push(&mut self, lambda: f64, estimator: &str, e: &EstimateCI) {
        self.rows.push((lambda, estimator.to_string(), e.value, e.se));
    }

    pub fn render(&self, header: &str) -> String {
        let mut s = String::from(header);
        s.push_str("lambda,estimator,value,se\n");
        for (l, name, v, se) in &self.rows {
            let _ = writeln!(s, "{l:?},{name},{v:?},{se:?}");
        }
        s
    }
}

/// Long biased runs with regeneration tracking, and what they give.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedResult {
    pub lambda: f64,
    pub n_steps: usize,
    pub direct: EstimateCI,
    pub regen: Option<EstimateCI>,
    pub regen_note: Option<String>,
    pub min_gaps_seen: usize,
    pub tail: Option<TailReport>,
    pub retries: usize,
    #[serde(skip)]
    pub records: Vec<RegenRecord>,
}

/// Steps of a long run at bias `lambda`.
pub fn long_steps(cfg: &ExperimentConfig, lambda: f64) -> usize {
    cfg.n_steps
        .unwrap_or_else(|| (cfg.long_factor / (lambda * lambda)).ceil() as usize)
}

/// Steps of the unbiased weighted runs for bias `lambda`: `ceil(alpha/lambda^2)`.
pub fn girsanov_steps(alpha: f64, lambda: f64) -> usize {
    (alpha / (lambda * lambda)).ceil() as usize
}

pub fn run_speed(cfg: &ExperimentConfig, lambda: f64) -> Result<SpeedResult> {
    if !(lambda > 0.0) {
        return Err(LadderError::Parameter(format!(
            "speed runs need lambda > 0, got {lambda}"
        )));
    }
    let n = long_steps(cfg, lambda);
    let mut job = WalkJob::new(
        cfg.p,
        lambda,
        lambda,
        n,
        cfg.replicas,
        phase_seed(cfg.seed, &format!("long-{lambda:?}")),
    );
    job.regenerations = true;
    let out = run_walks(&job)?;
    let trajs: Vec<_> = out.iter().map(|o| o.trajectory.clone()).collect();
    let records: Vec<RegenRecord> = out.iter().filter_map(|o| o.regen.clone()).collect();
    let direct = speed_direct(&trajs)?;
    let (regen, regen_note) = match speed_regen(&records, cfg.min_gaps, DEFAULT_BATCH) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(SpeedResult {
        lambda,
        n_steps: n,
        direct,
        regen,
        regen_note,
        min_gaps_seen: records.iter().map(|r| r.gaps().len()).min().unwrap_or(0),
        tail: regen_tail_diagnostic(&records).ok(),
        retries: out.iter().map(|o| o.retries).sum(),
        records,
    })
}

/// Weighted unbiased runs for bias `lambda`.
pub fn run_girsanov(cfg: &ExperimentConfig, lambda: f64) -> Result<Vec<ReplicaOutput>> {
    let n = girsanov_steps(cfg.alpha, lambda);
    let job = WalkJob::new(
        cfg.p,
        0.0,
        lambda,
        n,
        cfg.girsanov_replicas(),
        phase_seed(cfg.seed, &format!("girsanov-{lambda:?}")),
    );
    run_walks(&job)
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaResult {
    pub kappa: KappaEstimate,
    pub path_variance: PathVarianceEstimate,
    pub zero_bias_speed: EstimateCI,
    pub psi: SigmaMatrix,
    pub cauchy_schwarz: bool,
}

/// Checkpoints at powers of ten below `n`.
fn decade_checkpoints(n: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut k = 1000;
    while k < n {
        v.push(k);
        k *= 10;
    }
    v
}

pub fn run_kappa(cfg: &ExperimentConfig) -> Result<KappaEstimate> {
    Ok(kappa_experiment(
        cfg.p,
        cfg.cycle_half_width,
        cfg.margin,
        cfg.kappa_cycles,
        phase_seed(cfg.seed, "kappa"),
    )?
    .0)
}

pub fn run_sigma(cfg: &ExperimentConfig) -> Result<SigmaResult> {
    let kappa = run_kappa(cfg)?;
    let psi = sigma_matrix_experiment(
        cfg.p,
        cfg.psi_half_width,
        cfg.margin,
        cfg.psi_envs,
        kappa,
        phase_seed(cfg.seed, "psi"),
    )?;
    let mut job = WalkJob::new(
        cfg.p,
        0.0,
        0.0,
        cfg.sigma_steps,
        cfg.replicas,
        phase_seed(cfg.seed, "sigma"),
    );
    job.checkpoints = decade_checkpoints(cfg.sigma_steps);
    let trajs: Vec<_> = run_walks(&job)?.into_iter().map(|o| o.trajectory).collect();
    Ok(SigmaResult {
        kappa,
        path_variance: sigma_path_variance(&trajs)?,
        zero_bias_speed: speed_direct(&trajs)?,
        cauchy_schwarz: psi.cauchy_schwarz_holds(),
        psi,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EinsteinReport {
    pub per_lambda: Vec<LambdaRow>,
    pub sigma: SigmaResult,
    pub tails: Vec<(f64, Option<TailReport>)>,
    pub verdict: Verdict,
}

pub fn run_einstein(cfg: &ExperimentConfig) -> Result<EinsteinReport> {
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(LadderError::Parameter("the bias grid must be positive".into()));
    }
    let sigma = run_sigma(cfg)?;
    let mut rows = Vec::new();
    let mut tails = Vec::new();
    for &lambda in &lambdas {
        let sp = run_speed(cfg, lambda)?;
        let regen = match (&sp.regen, &sp.regen_note) {
            (Some(e), _) => Ok(*e),
            (None, note) => Err(LadderError::Insufficient(note.clone().unwrap_or_default())),
        };
        let mut row = LambdaRow::new(lambda, sp.n_steps, sp.direct, regen);
        row.retries = sp.retries;
        let weighted = run_girsanov(cfg, lambda)?;
        let trajs: Vec<_> = weighted.into_iter().map(|o| o.trajectory).collect();
        let n = girsanov_steps(cfg.alpha, lambda);
        row.girsanov = speed_girsanov(&trajs, lambda, n).ok();
        let a_n: Vec<f64> = trajs.iter().map(|t| t.a).collect();
        row.second_order = Some(second_order_check(&a_n, lambda, n, &sigma.psi.s22)?);
        rows.push(row);
        tails.push((lambda, sp.tail));
    }
    let summary = SigmaSummary {
        path_variance: sigma.path_variance.clone(),
        psi: Some(sigma.psi),
    };
    let verdict = einstein_verdict(&rows, &summary)?;
    Ok(EinsteinReport {
        per_lambda: rows,
        sigma,
        tails,
        verdict,
    })
}

impl EinsteinReport {
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::default();
        for r in &self.per_lambda {
            t.push(r.lambda, "direct", &r.direct);
            if let Some(e) = &r.regen {
                t.push(r.lambda, "regen", e);
            }
            t.push(r.lambda, "ratio", &r.ratio);
            if let Some(e) = &r.ratio_regen {
                t.push(r.lambda, "ratio-regen", e);
            }
            if let Some(g) = &r.girsanov {
                t.push(r.lambda, "girsanov", &g.estimate);
            }
            if let Some(c) = &r.second_order {
                t.push(r.lambda, "lambda2-an", &c.lambda2_an);
                t.push(r.lambda, "half-alpha-s22", &c.target);
            }
        }
        self.sigma.push_csv(&mut t);
        t
    }
}

impl SigmaResult {
    pub fn push_csv(&self, t: &mut CsvTable) {
        t.push(0.0, "path-variance", &self.path_variance.sigma2);
        for (k, e) in &self.path_variance.checkpoints {
            t.push(0.0, &format!("path-variance-n{k}"), e);
        }
        t.push(0.0, "zero-bias-speed", &self.zero_bias_speed);
        t.push(0.0, "s11", &self.psi.s11);
        t.push(0.0, "s12", &self.psi.s12);
        t.push(0.0, "s22", &self.psi.s22);
        t.push(0.0, "kappa", &self.kappa.as_estimate());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_worker_independent() {
        let mut a = ExperimentConfig::default();
        let mut b = a.clone();
        a.threads = 1;
        b.threads = 7;
        b.out = "elsewhere".into();
        let p = Provenance::new("v0", a.seed);
        assert_eq!(p.csv_header(&a), p.csv_header(&b));
        assert!(p.csv_header(&a).contains("# config: p = 0.7"));
    }

    #[test]
    fn envelope_fields() {
        let cfg = ExperimentConfig::default();
        let json = to_json("test", &cfg, &Provenance::new("v0", 1), &serde_json::json!({"x": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["x"], 1);
        assert!(v["config"]["threads"].is_null());
        assert_eq!(v["provenance"]["generator"], GENERATOR_NAME);
    }

    #[test]
    fn step_counts() {
        assert_eq!(girsanov_steps(1.0, 0.1), 100);
        let cfg = ExperimentConfig::default();
        assert_eq!(long_steps(&cfg, 0.1), 1_240_000);
    }
}
