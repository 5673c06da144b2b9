//! Replica orchestration: environment draws under `P_p`, walk batches,
//! cycle pools and per-environment potential sums.
//!
//! Replica `r` of a job always reads stream `r` of the job's seed, and
//! results are collected in replica order, so the output does not depend on
//! the number of workers.

use rayon::prelude::*;
use serde::Serialize;

use crate::corrector::{build_potentials, estimate_kappa, KappaEstimate};
use crate::error::{LadderError, Result};
use crate::estimators::{psi_moment_terms, sigma_psi_moments, SigmaMatrix};
use crate::percolation::{
    crossing_cluster, find_preregeneration_points, harvest_cycles, ConditionedSampler, Cycle, Vertex, WindowConfig,
};
use crate::regeneration::{lambda_prereg_points, regenerations_from_visits, RegenRecord};
use crate::rng::{phase_seed, stream_rng, StreamRng};
use crate::walk::{simulate, SimOptions, StepTable, Trajectory, WalkEnv};

/// Draws allowed before giving up on putting the origin on the cluster.
pub const MAX_ORIGIN_TRIES: usize = 10_000;

/// Run `f` on a pool of `threads` workers (0 = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LadderError::Parameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// One draw from `P_p` on `[-n1, n2]`: conditioned windows are redrawn until
/// the origin lies on the crossing cluster.
pub fn sample_pp_env(sampler: &ConditionedSampler, rng: &mut StreamRng) -> Result<WindowConfig> {
    for _ in 0..MAX_ORIGIN_TRIES {
        let w = sampler.sample(rng);
        if w.contains_x(0) && crossing_cluster(&w)[w.index(Vertex::ORIGIN)] {
            return Ok(w);
        }
    }
    Err(LadderError::Insufficient(format!(
        "origin missed the crossing cluster in {MAX_ORIGIN_TRIES} draws"
    )))
}

/// A batch of independent walks, each in its own environment.
#[derive(Debug, Clone)]
pub struct WalkJob {
    pub p: f64,
    pub lambda: f64,
    /// Bias the Girsanov weights are computed for.
    pub weight_lambda: f64,
    pub n_steps: usize,
    pub replicas: usize,
    pub seed: u64,
    pub n1: i64,
    pub n2: i64,
    pub checkpoints: Vec<usize>,
    /// Track lambda-regeneration points (needs `lambda > 0`).
    pub regenerations: bool,
    /// Window doublings allowed after a boundary exit.
    pub max_retries: usize,
}

impl WalkJob {
    /// Windows sized for `n` steps at bias `lambda`.
    pub fn windows_for(lambda: f64, n: usize) -> (i64, i64) {
        let spread = 6.0 * (n as f64).sqrt();
        if lambda == 0.0 {
            let h = spread.ceil() as i64 + 50;
            (h, h)
        } else {
            let back = spread.min(60.0 / lambda).ceil() as i64 + 200;
            let ahead = (0.6 * lambda * n as f64 + spread).ceil() as i64 + 200;
            (back, ahead)
        }
    }

    pub fn new(p: f64, lambda: f64, weight_lambda: f64, n_steps: usize, replicas: usize, seed: u64) -> Self {
        let (n1, n2) = Self::windows_for(lambda, n_steps);
        WalkJob {
            p,
            lambda,
            weight_lambda,
            n_steps,
            replicas,
            seed,
            n1,
            n2,
            checkpoints: Vec::new(),
            regenerations: false,
            max_retries: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicaOutput {
    pub trajectory: Trajectory,
    pub regen: Option<RegenRecord>,
    /// Window doublings this replica needed.
    pub retries: usize,
}

fn run_replica(job: &WalkJob, base: &ConditionedSampler, table: &StepTable, r: usize) -> Result<ReplicaOutput> {
    let mut last_err = None;
    for attempt in 0..=job.max_retries {
        let wider;
        let sampler = if attempt == 0 {
            base
        } else {
            wider = ConditionedSampler::new(job.p, job.n1 << attempt, job.n2 << attempt)?;
            &wider
        };
        let seed = if attempt == 0 {
            job.seed
        } else {
            phase_seed(job.seed, &format!("retry-{attempt}"))
        };
        let mut rng = stream_rng(seed, r as u64);
        let w = sample_pp_env(sampler, &mut rng)?;
        let mut env = WalkEnv::new(&w);
        if job.regenerations {
            let pts = lambda_prereg_points(&find_preregeneration_points(&w), job.lambda)?;
            env = env.with_marks(&pts);
        }
        let opts = SimOptions {
            record_path: false,
            checkpoints: job.checkpoints.clone(),
        };
        match simulate(&env, table, Vertex::ORIGIN, job.n_steps, r as u64, &opts, &mut rng) {
            Ok(trajectory) => {
                let regen = trajectory
                    .visits
                    .as_ref()
                    .map(|v| regenerations_from_visits(v, job.lambda));
                return Ok(ReplicaOutput {
                    trajectory: Trajectory {
                        visits: None,
                        ..trajectory
                    },
                    regen,
                    retries: attempt,
                });
            }
            Err(e @ LadderError::Boundary { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Run all replicas of `job` in parallel on the current pool.
pub fn run_walks(job: &WalkJob) -> Result<Vec<ReplicaOutput>> {
    let table = StepTable::new(job.lambda, job.weight_lambda);
    let base = ConditionedSampler::new(job.p, job.n1, job.n2)?;
    (0..job.replicas)
        .into_par_iter()
        .map(|r| run_replica(job, &base, &table, r))
        .collect()
}

/// Number of independent chunks a cycle harvest is split into.
const HARVEST_CHUNKS: usize = 64;

/// `count` cycles harvested in parallel from independent windows.
pub fn harvest_cycles_parallel(p: f64, half_width: i64, margin: i64, count: usize, seed: u64) -> Result<Vec<Cycle>> {
    let chunks: Vec<usize> = (0..HARVEST_CHUNKS)
        .map(|c| count / HARVEST_CHUNKS + usize::from(c < count % HARVEST_CHUNKS))
        .collect();
    let parts = chunks
        .par_iter()
        .enumerate()
        .map(|(c, &k)| {
            if k == 0 {
                return Ok(Vec::new());
            }
            harvest_cycles(p, half_width, margin, k, &mut stream_rng(seed, c as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// `kappa` from a fresh parallel cycle harvest.
pub fn kappa_experiment(
    p: f64,
    half_width: i64,
    margin: i64,
    count: usize,
    seed: u64,
) -> Result<(KappaEstimate, Vec<Cycle>)> {
    let cycles = harvest_cycles_parallel(p, half_width, margin, count, seed)?;
    Ok((estimate_kappa(&cycles)?, cycles))
}

/// Per-environment psi-moment sums over `envs` draws from `P_p`, with the
/// number of environments skipped because the origin's block was too close
/// to the window edge.
pub fn psi_terms_experiment(
    p: f64,
    half_width: i64,
    margin: i64,
    envs: usize,
    seed: u64,
) -> Result<(Vec<(f64, f64, f64)>, usize)> {
    let sampler = ConditionedSampler::new(p, half_width, half_width)?;
    let out = (0..envs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let w = sample_pp_env(&sampler, &mut rng)?;
            match build_potentials(&w, KappaEstimate::exact(1.0), margin) {
                Ok(t) => psi_moment_terms(&w, &t).map(Some),
                Err(LadderError::Precondition(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = out.iter().filter(|o| o.is_none()).count();
    Ok((out.into_iter().flatten().collect(), skipped))
}

/// `Sigma` from psi-moment sums and a kappa estimate.
pub fn sigma_matrix_experiment(
    p: f64,
    half_width: i64,
    margin: i64,
    envs: usize,
    kappa: KappaEstimate,
    seed: u64,
) -> Result<SigmaMatrix> {
    let (terms, skipped) = psi_terms_experiment(p, half_width, margin, envs, seed)?;
    sigma_psi_moments(&terms, kappa, skipped)
}
