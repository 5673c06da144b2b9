//! Exact-tolerance checks of the whole stack against the reference
//! computations in [`crate::oracles`]. Each check reports pass/fail with a
//! one-line detail; sizes are parameters so callers choose the budget.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::corrector::{build_potentials, harmonicity_residual, max_increments};
use crate::electrical::{
    effective_resistance, hitting_probability_bounds, hitting_probability_exact, ruin_probability_r, ResistorGraph,
};
use crate::experiment::{kappa_experiment, sample_pp_env};
use crate::oracles::{
    biased_distribution, dense_effective_resistance, enumerate_conditioned_distribution, finite_difference_log_kernel,
    girsanov_enumeration, ruin_by_linear_solve,
};
use crate::percolation::{sample_window_unconditioned, ConditionedSampler, Vertex, WindowConfig};
use crate::rng::{phase_seed, stream_rng, StreamRng};
use crate::stats::chi_square_test;
use crate::walk::{log_p_second_derivative_ratio, martingale_checks, nu, transition_row};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

fn interior(w: &WindowConfig) -> impl Iterator<Item = Vertex> + '_ {
    (w.x_min() + 1..w.x_max()).flat_map(|x| [Vertex::new(x, 0), Vertex::new(x, 1)])
}

/// Every transition row sums to one within `1e-12`.
pub fn check_kernel_rows(envs_per_p: usize, seed: u64) -> CheckOutcome {
    let name = "kernel-rows";
    let mut worst: f64 = 0.0;
    let mut rows = 0usize;
    for (k, &p) in [0.3, 0.5, 0.7].iter().enumerate() {
        let sampler = match ConditionedSampler::new(p, 15, 15) {
            Ok(s) => s,
            Err(e) => return CheckOutcome::failed(name, e),
        };
        let mut rng = stream_rng(phase_seed(seed, name), k as u64);
        for _ in 0..envs_per_p {
            let w = sampler.sample(&mut rng);
            for v in interior(&w) {
                for lambda in [0.0, 0.1, 0.5, 1.0] {
                    let row = match transition_row(&w, lambda, v) {
                        Ok(r) => r,
                        Err(e) => return CheckOutcome::failed(name, e),
                    };
                    if row.iter().any(|&(_, q)| !(q >= 0.0)) {
                        return CheckOutcome::new(name, false, format!("negative entry at {v:?}"));
                    }
                    worst = worst.max((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs());
                    rows += 1;
                }
            }
        }
    }
    CheckOutcome::new(
        name,
        worst <= 1e-12,
        format!("{rows} rows, max |sum - 1| = {worst:.2e}"),
    )
}

/// `nu` and `p''/p` against central differences, and the per-vertex
/// centering identities.
pub fn check_derivatives(samples: usize, seed: u64) -> CheckOutcome {
    let name = "derivatives";
    let mut rng = stream_rng(phase_seed(seed, name), 0);
    let samplers: Vec<ConditionedSampler> = [0.3, 0.5, 0.7]
        .iter()
        .map(|&p| ConditionedSampler::new(p, 10, 10).expect("valid window"))
        .collect();
    let (mut d1, mut d2, mut c1, mut c2): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut done = 0;
    while done < samples {
        let w = samplers[rng.random_range(0..3)].sample(&mut rng);
        for _ in 0..20.min(samples - done) {
            let v = Vertex::new(rng.random_range(w.x_min() + 1..w.x_max()), rng.random_range(0..2));
            let row = transition_row(&w, 0.0, v).expect("interior vertex");
            let t = row[rng.random_range(0..row.len())].0;
            let (f1, f2) = finite_difference_log_kernel(&w, v, t, 1e-4);
            d1 = d1.max((f1 - nu(&w, v, t).expect("neighbour")).abs());
            d2 = d2.max((f2 - log_p_second_derivative_ratio(&w, v, t).expect("neighbour")).abs());
            let (a, b) = martingale_checks(&w, &[v]).expect("interior vertex");
            c1 = c1.max(a);
            c2 = c2.max(b);
            done += 1;
        }
    }
    let passed = d1 <= 1e-6 && d2 <= 1e-6 && c1 <= 1e-10 && c2 <= 1e-10;
    CheckOutcome::new(
        name,
        passed,
        format!("{samples} pairs: |dnu| {d1:.1e}, |dp''/p| {d2:.1e}, |sum nu p0| {c1:.1e}, |sum p''| {c2:.1e}"),
    )
}

/// Transfer-matrix sampler against full enumeration on `[-3, 3]`.
pub fn check_sampler_exactness(draws: usize, seed: u64) -> CheckOutcome {
    let name = "sampler-exactness";
    let (p, n) = (0.5, 3);
    let dist = match enumerate_conditioned_distribution(p, n, n) {
        Ok(d) => d,
        Err(e) => return CheckOutcome::failed(name, e),
    };
    let sampler = ConditionedSampler::new(p, n, n).expect("valid window");
    let mut rng = stream_rng(phase_seed(seed, name), 0);
    let mut counts: HashMap<u64, f64> = HashMap::new();
    for _ in 0..draws {
        *counts.entry(sampler.sample(&mut rng).code()).or_insert(0.0) += 1.0;
    }
    let off_support: f64 = counts
        .iter()
        .filter(|(c, _)| dist.probability(**c) == 0.0)
        .map(|(_, k)| k)
        .sum();
    let observed: Vec<f64> = dist
        .support
        .iter()
        .map(|(c, _)| counts.get(c).copied().unwrap_or(0.0))
        .collect();
    let expected: Vec<f64> = dist.support.iter().map(|(_, q)| q * draws as f64).collect();
    let (stat, dof, pval) = match chi_square_test(&observed, &expected, 5.0) {
        Ok(r) => r,
        Err(e) => return CheckOutcome::failed(name, e),
    };
    let edges = 6 * n as u32 + 1;
    let mut worst_z: f64 = 0.0;
    for bit in 0..edges {
        let m = dist.edge_marginal(bit);
        let emp: f64 = counts
            .iter()
            .filter(|(c, _)| *c & (1 << bit) != 0)
            .map(|(_, k)| k)
            .sum::<f64>()
            / draws as f64;
        let se = (m * (1.0 - m) / draws as f64).sqrt();
        if se > 0.0 {
            worst_z = worst_z.max((emp - m).abs() / se);
        }
    }
    let passed = off_support == 0.0 && pval > 1e-3 && worst_z <= 3.0;
    CheckOutcome::new(
        name,
        passed,
        format!(
            "{draws} draws, {} configs: chi2 {stat:.1} on {dof} dof, p = {pval:.3}; worst marginal |z| = {worst_z:.2}",
            dist.support.len()
        ),
    )
}

/// Random pair of distinct vertices in one component, or `None`.
fn random_pair(g: &ResistorGraph, rng: &mut StreamRng) -> Option<(usize, usize, Vec<usize>)> {
    let a = rng.random_range(0..g.len());
    let comp: Vec<usize> = g
        .component(a)
        .iter()
        .enumerate()
        .filter(|(_, &c)| c)
        .map(|(i, _)| i)
        .collect();
    if comp.len() < 2 {
        return None;
    }
    let b = loop {
        let b = comp[rng.random_range(0..comp.len())];
        if b != a {
            break b;
        }
    };
    Some((a, b, comp))
}

/// Banded solver against the dense oracle, Rayleigh monotonicity and the
/// metric property on random blocks of length at most 10.
pub fn check_network(blocks: usize, seed: u64) -> CheckOutcome {
    let name = "network";
    let mut rng = stream_rng(phase_seed(seed, name), 0);
    let (mut dev, mut dev_tilted, mut rayleigh, mut metric): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut done = 0;
    while done < blocks {
        let len = rng.random_range(1..=10);
        let p = rng.random_range(0.3..0.95);
        let w = sample_window_unconditioned(p, 0, len, &mut rng).expect("valid window");
        let lambda = if done % 2 == 0 { 0.0 } else { rng.random_range(0.0..0.5) };
        let g = ResistorGraph::from_window(&w, 0, len, lambda, 0).expect("valid block");
        if g.edges().is_empty() {
            continue;
        }
        let Some((a, b, comp)) = random_pair(&g, &mut rng) else {
            continue;
        };
        let (va, vb) = (g.vertices()[a], g.vertices()[b]);
        let r = effective_resistance(&g, va, vb).expect("connected");
        let rd = dense_effective_resistance(&g, va, vb).expect("connected");
        if lambda == 0.0 {
            dev = dev.max((r - rd).abs());
        } else {
            dev_tilted = dev_tilted.max((r - rd).abs() / r);
        }
        metric = metric.max((r - effective_resistance(&g, vb, va).expect("connected")).abs() / r);
        for &c in &comp {
            if c == a || c == b {
                continue;
            }
            let vc = g.vertices()[c];
            let via = effective_resistance(&g, va, vc).unwrap() + effective_resistance(&g, vc, vb).unwrap();
            metric = metric.max((r - via) / r);
        }
        for k in 0..g.edges().len() {
            let cut = g.without_edge(k);
            if let Ok(r2) = effective_resistance(&cut, va, vb) {
                rayleigh = rayleigh.max((r - r2) / r);
            }
            let mut edges = g.edges().to_vec();
            edges[k].2 *= 2.0;
            let boosted = ResistorGraph::new(g.vertices().to_vec(), edges).expect("positive conductances");
            rayleigh = rayleigh.max((effective_resistance(&boosted, va, vb).unwrap() - r) / r);
        }
        done += 1;
    }
    let passed = dev <= 1e-10 && dev_tilted <= 1e-10 && rayleigh <= 1e-10 && metric <= 1e-10;
    CheckOutcome::new(
        name,
        passed,
        format!(
            "{blocks} blocks: |R - R_dense| {dev:.1e} (unit), {dev_tilted:.1e} (tilted, relative); relative Rayleigh slack {rayleigh:.1e}; relative metric slack {metric:.1e}"
        ),
    )
}

/// Harmonicity of `psi` and the increment bounds on `P_p` environments.
pub fn check_harmonicity(envs: usize, p: f64, seed: u64) -> CheckOutcome {
    let name = "harmonicity";
    let kappa = match kappa_experiment(p, 600, 10, 2000, phase_seed(seed, "harmonicity-kappa")) {
        Ok((k, _)) => k,
        Err(e) => return CheckOutcome::failed(name, e),
    };
    let sampler = ConditionedSampler::new(p, 300, 300).expect("valid window");
    let mut rng = stream_rng(phase_seed(seed, name), 0);
    let (mut res, mut dphi, mut dpsi): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut done = 0;
    let mut resampled = 0;
    while done < envs {
        let w = match sample_pp_env(&sampler, &mut rng) {
            Ok(w) => w,
            Err(e) => return CheckOutcome::failed(name, e),
        };
        let t = match build_potentials(&w, kappa, 10) {
            Ok(t) => t,
            Err(_) => {
                resampled += 1;
                continue;
            }
        };
        res = res.max(harmonicity_residual(&w, &t));
        let (a, b) = max_increments(&w, &t);
        dphi = dphi.max(a);
        dpsi = dpsi.max(b / kappa.kappa);
        done += 1;
    }
    let passed = res <= 1e-9 && dphi <= 1.0 + 1e-9 && dpsi <= 1.0 + 1e-9;
    CheckOutcome::new(
        name,
        passed,
        format!(
            "{envs} envs ({resampled} redrawn), kappa {:.4}: residual {res:.1e}, max |dphi| - 1 = {:.1e}, max |dpsi|/kappa - 1 = {:.1e}",
            kappa.kappa,
            dphi - 1.0,
            dpsi - 1.0
        ),
    )
}

/// Weighted unbiased path sums reproduce the biased law of `Y_n`.
pub fn check_girsanov_enumeration(envs: usize, max_n: usize, seed: u64) -> CheckOutcome {
    let name = "girsanov-enumeration";
    let sampler = ConditionedSampler::new(0.6, 10, 10).expect("valid window");
    let mut rng = stream_rng(phase_seed(seed, name), 0);
    let mut worst: f64 = 0.0;
    for _ in 0..envs {
        let w = match sample_pp_env(&sampler, &mut rng) {
            Ok(w) => w,
            Err(e) => return CheckOutcome::failed(name, e),
        };
        for lambda in [0.1, 0.3] {
            for n in 1..=max_n {
                let a = girsanov_enumeration(&w, lambda, Vertex::ORIGIN, n).expect("window holds the paths");
                let b = biased_distribution(&w, lambda, Vertex::ORIGIN, n).expect("window holds the paths");
                for (v, q) in &b {
                    worst = worst.max((a.get(v).copied().unwrap_or(0.0) - q).abs());
                }
                for (v, q) in &a {
                    if !b.contains_key(v) {
                        worst = worst.max(q.abs());
                    }
                }
            }
        }
    }
    CheckOutcome::new(
        name,
        worst <= 1e-12,
        format!("{envs} envs, n <= {max_n}, lambda in {{0.1, 0.3}}: max deviation {worst:.1e}"),
    )
}

/// One exact hitting probability with its bracket.
#[derive(Debug, Clone, Serialize)]
pub struct HittingRow {
    pub env: usize,
    pub lambda: f64,
    pub l: u32,
    /// `None` for `R = infinity`.
    pub r: Option<u32>,
    pub exact: f64,
    pub lower: f64,
    pub upper: f64,
    pub inside: bool,
}

/// Spacing multiple standing in for `R = infinity`.
pub const FAR_R: u32 = 20;

/// Environment with pre-regeneration points forced at `0`, `L s` and
/// `(L + R) s`, `s = floor(1/lambda)`, and the exact hitting probability.
pub fn hitting_case(p: f64, lambda: f64, l: u32, r: Option<u32>, rng: &mut StreamRng) -> crate::Result<f64> {
    let s = (1.0 / lambda).floor() as i64;
    let (u, v) = (0, l as i64 * s);
    let wx = v + r.unwrap_or(FAR_R) as i64 * s;
    let sampler = ConditionedSampler::with_window(p, u - 5, wx + 5)?
        .force_isolated_top(u)?
        .force_isolated_top(v)?
        .force_isolated_top(wx)?;
    let w = sampler.sample(rng);
    hitting_probability_exact(&w, lambda, u, v, wx)
}

/// The bracket table over `L, R in {1,2,3}` plus `(L, infinity)`.
pub fn hitting_table(envs: usize, p: f64, lambdas: &[f64], lambda0: f64, seed: u64) -> crate::Result<Vec<HittingRow>> {
    let mut rng = stream_rng(phase_seed(seed, "hitting"), 0);
    let mut rows = Vec::new();
    for env in 0..envs {
        for &lambda in lambdas {
            for l in 1..=3 {
                for r in [Some(1), Some(2), Some(3), None] {
                    let exact = hitting_case(p, lambda, l, r, &mut rng)?;
                    let (lower, upper) = hitting_probability_bounds(l, r, lambda, lambda0)?;
                    rows.push(HittingRow {
                        env,
                        lambda,
                        l,
                        r,
                        exact,
                        lower,
                        upper,
                        inside: lower <= exact && exact <= upper,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn check_hitting_brackets(envs: usize, seed: u64) -> CheckOutcome {
    let name = "hitting-brackets";
    match hitting_table(envs, 0.7, &[0.05, 0.1], crate::electrical::DEFAULT_LAMBDA0, seed) {
        Ok(rows) => {
            let bad = rows.iter().filter(|r| !r.inside).count();
            let worst_inf = rows
                .iter()
                .filter(|r| r.l == 1 && r.r.is_none())
                .map(|r| r.exact)
                .fold(0.0, f64::max);
            CheckOutcome::new(
                name,
                bad == 0 && worst_inf <= 0.4,
                format!(
                    "{} cases, {bad} outside; max P(T_u < inf) at L=1 is {worst_inf:.4} (R = {FAR_R} spacings)",
                    rows.len()
                ),
            )
        }
        Err(e) => CheckOutcome::failed(name, e),
    }
}

/// Closed-form `r_i` against a dense first-step solve.
pub fn check_ruin(max_m: u32) -> CheckOutcome {
    let name = "ruin";
    let mut worst: f64 = 0.0;
    let mut limit: f64 = 0.0;
    for m in 2..=max_m {
        for &lambda in &[1e-4, 0.1, 0.5] {
            for i in 1..=m {
                let a = ruin_probability_r(i, m, lambda);
                let b = ruin_by_linear_solve(i, m, lambda);
                match (a, b) {
                    (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                    (Err(e), _) | (_, Err(e)) => return CheckOutcome::failed(name, e),
                }
            }
        }
        let lim = (2 * m - 3) as f64 / (2 * m - 2) as f64;
        limit = limit.max((ruin_probability_r(m - 1, m, 1e-4).unwrap() - lim).abs());
    }
    CheckOutcome::new(
        name,
        worst <= 1e-10 && limit <= 1e-3,
        format!("m <= {max_m}: max |closed - solve| {worst:.1e}; |r_(m-1) - (2m-3)/(2m-2)| at 1e-4 <= {limit:.1e}"),
    )
}

/// Sizes for [`run_selftest`].
#[derive(Debug, Clone, Copy)]
pub struct SelftestSizes {
    pub kernel_envs_per_p: usize,
    pub derivative_samples: usize,
    pub sampler_draws: usize,
    pub network_blocks: usize,
    pub harmonic_envs: usize,
    pub girsanov_envs: usize,
    pub girsanov_max_n: usize,
    pub hitting_envs: usize,
    pub ruin_max_m: u32,
}

impl SelftestSizes {
    /// The full sizes.
    pub fn full() -> Self {
        SelftestSizes {
            kernel_envs_per_p: 1000,
            derivative_samples: 10_000,
            sampler_draws: 1_000_000,
            network_blocks: 1000,
            harmonic_envs: 100,
            girsanov_envs: 20,
            girsanov_max_n: 8,
            hitting_envs: 100,
            ruin_max_m: 20,
        }
    }

    /// A fast subset for unit tests.
    pub fn quick() -> Self {
        SelftestSizes {
            kernel_envs_per_p: 20,
            derivative_samples: 500,
            sampler_draws: 100_000,
            network_blocks: 100,
            harmonic_envs: 5,
            girsanov_envs: 2,
            girsanov_max_n: 5,
            hitting_envs: 3,
            ruin_max_m: 20,
        }
    }
}

pub fn run_selftest(seed: u64, sizes: SelftestSizes) -> Vec<CheckOutcome> {
    vec![
        check_kernel_rows(sizes.kernel_envs_per_p, seed),
        check_derivatives(sizes.derivative_samples, seed),
        check_sampler_exactness(sizes.sampler_draws, seed),
        check_network(sizes.network_blocks, seed),
        check_harmonicity(sizes.harmonic_envs, 0.7, seed),
        check_girsanov_enumeration(sizes.girsanov_envs, sizes.girsanov_max_n, seed),
        check_hitting_brackets(sizes.hitting_envs, seed),
        check_ruin(sizes.ruin_max_m),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_selftest_passes() {
        for c in run_selftest(7, SelftestSizes::quick()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn far_window_approximates_infinity() {
        let mut rng = stream_rng(8, 0);
        let a = hitting_case(0.7, 0.1, 1, Some(FAR_R), &mut rng).unwrap();
        assert!(a <= 0.4);
    }
}
