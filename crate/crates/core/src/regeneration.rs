//! lambda-regeneration points and times, and the renewal speed estimator.

use serde::Serialize;

use crate::error::{LadderError, Result};
use crate::percolation::Vertex;
use crate::stats::{batch_sums, linear_fit, EstimateCI, LinearFit, Method};
use crate::walk::MarkVisits;

/// `floor(1/lambda)`, at least 1.
pub fn lambda_spacing(lambda: f64) -> Result<usize> {
    if !(lambda > 0.0) {
        return Err(LadderError::Parameter(format!("lambda = {lambda} must be positive")));
    }
    Ok(((1.0 / lambda).floor() as usize).max(1))
}

/// Every `floor(1/lambda)`-th pre-regeneration point, indexed so that point
/// 0 is the first one with `x >= 0`.
pub fn lambda_prereg_points(prereg_xs: &[i64], lambda: f64) -> Result<Vec<i64>> {
    let step = lambda_spacing(lambda)?;
    let anchor = prereg_xs.partition_point(|&x| x < 0);
    Ok(prereg_xs
        .iter()
        .enumerate()
        .filter(|&(i, _)| (i as i64 - anchor as i64).rem_euclid(step as i64) == 0)
        .map(|(_, &x)| x)
        .collect())
}

/// Regeneration times `tau_k` and points `rho_k` of one path.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RegenRecord {
    pub lambda: f64,
    /// Confirmed `(tau_k, rho_k)`, `k = 1, 2, ...`.
    pub points: Vec<(u64, i64)>,
    /// The last candidate, which a finite path cannot confirm.
    pub censored: Option<(u64, i64)>,
}

impl RegenRecord {
    fn from_candidates(lambda: f64, mut cands: Vec<(u64, i64)>) -> Self {
        cands.sort_unstable();
        let censored = cands.pop();
        RegenRecord {
            lambda,
            points: cands,
            censored,
        }
    }

    /// Gap pairs `(tau_{k+1} - tau_k, rho_{k+1} - rho_k)` for `k >= 1`.
    pub fn gaps(&self) -> Vec<(u64, i64)> {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
            .collect()
    }

    /// CSV `tau_gap,rho_gap`.
    pub fn gaps_csv(&self) -> String {
        let mut s = String::from("tau_gap,rho_gap\n");
        for (t, r) in self.gaps() {
            s.push_str(&format!("{t},{r}\n"));
        }
        s
    }
}

/// Literal scan of a recorded path: first visits to lambda-points at `k > 0`,
/// kept when no later step sits on a lambda-point strictly left of `X_k`.
pub fn detect_regenerations(path: &[Vertex], lambda_points: &[i64], lambda: f64) -> RegenRecord {
    let is_point = |v: Vertex| v.y == 0 && lambda_points.binary_search(&v.x).is_ok();
    let n = path.len();
    // Smallest lambda-point x visited at times >= k.
    let mut suffix_min = vec![i64::MAX; n + 1];
    for k in (0..n).rev() {
        suffix_min[k] = suffix_min[k + 1];
        if is_point(path[k]) {
            suffix_min[k] = suffix_min[k].min(path[k].x);
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut cands = Vec::new();
    for (k, &v) in path.iter().enumerate() {
        let fresh = seen.insert(v);
        if k > 0 && fresh && is_point(v) && suffix_min[k] >= v.x {
            cands.push((k as u64, v.x));
        }
    }
    RegenRecord::from_candidates(lambda, cands)
}

/// The same detection from first/last visit times gathered online. `start`
/// is the lambda-point index occupied at time 0, if any.
pub fn regenerations_from_visits(visits: &MarkVisits, lambda: f64) -> RegenRecord {
    let mut cands = Vec::new();
    let mut latest_left: Option<u64> = None;
    for i in 0..visits.xs.len() {
        let (f, l) = (visits.first[i], visits.last[i]);
        if f != u64::MAX {
            if f > 0 && latest_left.is_none_or(|t| t < f) {
                cands.push((f, visits.xs[i]));
            }
            latest_left = Some(latest_left.map_or(l, |t| t.max(l)));
        }
    }
    RegenRecord::from_candidates(lambda, cands)
}

/// Default number of gaps per batch.
pub const DEFAULT_BATCH: usize = 4;

/// `sum rho-gaps / sum tau-gaps` over all records (first segment and the
/// censored tail excluded), with a standard error from batch sums that
/// keeps the lag-1 covariance between neighbouring batches.
pub fn speed_regen(records: &[RegenRecord], min_gaps: usize, batch: usize) -> Result<EstimateCI> {
    if records.is_empty() {
        return Err(LadderError::Insufficient("no regeneration records".into()));
    }
    let batch = batch.max(2);
    let short = records.iter().filter(|r| r.gaps().len() < min_gaps).count();
    if short > 0 {
        return Err(LadderError::Insufficient(format!(
            "{short} of {} trajectories have fewer than {min_gaps} regeneration gaps",
            records.len()
        )));
    }
    let mut per_traj: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let (mut sum_rho, mut sum_tau) = (0.0, 0.0);
    for r in records {
        let g = r.gaps();
        let tau: Vec<f64> = g.iter().map(|&(t, _)| t as f64).collect();
        let rho: Vec<f64> = g.iter().map(|&(_, x)| x as f64).collect();
        sum_rho += rho.iter().sum::<f64>();
        sum_tau += tau.iter().sum::<f64>();
        per_traj.push((batch_sums(&rho, batch), batch_sums(&tau, batch)));
    }
    if sum_tau == 0.0 {
        return Err(LadderError::Insufficient("no regeneration gaps".into()));
    }
    let v = sum_rho / sum_tau;
    let mut var = 0.0;
    let mut nb = 0usize;
    let mut tau_batched = 0.0;
    for (rb, tb) in &per_traj {
        let e: Vec<f64> = rb.iter().zip(tb).map(|(r, t)| r - v * t).collect();
        var += e.iter().map(|x| x * x).sum::<f64>();
        var += 2.0 * e.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        nb += e.len();
        tau_batched += tb.iter().sum::<f64>();
    }
    if nb < 2 {
        return Err(LadderError::Insufficient("fewer than two batches".into()));
    }
    let var = var.max(0.0) * nb as f64 / (nb - 1) as f64;
    Ok(EstimateCI::new(v, var.sqrt() / tau_batched, nb as f64, Method::Regen))
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub lambda: f64,
    pub n_gaps: usize,
    /// Fit of `log P(rho-gap >= n)` against `n`.
    pub fit: LinearFit,
    /// `-slope/lambda`.
    pub c: f64,
    pub lag1_corr: f64,
    pub lag2_corr: f64,
    /// Null standard error of `lag2_corr` under 1-dependence.
    pub corr_se: f64,
    pub min_gap: i64,
}

/// Log-linear tail fit of rho-gaps and lag-1/lag-2 dependence of gaps,
/// computed within records and pooled.
pub fn regen_tail_diagnostic(records: &[RegenRecord]) -> Result<TailReport> {
    let lambda = records.first().map_or(f64::NAN, |r| r.lambda);
    let gaps: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.gaps().iter().map(|&(_, x)| x as f64).collect())
        .collect();
    let all: Vec<f64> = gaps.iter().flatten().copied().collect();
    tail_fit_and_lags(lambda, &all, &gaps)
}

/// Tail fit on a gap sample, with lag correlations over the given runs.
pub fn tail_fit_and_lags(lambda: f64, all: &[f64], runs: &[Vec<f64>]) -> Result<TailReport> {
    let n = all.len();
    if n < 50 {
        return Err(LadderError::Insufficient(format!("{n} gaps")));
    }
    let mut sorted = all.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Empirical survival at a grid between the median and the 1% tail.
    let lo = sorted[n / 2];
    let hi = sorted[n - n / 100 - 1];
    let steps = 20;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| (lo + (hi - lo) * k as f64 / steps as f64).round())
        .collect();
    grid.dedup();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for t in grid {
        let count = n - sorted.partition_point(|&g| g < t);
        if count >= 5 {
            xs.push(t);
            ys.push((count as f64 / n as f64).ln());
            ws.push(count as f64);
        }
    }
    let fit = linear_fit(&xs, &ys, Some(&ws)).or_else(|_| linear_fit(&xs, &ys, None))?;
    // Runs are independent copies of one stationary gap sequence, so
    // autocovariances are centred at the pooled moments.
    let mean = crate::stats::mean(all);
    let var = crate::stats::variance(all);
    // Only the first `k_max` gaps of each run: gaps near the end of a run
    // are selected by having finished in time.
    let k_max = runs.iter().map(Vec::len).min().unwrap_or(0);
    let lag = |k: usize| {
        let (mut s, mut m) = (0.0, 0usize);
        for r in runs {
            for i in 0..k_max.saturating_sub(k) {
                s += (r[i] - mean) * (r[i + k] - mean);
                m += 1;
            }
        }
        (s / m.max(1) as f64 / var, m)
    };
    let (lag1_corr, _) = lag(1);
    let (lag2_corr, m2) = lag(2);
    Ok(TailReport {
        lambda,
        n_gaps: n,
        c: -fit.slope / lambda,
        fit,
        lag1_corr,
        lag2_corr,
        corr_se: ((1.0 + 2.0 * lag1_corr * lag1_corr) / m2.max(1) as f64).sqrt(),
        min_gap: sorted[0] as i64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: i64, y: u8) -> Vertex {
        Vertex::new(x, y)
    }

    #[test]
    fn spacing_and_anchor() {
        let pre = vec![-7, -3, 1, 4, 9, 12, 20];
        assert_eq!(lambda_prereg_points(&pre, 1.0).unwrap(), pre);
        assert_eq!(lambda_prereg_points(&pre, 0.5).unwrap(), vec![-7, 1, 9, 20]);
        assert_eq!(lambda_prereg_points(&pre, 0.3).unwrap(), vec![1, 12]);
        assert!(lambda_prereg_points(&pre, 0.0).is_err());
    }

    #[test]
    fn monotone_path_regenerates_everywhere() {
        let pts = vec![2, 4, 6, 8];
        let path: Vec<Vertex> = (0..10).map(|x| v(x, 0)).collect();
        let r = detect_regenerations(&path, &pts, 0.5);
        assert_eq!(r.points, vec![(2, 2), (4, 4), (6, 6)]);
        assert_eq!(r.censored, Some((8, 8)));
        for &(t, x) in &r.points {
            assert_eq!(path[t as usize].x, x);
        }
    }

    #[test]
    fn backtracking_rejects_candidate() {
        // 20 steps: reach 4, return to 2, then run to 9.
        let xs = [0, 1, 2, 3, 4, 5, 4, 3, 2, 3, 4, 5, 6, 6, 7, 8, 8, 9, 9, 9, 9];
        let path: Vec<Vertex> = xs.iter().map(|&x| v(x, 0)).collect();
        let pts = vec![2, 4, 6, 8];
        let r = detect_regenerations(&path, &pts, 0.5);
        // First visit to 4 at k=4 is followed by a visit to 2 at k=8: rejected.
        // Returning to 2 itself does not cancel the candidate at 2.
        assert_eq!(r.points, vec![(2, 2), (12, 6)]);
        assert_eq!(r.censored, Some((15, 8)));
        let visits = MarkVisits {
            xs: pts.clone(),
            first: vec![2, 4, 12, 15],
            last: vec![8, 10, 13, 16],
        };
        assert_eq!(regenerations_from_visits(&visits, 0.5), r);
    }

    #[test]
    fn deterministic_gaps() {
        let rec = RegenRecord {
            lambda: 0.5,
            points: (1..=40).map(|k| (10 * k as u64, 3 * k as i64)).collect(),
            censored: Some((999, 999)),
        };
        let e = speed_regen(&[rec.clone(), rec.clone()], 30, 4).unwrap();
        assert!((e.value - 0.3).abs() < 1e-15 && e.se < 1e-12);
        let mut truncated = rec.clone();
        truncated.censored = None;
        assert_eq!(
            speed_regen(&[truncated.clone(), truncated], 30, 4).unwrap().value,
            e.value
        );
        assert!(speed_regen(&[rec], 50, 4).is_err());
    }

    #[test]
    fn synthetic_exponential_tail() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(51, 0);
        let rate = 0.1 * 0.5;
        let runs: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                (0..500)
                    .map(|_| (-(1.0 - rng.random::<f64>()).ln() / rate).ceil())
                    .collect()
            })
            .collect();
        let all: Vec<f64> = runs.iter().flatten().copied().collect();
        let rep = tail_fit_and_lags(0.1, &all, &runs).unwrap();
        assert!((rep.fit.slope + rate).abs() < 0.1 * rate, "slope {}", rep.fit.slope);
        assert!(rep.lag2_corr.abs() < 3.0 * rep.corr_se);
    }
}
