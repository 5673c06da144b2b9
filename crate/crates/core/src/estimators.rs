//! Speed and diffusivity estimators, the covariance matrix of the
//! martingale pair, and the Einstein-relation verdict.

use serde::Serialize;

use crate::corrector::{KappaEstimate, PotentialTable};
use crate::error::{LadderError, Result};
use crate::percolation::{Vertex, WindowConfig};
use crate::stats::{ks_test, linear_fit, mean, mean_se, normal_cdf, EstimateCI, Method};
use crate::walk::{nu, transition_row, Trajectory};

pub const MIN_DIRECT_REPLICAS: usize = 30;
pub const MIN_PATH_VARIANCE_REPLICAS: usize = 100;
/// Weight degeneracy threshold on the effective sample size.
pub const MIN_GIRSANOV_ESS: f64 = 10.0;
/// Admissible `lambda^2 n` for the Girsanov estimator.
pub const ALPHA_WINDOW: (f64, f64) = (0.25, 4.0);

/// Mean of `X_n/n` over independent replicas.
pub fn speed_direct(trajs: &[Trajectory]) -> Result<EstimateCI> {
    let xs: Vec<f64> = trajs.iter().map(|t| t.x as f64 / t.n_steps as f64).collect();
    speed_direct_from(&xs)
}

/// [`speed_direct`] on precomputed `X_n/n` values.
pub fn speed_direct_from(x_over_n: &[f64]) -> Result<EstimateCI> {
    if x_over_n.len() < MIN_DIRECT_REPLICAS {
        return Err(LadderError::Insufficient(format!(
            "{} replicas, need at least {MIN_DIRECT_REPLICAS}",
            x_over_n.len()
        )));
    }
    mean_se(x_over_n, Method::Direct)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GirsanovEstimate {
    /// `E_lambda[X_n]/(lambda n)`.
    pub estimate: EstimateCI,
    pub lambda: f64,
    pub n_steps: usize,
    pub alpha: f64,
    /// Kish effective sample size of the weights.
    pub ess: f64,
    pub degenerate: bool,
}

/// Importance-sampling estimate of `E_lambda[X_n]/(lambda n)` from unbiased
/// paths carrying weights for bias `lambda`.
pub fn speed_girsanov(trajs: &[Trajectory], lambda: f64, n: usize) -> Result<GirsanovEstimate> {
    for t in trajs {
        if t.lambda != 0.0 || t.weight_lambda != lambda || t.n_steps != n {
            return Err(LadderError::Precondition(format!(
                "trajectory {} was simulated at lambda {} with weights for {} over {} steps",
                t.stream, t.lambda, t.weight_lambda, t.n_steps
            )));
        }
    }
    let pairs: Vec<(f64, f64)> = trajs.iter().map(|t| (t.x as f64, t.log_weight)).collect();
    speed_girsanov_from(&pairs, lambda, n)
}

/// [`speed_girsanov`] on `(X_n, log weight)` pairs.
pub fn speed_girsanov_from(pairs: &[(f64, f64)], lambda: f64, n: usize) -> Result<GirsanovEstimate> {
    if !(lambda > 0.0) {
        return Err(LadderError::Parameter(format!("lambda = {lambda} must be positive")));
    }
    let alpha = lambda * lambda * n as f64;
    if alpha < ALPHA_WINDOW.0 || alpha > ALPHA_WINDOW.1 {
        return Err(LadderError::Parameter(format!(
            "lambda^2 n = {alpha} outside [{}, {}]",
            ALPHA_WINDOW.0, ALPHA_WINDOW.1
        )));
    }
    let scale = 1.0 / (lambda * n as f64);
    let w: Vec<f64> = pairs.iter().map(|&(_, lw)| lw.exp()).collect();
    let stat: Vec<f64> = pairs.iter().zip(&w).map(|(&(x, _), &wi)| x * wi * scale).collect();
    let estimate = mean_se(&stat, Method::Girsanov)?;
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let ess = sw * sw / sw2;
    Ok(GirsanovEstimate {
        estimate: EstimateCI {
            n_eff: ess.max(1.0),
            ..estimate
        },
        lambda,
        n_steps: n,
        alpha,
        ess,
        degenerate: ess < MIN_GIRSANOV_ESS,
    })
}

/// `Var(X)/n` over replicas, with a standard error from the fourth moment.
pub fn variance_over_n(xs: &[f64], n: usize) -> Result<EstimateCI> {
    let k = xs.len();
    if k < 2 {
        return Err(LadderError::Insufficient(format!("{k} replicas")));
    }
    let m = mean(xs);
    let c2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let s2 = c2.iter().sum::<f64>() / (k - 1) as f64;
    let m4 = c2.iter().map(|c| c * c).sum::<f64>() / k as f64;
    let var_s2 = (m4 - s2 * s2).max(0.0) / k as f64;
    Ok(EstimateCI::new(
        s2 / n as f64,
        var_s2.sqrt() / n as f64,
        k as f64,
        Method::PathVariance,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct PathVarianceEstimate {
    pub sigma2: EstimateCI,
    /// `(1/n) mean(max_k X_k^2)`.
    pub max_x2_over_n: EstimateCI,
    /// `Var(X_k)/k` at each checkpoint `k`.
    pub checkpoints: Vec<(usize, EstimateCI)>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

/// `sigma^2` as `Var(X_n)/n` over unbiased replicas.
pub fn sigma_path_variance(trajs: &[Trajectory]) -> Result<PathVarianceEstimate> {
    if trajs.len() < MIN_PATH_VARIANCE_REPLICAS {
        return Err(LadderError::Insufficient(format!(
            "{} replicas, need at least {MIN_PATH_VARIANCE_REPLICAS}",
            trajs.len()
        )));
    }
    let n = trajs[0].n_steps;
    if trajs.iter().any(|t| t.n_steps != n) {
        return Err(LadderError::Precondition("replicas have different lengths".into()));
    }
    let xs: Vec<f64> = trajs.iter().map(|t| t.x as f64).collect();
    let sigma2 = variance_over_n(&xs, n)?;
    let mx: Vec<f64> = trajs.iter().map(|t| t.max_x2 / n as f64).collect();
    let max_x2_over_n = mean_se(&mx, Method::Mean)?;
    let mut checkpoints = Vec::new();
    for (i, &(k, _)) in trajs[0].checkpoints.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let vals: Vec<f64> = trajs.iter().map(|t| t.checkpoints[i].1 as f64).collect();
        checkpoints.push((k, variance_over_n(&vals, k)?));
    }
    let scale = (sigma2.value * n as f64).sqrt();
    let z: Vec<f64> = xs.iter().map(|x| x / scale).collect();
    let (ks_statistic, ks_p_value) = ks_test(&z, normal_cdf);
    Ok(PathVarianceEstimate {
        sigma2,
        max_x2_over_n,
        checkpoints,
        ks_statistic,
        ks_p_value,
    })
}

/// Exact one-step sums at the origin of one environment, in units of `phi`:
/// `(sum p0 (phi(w)-phi(0))^2, sum p0 (phi(w)-phi(0)) nu, sum p0 nu^2)`.
pub fn psi_moment_terms(w: &WindowConfig, t: &PotentialTable) -> Result<(f64, f64, f64)> {
    let o = Vertex::ORIGIN;
    let phi0 = t
        .phi(o)
        .ok_or_else(|| LadderError::Precondition("phi unavailable at the origin".into()))?;
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    for (target, p) in transition_row(w, 0.0, o)? {
        let d = t
            .phi(target)
            .ok_or_else(|| LadderError::Precondition(format!("phi unavailable at {target:?}")))?
            - phi0;
        let n = nu(w, o, target)?;
        a11 += p * d * d;
        a12 += p * d * n;
        a22 += p * n * n;
    }
    Ok((a11, a12, a22))
}

/// `Sigma = (s_ij)` of the pair `(psi, nu)` martingales.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SigmaMatrix {
    pub s11: EstimateCI,
    pub s12: EstimateCI,
    pub s22: EstimateCI,
    pub kappa: KappaEstimate,
    pub n_envs: usize,
    pub skipped: usize,
}

impl SigmaMatrix {
    /// `|s12| <= sqrt(s11 s22) + 3 * combined SE`.
    pub fn cauchy_schwarz_holds(&self) -> bool {
        let (a, b, c) = (self.s11, self.s12, self.s22);
        let g = (a.value * c.value).max(0.0).sqrt();
        let g_se = if g > 0.0 {
            0.5 * g * ((a.se / a.value).powi(2) + (c.se / c.value).powi(2)).sqrt()
        } else {
            0.0
        };
        a.value >= 0.0 && c.value >= 0.0 && b.value.abs() <= g + 3.0 * (b.se.powi(2) + g_se.powi(2)).sqrt()
    }
}

/// Average the per-environment terms and scale by `kappa`, propagating the
/// uncertainty of `kappa` through `s11 ~ kappa^2` and `s12 ~ kappa`.
pub fn sigma_psi_moments(terms: &[(f64, f64, f64)], kappa: KappaEstimate, skipped: usize) -> Result<SigmaMatrix> {
    let col = |f: fn(&(f64, f64, f64)) -> f64| terms.iter().map(f).collect::<Vec<f64>>();
    let m11 = mean_se(&col(|t| t.0), Method::PsiMoment)?;
    let m12 = mean_se(&col(|t| t.1), Method::PsiMoment)?;
    let s22 = mean_se(&col(|t| t.2), Method::PsiMoment)?;
    let k = kappa.kappa;
    let n = terms.len() as f64;
    let s11 = EstimateCI::new(
        k * k * m11.value,
        ((k * k * m11.se).powi(2) + (2.0 * k * m11.value * kappa.se).powi(2)).sqrt(),
        n,
        Method::PsiMoment,
    );
    let s12 = EstimateCI::new(
        k * m12.value,
        ((k * m12.se).powi(2) + (m12.value * kappa.se).powi(2)).sqrt(),
        n,
        Method::PsiMoment,
    );
    Ok(SigmaMatrix {
        s11,
        s12,
        s22,
        kappa,
        n_envs: terms.len(),
        skipped,
    })
}

/// `lambda^2 A_n` against `(alpha/2) s22`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SecondOrderCheck {
    pub lambda: f64,
    pub alpha: f64,
    pub lambda2_an: EstimateCI,
    pub target: EstimateCI,
    /// Difference in units of its combined standard error.
    pub z: f64,
    pub within_3se: bool,
}

pub fn second_order_check(a_n: &[f64], lambda: f64, n: usize, s22: &EstimateCI) -> Result<SecondOrderCheck> {
    let l2 = lambda * lambda;
    let lambda2_an = mean_se(a_n, Method::Mean)?.scaled(l2);
    let alpha = l2 * n as f64;
    let target = s22.scaled(alpha / 2.0);
    let se = (lambda2_an.se.powi(2) + target.se.powi(2)).sqrt();
    let z = (lambda2_an.value - target.value) / se;
    Ok(SecondOrderCheck {
        lambda,
        alpha,
        lambda2_an,
        target,
        z,
        within_3se: z.abs() <= 3.0,
    })
}

/// Estimates at one bias.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    /// Steps of the long trajectories used by the direct and renewal estimators.
    pub n_long: usize,
    pub direct: EstimateCI,
    pub regen: Option<EstimateCI>,
    /// Why the renewal estimator is missing, if it is.
    pub regen_note: Option<String>,
    /// `direct / lambda`.
    pub ratio: EstimateCI,
    pub ratio_regen: Option<EstimateCI>,
    pub girsanov: Option<GirsanovEstimate>,
    pub second_order: Option<SecondOrderCheck>,
    /// Long-run replicas that needed a wider window.
    pub retries: usize,
}

impl LambdaRow {
    pub fn new(lambda: f64, n_long: usize, direct: EstimateCI, regen: Result<EstimateCI>) -> Self {
        let (regen, regen_note) = match regen {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        LambdaRow {
            lambda,
            n_long,
            direct,
            ratio: direct.scaled(1.0 / lambda),
            ratio_regen: regen.map(|e| e.scaled(1.0 / lambda)),
            regen,
            regen_note,
            girsanov: None,
            second_order: None,
            retries: 0,
        }
    }
}

/// Diffusivity estimates.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaSummary {
    pub path_variance: PathVarianceEstimate,
    pub psi: Option<SigmaMatrix>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    /// Consecutive ratios never increase as lambda decreases beyond
    /// `1.96` combined SE.
    pub consecutive_ok: bool,
    /// Weighted slope of the ratio against lambda.
    pub trend_slope: f64,
    pub trend_slope_se: f64,
    pub monotone_trend: bool,
    /// The smallest-lambda ratio's 95% CI meets that of `Var(X_n)/n`.
    pub smallest_overlaps_sigma: bool,
    pub smallest_overlaps_s11: Option<bool>,
    /// Every ratio below `4 * max(sigma2, largest ratio seen)`; finite.
    pub bounded: bool,
    pub second_order_ok: Option<bool>,
    pub passed: bool,
}

/// Trend and overlap verdict. `rows` may come in any order.
pub fn einstein_verdict(rows: &[LambdaRow], sigma: &SigmaSummary) -> Result<Verdict> {
    if rows.len() < 2 {
        return Err(LadderError::Insufficient("need at least two lambdas".into()));
    }
    let mut sorted: Vec<&LambdaRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    // Ratio must not rise with lambda.
    let consecutive_ok = sorted.windows(2).all(|w| {
        let (lo, hi) = (&w[0].ratio, &w[1].ratio);
        hi.value - lo.value <= 1.96 * (lo.se.powi(2) + hi.se.powi(2)).sqrt()
    });
    let x: Vec<f64> = sorted.iter().map(|r| r.lambda).collect();
    let y: Vec<f64> = sorted.iter().map(|r| r.ratio.value).collect();
    let w: Vec<f64> = sorted.iter().map(|r| 1.0 / r.ratio.se.max(1e-300).powi(2)).collect();
    let (trend_slope, trend_slope_se) = if sorted.len() >= 3 {
        let f = linear_fit(&x, &y, Some(&w))?;
        (f.slope, f.slope_se)
    } else {
        let (a, b) = (&sorted[0].ratio, &sorted[1].ratio);
        let d = sorted[1].lambda - sorted[0].lambda;
        ((b.value - a.value) / d, (a.se.powi(2) + b.se.powi(2)).sqrt() / d)
    };
    let monotone_trend = consecutive_ok && trend_slope < 0.0;
    let smallest = sorted[0];
    let s2 = &sigma.path_variance.sigma2;
    let smallest_overlaps_sigma = smallest.ratio.overlaps(s2);
    let smallest_overlaps_s11 = sigma.psi.as_ref().map(|m| smallest.ratio.overlaps(&m.s11));
    let cap = 4.0 * s2.value.max(y.iter().copied().fold(0.0, f64::max));
    let bounded = y.iter().all(|v| v.is_finite() && *v <= cap);
    let checks: Vec<bool> = rows
        .iter()
        .filter_map(|r| r.second_order.map(|c| c.within_3se))
        .collect();
    let second_order_ok = (!checks.is_empty()).then(|| checks.iter().all(|&b| b));
    let passed = monotone_trend && smallest_overlaps_sigma && bounded && second_order_ok.unwrap_or(true);
    Ok(Verdict {
        consecutive_ok,
        trend_slope,
        trend_slope_se,
        monotone_trend,
        smallest_overlaps_sigma,
        smallest_overlaps_s11,
        bounded,
        second_order_ok,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regeneration::{speed_regen, RegenRecord, DEFAULT_BATCH};
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal<R: Rng>(rng: &mut R) -> f64 {
        rng.sample(StandardNormal)
    }

    fn dummy_path_variance(sigma2: f64, se: f64) -> PathVarianceEstimate {
        PathVarianceEstimate {
            sigma2: EstimateCI::new(sigma2, se, 200.0, Method::PathVariance),
            max_x2_over_n: EstimateCI::new(1.0, 0.1, 200.0, Method::Mean),
            checkpoints: vec![],
            ks_statistic: 0.0,
            ks_p_value: 1.0,
        }
    }

    #[test]
    fn girsanov_guards() {
        let pairs = vec![(1.0, 0.0); 50];
        assert!(speed_girsanov_from(&pairs, 0.1, 10).is_err());
        let g = speed_girsanov_from(&pairs, 0.1, 100).unwrap();
        assert!((g.estimate.value - 0.1).abs() < 1e-15 && (g.ess - 50.0).abs() < 1e-9);
        assert!(!g.degenerate);
        let mut skew = vec![(1.0, -50.0); 50];
        skew[0].1 = 0.0;
        assert!(speed_girsanov_from(&skew, 0.1, 100).unwrap().degenerate);
    }

    #[test]
    fn variance_estimator_on_normals() {
        let mut rng = stream_rng(61, 0);
        let n = 100;
        let xs: Vec<f64> = (0..4000).map(|_| 3.0 * normal(&mut rng) * (n as f64).sqrt()).collect();
        let e = variance_over_n(&xs, n).unwrap();
        assert!((e.value - 9.0).abs() < 3.0 * e.se, "{e:?}");
        // Normal data: SE close to sigma^2 sqrt(2/k).
        assert!((e.se / (9.0 * (2.0f64 / 4000.0).sqrt()) - 1.0).abs() < 0.15);
    }

    #[test]
    fn psi_moment_scaling() {
        let terms: Vec<(f64, f64, f64)> = (0..100).map(|i| (1.0 + (i % 2) as f64, 0.5, 0.7)).collect();
        let k = KappaEstimate {
            kappa: 2.0,
            se: 0.1,
            n_cycles: 1000,
        };
        let m = sigma_psi_moments(&terms, k, 3).unwrap();
        assert!((m.s11.value - 6.0).abs() < 1e-12);
        assert!((m.s12.value - 1.0).abs() < 1e-12);
        assert!((m.s22.value - 0.7).abs() < 1e-12);
        assert!((m.s12.se - 0.05).abs() < 1e-12);
        assert!(m.s11.se >= 2.0 * 2.0 * 1.5 * 0.1);
        assert!(m.cauchy_schwarz_holds());
        assert_eq!(m.skipped, 3);
    }

    /// Synthetic pipeline: the truth is `v(lambda) = sigma^2 lambda (1 - lambda/2)`,
    /// so the ratio falls toward `sigma^2` as `lambda` shrinks.
    #[test]
    fn synthetic_einstein_pipeline() {
        let sigma2 = 0.4;
        let mut rng = stream_rng(62, 0);
        let mut rows = Vec::new();
        for &lambda in &[0.4, 0.2, 0.1, 0.05] {
            let v = sigma2 * lambda * (1.0 - lambda / 2.0);
            let direct: Vec<f64> = (0..200).map(|_| v + 0.002 * lambda * normal(&mut rng)).collect();
            let records: Vec<RegenRecord> = (0..200)
                .map(|_| {
                    let mut t = 0u64;
                    let mut x = 0i64;
                    let mut points = Vec::new();
                    for _ in 0..41 {
                        let dt = (1e5 + 1e3 * normal(&mut rng)).round() as u64;
                        t += dt;
                        x += (v * dt as f64 + 1.0 * normal(&mut rng)).round() as i64;
                        points.push((t, x));
                    }
                    RegenRecord {
                        lambda,
                        points,
                        censored: None,
                    }
                })
                .collect();
            let d = speed_direct_from(&direct).unwrap();
            let r = speed_regen(&records, 30, DEFAULT_BATCH).unwrap();
            assert!(d.overlaps(&r));
            let row = LambdaRow::new(lambda, 0, d, Ok(r));
            assert!((row.ratio.value - v / lambda).abs() <= row.ratio.se.max(1e-12) * 3.0);
            assert!((row.ratio_regen.unwrap().value - v / lambda).abs() <= 3.0 * row.ratio_regen.unwrap().se);
            rows.push(row);
        }
        let xs: Vec<f64> = (0..400).map(|_| sigma2.sqrt() * normal(&mut rng)).collect();
        let s = variance_over_n(&xs, 1).unwrap();
        let sigma = SigmaSummary {
            path_variance: dummy_path_variance(s.value, s.se),
            psi: None,
        };
        let verdict = einstein_verdict(&rows, &sigma).unwrap();
        assert!(verdict.passed, "{verdict:?}");
        assert!(verdict.trend_slope < 0.0);

        // A ratio that climbs with lambda is rejected.
        let mut bad = rows.clone();
        bad[0].ratio = EstimateCI::new(0.8, 0.001, 200.0, Method::Direct);
        bad[3].ratio = EstimateCI::new(0.1, 0.001, 200.0, Method::Direct);
        assert!(!einstein_verdict(&bad, &sigma).unwrap().passed);
    }
}
