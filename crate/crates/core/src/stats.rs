//! Small statistical toolkit: estimates with standard errors, ratio and batch
//! means estimators, regressions, and goodness-of-fit tests.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{LadderError, Result};

/// Which estimator produced an [`EstimateCI`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Direct,
    Regen,
    Girsanov,
    PsiMoment,
    PathVariance,
    Ratio,
    Mean,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Regen => "regen",
            Method::Girsanov => "girsanov",
            Method::PsiMoment => "psi-moment",
            Method::PathVariance => "path-variance",
            Method::Ratio => "ratio",
            Method::Mean => "mean",
        }
    }
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateCI {
    pub value: f64,
    pub se: f64,
    pub n_eff: f64,
    pub method: Method,
}

impl EstimateCI {
    pub fn new(value: f64, se: f64, n_eff: f64, method: Method) -> Self {
        debug_assert!(se >= 0.0 || se.is_nan());
        EstimateCI {
            value,
            se,
            n_eff: n_eff.max(1.0),
            method,
        }
    }

    /// Two-sided normal interval at `level`.
    pub fn ci(&self, level: f64) -> (f64, f64) {
        let z = normal_quantile(0.5 + level / 2.0);
        (self.value - z * self.se, self.value + z * self.se)
    }

    pub fn ci95(&self) -> (f64, f64) {
        self.ci(0.95)
    }

    /// Whether the two 95% intervals intersect.
    pub fn overlaps(&self, other: &EstimateCI) -> bool {
        let (a0, a1) = self.ci95();
        let (b0, b1) = other.ci95();
        a0 <= b1 && b0 <= a1
    }

    pub fn scaled(&self, k: f64) -> Self {
        EstimateCI {
            value: self.value * k,
            se: self.se * k.abs(),
            ..*self
        }
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Mean with its standard error.
pub fn mean_se(xs: &[f64], method: Method) -> Result<EstimateCI> {
    if xs.len() < 2 {
        return Err(LadderError::Insufficient(format!("{} samples", xs.len())));
    }
    let n = xs.len() as f64;
    Ok(EstimateCI::new(mean(xs), (variance(xs) / n).sqrt(), n, method))
}

/// `mean(y)/mean(x)` with delta-method standard error.
pub fn ratio_of_means(y: &[f64], x: &[f64], method: Method) -> Result<EstimateCI> {
    if y.len() != x.len() || y.len() < 2 {
        return Err(LadderError::Insufficient(format!("{} paired samples", y.len())));
    }
    let n = y.len() as f64;
    let (my, mx) = (mean(y), mean(x));
    if mx == 0.0 {
        return Err(LadderError::Insufficient("zero denominator mean".into()));
    }
    let r = my / mx;
    let resid: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - r * b).collect();
    let s2 = resid.iter().map(|e| e * e).sum::<f64>() / (n - 1.0);
    Ok(EstimateCI::new(r, (s2 / n).sqrt() / mx.abs(), n, method))
}

/// Sample correlation of `(x_k, x_{k+lag})` with its null standard error `1/sqrt(n)`.
pub fn lag_correlation(xs: &[f64], lag: usize) -> (f64, f64) {
    let n = xs.len();
    if n <= lag + 2 {
        return (f64::NAN, f64::NAN);
    }
    let a = &xs[..n - lag];
    let b = &xs[lag..];
    (correlation(a, b), 1.0 / ((n - lag) as f64).sqrt())
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Least-squares line with slope standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Weighted least squares; `weights = None` means ordinary least squares.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(LadderError::Insufficient(format!("{n} points for a line fit")));
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += w[i] * (x[i] - mx).powi(2);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
    }
    if sxx == 0.0 {
        return Err(LadderError::Insufficient("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if weights.is_some() {
        // Weights are inverse variances.
        (1.0 / sxx).sqrt()
    } else {
        let rss: f64 = (0..n).map(|i| (y[i] - intercept - slope * x[i]).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Kolmogorov distribution tail `P(K > t)`.
pub fn kolmogorov_q(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * t * t).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against `cdf`: `(D, p-value)`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sq = n.sqrt();
    (d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d))
}

/// Pearson chi-square test of observed counts against expected counts,
/// pooling cells (in the given order) until each pooled cell expects at
/// least `min_expected`. Returns `(statistic, dof, p-value)`.
pub fn chi_square_test(observed: &[f64], expected: &[f64], min_expected: f64) -> Result<(f64, usize, f64)> {
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= min_expected {
            pooled.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => pooled.push((o, e)),
        }
    }
    if pooled.len() < 2 {
        return Err(LadderError::Insufficient("fewer than two pooled cells".into()));
    }
    let stat: f64 = pooled.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = pooled.len() - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat);
    Ok((stat, dof, p))
}

/// Batch sums of consecutive blocks of `b` entries (a trailing partial batch
/// is dropped).
pub fn batch_sums(xs: &[f64], b: usize) -> Vec<f64> {
    xs.chunks_exact(b).map(|c| c.iter().sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_degenerate_and_simple() {
        let e = ratio_of_means(&[2.0; 10], &[1.0; 10], Method::Ratio).unwrap();
        assert_eq!((e.value, e.se), (2.0, 0.0));
        let y = [1.0, 2.0, 1.0, 2.0];
        let x = [1.0, 2.0, 1.0, 2.0];
        let e = ratio_of_means(&y, &x, Method::Ratio).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15 && e.se < 1e-15);
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.949) - 0.001).abs() < 1e-4);
    }

    #[test]
    fn ks_uniform_grid_passes() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_test(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d < 1e-3 + 1e-12 && p > 0.99);
        let (_, p) = ks_test(&xs, |x| (x * x).clamp(0.0, 1.0));
        assert!(p < 1e-6);
    }

    #[test]
    fn chi_square_pools_and_rejects() {
        let exp = [50.0, 50.0, 2.0, 2.0, 2.0, 94.0];
        let (_, dof, p) = chi_square_test(&exp, &exp, 5.0).unwrap();
        assert_eq!(dof, 3);
        assert!(p > 0.999);
        let obs = [80.0, 20.0, 2.0, 2.0, 2.0, 94.0];
        assert!(chi_square_test(&obs, &exp, 5.0).unwrap().2 < 1e-6);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y, None).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn intervals_overlap() {
        let a = EstimateCI::new(1.0, 0.1, 10.0, Method::Mean);
        let b = EstimateCI::new(1.3, 0.1, 10.0, Method::Mean);
        let c = EstimateCI::new(1.5, 0.1, 10.0, Method::Mean);
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
    }
}
