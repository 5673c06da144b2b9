//! The harmonic coordinate `psi = kappa (phi - phi(0))` and the corrector
//! `chi = x - psi`.
//!
//! `phi` grows by `1/C_k` across the k-th block. Inside a block `[a, b)` it
//! is `phi(a)` plus the potential of a unit current sent from `(b,0)` to the
//! grounded `(a,0)`, which makes it harmonic for the unbiased walk.

use serde::Serialize;

use crate::electrical::{unit_current_voltages, ResistorGraph};
use crate::error::{LadderError, Result};
use crate::percolation::{crossing_cluster, find_preregeneration_points, Cycle, Vertex, WindowConfig};
use crate::stats::{linear_fit, mean, EstimateCI, Method};

/// `kappa = E[L]/E[1/C]` with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub se: f64,
    pub n_cycles: usize,
}

impl KappaEstimate {
    /// Treat `kappa` as exact.
    pub fn exact(kappa: f64) -> Self {
        KappaEstimate {
            kappa,
            se: 0.0,
            n_cycles: 0,
        }
    }

    pub fn as_estimate(&self) -> EstimateCI {
        EstimateCI::new(self.kappa, self.se, self.n_cycles as f64, Method::Ratio)
    }

    /// Two-sided normal interval at `level`.
    pub fn ci(&self, level: f64) -> (f64, f64) {
        self.as_estimate().ci(level)
    }
}

/// Minimum pool size accepted by [`estimate_kappa`].
pub const MIN_KAPPA_CYCLES: usize = 100;

pub fn estimate_kappa(cycles: &[Cycle]) -> Result<KappaEstimate> {
    if cycles.len() < MIN_KAPPA_CYCLES {
        return Err(LadderError::Insufficient(format!(
            "{} cycles, need at least {MIN_KAPPA_CYCLES}",
            cycles.len()
        )));
    }
    let l: Vec<f64> = cycles.iter().map(|c| c.length as f64).collect();
    let r: Vec<f64> = cycles.iter().map(Cycle::resistance).collect();
    let e = crate::stats::ratio_of_means(&l, &r, Method::Ratio)?;
    Ok(KappaEstimate {
        kappa: e.value,
        se: e.se,
        n_cycles: cycles.len(),
    })
}

/// `phi`, `psi` and `chi` on the covered part of a window.
#[derive(Debug, Clone)]
pub struct PotentialTable {
    x_lo: i64,
    x_hi: i64,
    phi: Vec<f64>,
    phi_origin: f64,
    pub kappa: KappaEstimate,
    /// Pre-regeneration points delimiting the covered blocks.
    pub prereg: Vec<i64>,
    /// Index into `prereg` of the left end of the block holding the origin.
    pub origin_block: usize,
    /// `1/C` of each covered block, left to right.
    pub block_resistance: Vec<f64>,
}

impl PotentialTable {
    fn slot(&self, v: Vertex) -> Option<usize> {
        (v.x >= self.x_lo && v.x <= self.x_hi).then(|| 2 * (v.x - self.x_lo) as usize + v.y as usize)
    }

    /// Column range with values.
    pub fn range(&self) -> (i64, i64) {
        (self.x_lo, self.x_hi)
    }

    /// `phi(v)`, or `None` off the covered cluster.
    pub fn phi(&self, v: Vertex) -> Option<f64> {
        self.slot(v).map(|i| self.phi[i]).filter(|p| !p.is_nan())
    }

    pub fn psi(&self, v: Vertex) -> Option<f64> {
        self.phi(v).map(|p| self.kappa.kappa * (p - self.phi_origin))
    }

    pub fn chi(&self, v: Vertex) -> Option<f64> {
        self.psi(v).map(|s| v.x as f64 - s)
    }

    /// Covered vertices, left to right.
    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.phi.len())
            .filter(|&i| !self.phi[i].is_nan())
            .map(|i| Vertex::new(self.x_lo + (i / 2) as i64, (i % 2) as u8))
    }

    /// Covered vertices whose neighbours are covered too (excludes the two
    /// outermost pre-regeneration points).
    pub fn interior_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.vertices().filter(|v| v.x > self.x_lo && v.x < self.x_hi)
    }

    /// CSV rows `vertex_x,vertex_y,phi,psi,chi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex_x,vertex_y,phi,psi,chi\n");
        for v in self.vertices() {
            s.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.12e}\n",
                v.x,
                v.y,
                self.phi(v).unwrap(),
                self.psi(v).unwrap(),
                self.chi(v).unwrap()
            ));
        }
        s
    }
}

/// Build the potentials on all blocks at distance `>= margin` from the
/// window ends. The origin must lie on the crossing cluster inside a covered
/// block.
pub fn build_potentials(w: &WindowConfig, kappa: KappaEstimate, margin: i64) -> Result<PotentialTable> {
    let cluster = crossing_cluster(w);
    let origin = Vertex::ORIGIN;
    if !w.contains_x(0) || !cluster[w.index(origin)] {
        return Err(LadderError::Precondition(
            "origin is not on the crossing cluster".into(),
        ));
    }
    let prereg: Vec<i64> = find_preregeneration_points(w)
        .into_iter()
        .filter(|&x| x - w.x_min() >= margin && w.x_max() - x >= margin)
        .collect();
    let origin_block = match prereg.iter().rposition(|&x| x <= 0) {
        Some(k) if k + 1 < prereg.len() => k,
        _ => {
            return Err(LadderError::Precondition(
                "origin is not flanked by two usable pre-regeneration points".into(),
            ))
        }
    };
    let x_lo = prereg[0];
    let x_hi = *prereg.last().unwrap();
    let mut phi = vec![f64::NAN; 2 * (x_hi - x_lo + 1) as usize];
    let mut block_resistance = Vec::with_capacity(prereg.len() - 1);
    let mut voltages = Vec::with_capacity(prereg.len() - 1);
    for ab in prereg.windows(2) {
        let (a, b) = (ab[0], ab[1]);
        let g = ResistorGraph::from_block(w, a, b)?;
        let ia = 0;
        let ib = g.len() - 2;
        let v = unit_current_voltages(&g, ib, ia)?;
        block_resistance.push(v[ib]);
        voltages.push(v);
    }
    // Cumulative phi at block left ends, zero at the origin block.
    let mut left_phi = vec![0.0; prereg.len()];
    for k in origin_block + 1..prereg.len() {
        left_phi[k] = left_phi[k - 1] + block_resistance[k - 1];
    }
    for k in (0..origin_block).rev() {
        left_phi[k] = left_phi[k + 1] - block_resistance[k];
    }
    for (k, v) in voltages.iter().enumerate() {
        let a = prereg[k];
        let b = prereg[k + 1];
        for (j, &vj) in v.iter().enumerate() {
            let x = a + (j / 2) as i64;
            if x == b || vj.is_nan() {
                continue;
            }
            phi[2 * (x - x_lo) as usize + j % 2] = left_phi[k] + vj;
        }
    }
    let last = prereg.len() - 1;
    phi[2 * (x_hi - x_lo) as usize] = left_phi[last];
    let phi_origin = phi[2 * (-x_lo) as usize];
    if phi_origin.is_nan() {
        return Err(LadderError::Precondition(
            "origin is not on the crossing cluster".into(),
        ));
    }
    Ok(PotentialTable {
        x_lo,
        x_hi,
        phi,
        phi_origin,
        kappa,
        prereg,
        origin_block,
        block_resistance,
    })
}

/// Largest `|E^v[psi(Y_1)] - psi(v)|` for the unbiased lazy walk over
/// interior covered vertices.
pub fn harmonicity_residual(w: &WindowConfig, t: &PotentialTable) -> f64 {
    let mut worst: f64 = 0.0;
    for v in t.interior_vertices() {
        let psi_v = t.psi(v).unwrap();
        let drift: f64 = w
            .open_neighbors(v)
            .map(|u| t.psi(u).expect("neighbour of a covered interior vertex") - psi_v)
            .sum::<f64>()
            / 3.0;
        worst = worst.max(drift.abs());
    }
    worst
}

/// Largest `|phi(v) - phi(u)|` and `|psi(v) - psi(u)|` over open edges
/// within the covered range.
pub fn max_increments(w: &WindowConfig, t: &PotentialTable) -> (f64, f64) {
    let mut dphi: f64 = 0.0;
    for v in t.vertices() {
        for u in w.open_neighbors(v) {
            if let Some(pu) = t.phi(u) {
                dphi = dphi.max((pu - t.phi(v).unwrap()).abs());
            }
        }
    }
    (dphi, dphi * t.kappa.kappa)
}

/// `max |psi(w, u+v) - psi(w, u) - psi(theta^u w, v)|` over `tests`.
pub fn cocycle_check(w: &WindowConfig, u: Vertex, kappa: KappaEstimate, tests: &[Vertex], margin: i64) -> Result<f64> {
    let base = build_potentials(w, kappa, margin)?;
    let psi_u = base
        .psi(u)
        .ok_or_else(|| LadderError::Insufficient(format!("{u:?} not covered")))?;
    let shifted = w.shifted(u);
    let moved = build_potentials(&shifted, kappa, margin)?;
    let mut worst: f64 = 0.0;
    for &v in tests {
        let target = Vertex::new(u.x + v.x, (u.y + v.y) % 2);
        let (Some(a), Some(b)) = (base.psi(target), moved.psi(v)) else {
            return Err(LadderError::Insufficient(format!("{v:?} not covered in both windows")));
        };
        worst = worst.max((a - psi_u - b).abs());
    }
    Ok(worst)
}

/// Centered cycle increments `eta_k = L_k - kappa/C_k`.
pub fn cycle_increments(cycles: &[Cycle], kappa: f64) -> Vec<f64> {
    cycles
        .iter()
        .map(|c| c.length as f64 - kappa * c.resistance())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    /// Log-log slope of `mean |chi(R_n)|` against `n`.
    pub exponent: f64,
    pub exponent_se: f64,
    /// Whether the slope is at most `0.5 + delta + 0.05`, for each delta.
    pub within: Vec<(f64, bool)>,
    /// Mean of `eta_k` over all supplied cycles.
    pub eta_mean: EstimateCI,
}

/// Sublinearity diagnostic from corrector values at successive
/// pre-regeneration points (`chi_paths[e][n] = chi(R_n)` in environment `e`)
/// and a held-out cycle sample.
pub fn corrector_growth_diagnostic(chi_paths: &[Vec<f64>], held_out: &[Cycle], kappa: f64) -> Result<GrowthReport> {
    let len = chi_paths.iter().map(Vec::len).min().unwrap_or(0);
    if len < 8 {
        return Err(LadderError::Insufficient(format!(
            "{len} pre-regeneration points per path"
        )));
    }
    let mut ns = Vec::new();
    let mut n = 2usize;
    while n < len {
        ns.push(n);
        n = (n as f64 * 1.5).ceil() as usize;
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .map(|&n| {
            let m = mean(&chi_paths.iter().map(|p| (p[n] - p[0]).abs()).collect::<Vec<_>>());
            ((n as f64).ln(), m.max(1e-300).ln())
        })
        .unzip();
    let fit = linear_fit(&lx, &ly, None)?;
    let eta = cycle_increments(held_out, kappa);
    Ok(GrowthReport {
        exponent: fit.slope,
        exponent_se: fit.slope_se,
        within: [0.05, 0.1].iter().map(|&d| (d, fit.slope <= 0.5 + d + 0.05)).collect(),
        eta_mean: crate::stats::mean_se(&eta, Method::Mean)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::window::BIT_H_BOTTOM;
    use crate::percolation::{sample_window_conditioned, Cycle};
    use crate::rng::stream_rng;

    #[test]
    fn kappa_hand_pools() {
        let pool = vec![Cycle::minimal(); 100];
        let k = estimate_kappa(&pool).unwrap();
        assert_eq!((k.kappa, k.se), (1.0, 0.0));
        let two = Cycle::from_columns(vec![BIT_H_BOTTOM, BIT_H_BOTTOM]).unwrap();
        assert!((two.conductance - 0.5).abs() < 1e-15);
        let mixed: Vec<Cycle> = (0..100)
            .map(|i| if i % 2 == 0 { Cycle::minimal() } else { two.clone() })
            .collect();
        let k = estimate_kappa(&mixed).unwrap();
        assert!((k.kappa - 1.0).abs() < 1e-14);
        assert!(estimate_kappa(&pool[..10]).is_err());
    }

    #[test]
    fn straight_line_potentials() {
        let w = WindowConfig::from_columns(-30, &[BIT_H_BOTTOM; 61], 0.5, true).unwrap();
        let t = build_potentials(&w, KappaEstimate::exact(0.8), 5).unwrap();
        for x in -25..=25 {
            let v = Vertex::new(x, 0);
            assert!((t.phi(v).unwrap() - x as f64).abs() < 1e-12);
            assert!((t.psi(v).unwrap() - 0.8 * x as f64).abs() < 1e-12);
            assert!((t.chi(v).unwrap() - 0.2 * x as f64).abs() < 1e-12);
        }
        assert!(t.phi(Vertex::new(0, 1)).is_none());
    }

    #[test]
    fn harmonic_and_bounded_on_samples() {
        let mut rng = stream_rng(31, 0);
        let mut done = 0;
        while done < 20 {
            let w = sample_window_conditioned(0.6, 200, 200, &mut rng).unwrap();
            let Ok(t) = build_potentials(&w, KappaEstimate::exact(0.7), 10) else {
                continue;
            };
            done += 1;
            assert!(harmonicity_residual(&w, &t) <= 1e-9);
            let (dphi, dpsi) = max_increments(&w, &t);
            assert!(dphi <= 1.0 + 1e-12);
            assert!(dpsi <= 0.7 + 1e-12);
            assert_eq!(t.psi(Vertex::ORIGIN), Some(0.0));
            for v in t.vertices() {
                assert!((t.chi(v).unwrap() + t.psi(v).unwrap() - v.x as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cocycle_at_origin_is_zero() {
        let mut rng = stream_rng(32, 0);
        loop {
            let w = sample_window_conditioned(0.7, 300, 300, &mut rng).unwrap();
            let Ok(t) = build_potentials(&w, KappaEstimate::exact(0.9), 10) else {
                continue;
            };
            let tests: Vec<Vertex> = t.vertices().filter(|v| v.x.abs() < 20).collect();
            let d = cocycle_check(&w, Vertex::ORIGIN, KappaEstimate::exact(0.9), &tests, 10).unwrap();
            assert_eq!(d, 0.0);
            break;
        }
    }
}
