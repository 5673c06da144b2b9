//! The lazy biased walk: kernel, log-kernel derivatives at zero bias, and
//! path simulation with the martingale / Girsanov accumulators.
//!
//! From `v`, the walk moves along each open incident edge to `w` with
//! probability `e^{lambda (x(w)-x(v))}/(e^lambda + 1 + e^-lambda)` and stays put
//! with the mass of the closed edges.

use rand::Rng;
use serde::Serialize;

use crate::electrical::kernel_normalizer;
use crate::error::{LadderError, Result};
use crate::percolation::{Vertex, WindowConfig};

/// Incident-edge slots: right, left, up/down.
const DIRS: [(i64, bool); 3] = [(1, false), (-1, false), (0, true)];

/// Open-edge pattern at `v`: bit 0 right, bit 1 left, bit 2 rung.
#[inline]
pub fn pattern(w: &WindowConfig, v: Vertex) -> u8 {
    u8::from(w.horizontal(v.x, v.y))
        | (u8::from(v.x > w.x_min() && w.horizontal(v.x - 1, v.y)) << 1)
        | (u8::from(w.vertical(v.x)) << 2)
}

fn step_target(v: Vertex, slot: usize) -> Vertex {
    let (dx, flip) = DIRS[slot];
    Vertex::new(v.x + dx, if flip { 1 - v.y } else { v.y })
}

fn slot_of(v: Vertex, w: Vertex) -> Option<usize> {
    (0..3).find(|&s| step_target(v, s) == w)
}

/// `p_{omega,lambda}(v, w)`, zero for non-neighbours.
pub fn kernel_prob(w: &WindowConfig, lambda: f64, v: Vertex, target: Vertex) -> f64 {
    let pat = pattern(w, v);
    let z = kernel_normalizer(lambda);
    if target == v {
        return (0..3)
            .filter(|&s| pat & (1 << s) == 0)
            .map(|s| (lambda * DIRS[s].0 as f64).exp())
            .sum::<f64>()
            / z;
    }
    match slot_of(v, target) {
        Some(s) if pat & (1 << s) != 0 => (lambda * DIRS[s].0 as f64).exp() / z,
        _ => 0.0,
    }
}

/// The row `w -> p(v, w)` over open neighbours and `v` itself (self-loop
/// last, included only when it has positive mass).
pub fn transition_row(w: &WindowConfig, lambda: f64, v: Vertex) -> Result<Vec<(Vertex, f64)>> {
    if v.x <= w.x_min() || v.x >= w.x_max() {
        return Err(LadderError::Precondition(format!("{v:?} outside the usable window")));
    }
    let pat = pattern(w, v);
    let mut row: Vec<(Vertex, f64)> = (0..3)
        .filter(|&s| pat & (1 << s) != 0)
        .map(|s| {
            let t = step_target(v, s);
            (t, kernel_prob(w, lambda, v, t))
        })
        .collect();
    if pat != 7 {
        row.push((v, kernel_prob(w, lambda, v, v)));
    }
    Ok(row)
}

fn require_neighbor(w: &WindowConfig, v: Vertex, target: Vertex) -> Result<u8> {
    let pat = pattern(w, v);
    let ok = if target == v {
        pat != 7
    } else {
        matches!(slot_of(v, target), Some(s) if pat & (1 << s) != 0)
    };
    if ok {
        Ok(pat)
    } else {
        Err(LadderError::Precondition(format!(
            "{target:?} is not reachable from {v:?} in one step"
        )))
    }
}

/// Closed-slot displacement sums `(count, sum dx, sum dx^2)`.
fn closed_moments(pat: u8) -> (f64, f64, f64) {
    let mut k = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (s, &(dx, _)) in DIRS.iter().enumerate() {
        if pat & (1 << s) == 0 {
            k += 1.0;
            s1 += dx as f64;
            s2 += (dx * dx) as f64;
        }
    }
    (k, s1, s2)
}

/// `d/dlambda log p_{omega,lambda}(v,w)` at `lambda = 0`.
pub fn nu(w: &WindowConfig, v: Vertex, target: Vertex) -> Result<f64> {
    let pat = require_neighbor(w, v, target)?;
    Ok(nu_pattern(pat, target.x - v.x, target == v))
}

fn nu_pattern(pat: u8, dx: i64, stay: bool) -> f64 {
    if stay {
        let (k, s1, _) = closed_moments(pat);
        s1 / k
    } else {
        dx as f64
    }
}

/// `p''/p` at `lambda = 0`.
pub fn log_p_second_derivative_ratio(w: &WindowConfig, v: Vertex, target: Vertex) -> Result<f64> {
    let pat = require_neighbor(w, v, target)?;
    Ok(second_ratio_pattern(pat, target.x - v.x, target == v))
}

fn second_ratio_pattern(pat: u8, dx: i64, stay: bool) -> f64 {
    if stay {
        let (k, _, s2) = closed_moments(pat);
        s2 / k - 2.0 / 3.0
    } else {
        (dx * dx) as f64 - 2.0 / 3.0
    }
}

/// Exact `log p_lambda(v,w) - log p_0(v,w)`.
pub fn log_kernel_ratio(w: &WindowConfig, lambda: f64, v: Vertex, target: Vertex) -> Result<f64> {
    let pat = require_neighbor(w, v, target)?;
    Ok(log_ratio_pattern(pat, target.x - v.x, target == v, lambda))
}

fn log_ratio_pattern(pat: u8, dx: i64, stay: bool, lambda: f64) -> f64 {
    let lz = (kernel_normalizer(lambda) / 3.0).ln();
    if stay {
        let k = closed_moments(pat).0;
        let s: f64 = (0..3)
            .filter(|&s| pat & (1 << s) == 0)
            .map(|s| (lambda * DIRS[s].0 as f64).exp())
            .sum();
        (s / k).ln() - lz
    } else {
        lambda * dx as f64 - lz
    }
}

/// `max_v |sum_w nu(v,w) p_0(v,w)|` and `max_v |sum_w p''(v,w)|` over `vs`.
pub fn martingale_checks(w: &WindowConfig, vs: &[Vertex]) -> Result<(f64, f64)> {
    let mut drift: f64 = 0.0;
    let mut second: f64 = 0.0;
    for &v in vs {
        let row = transition_row(w, 0.0, v)?;
        let mut a = 0.0;
        let mut b = 0.0;
        for (t, p) in row {
            a += nu(w, v, t)? * p;
            b += log_p_second_derivative_ratio(w, v, t)? * p;
        }
        drift = drift.max(a.abs());
        second = second.max(b.abs());
    }
    Ok((drift, second))
}

/// One outcome of a step from a given pattern.
#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    /// Change of the dense vertex index.
    didx: i32,
    dx: i8,
    nu: f64,
    /// `(nu^2 - p''/p) / 2`.
    half_q: f64,
    logw: f64,
    rem: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Row {
    /// Cumulative probabilities of the outcomes in `out`.
    cum: [f64; 4],
    out: [Outcome; 4],
    len: usize,
}

/// Per-pattern step tables for a simulation bias and a weight bias.
#[derive(Debug, Clone)]
pub struct StepTable {
    lambda: f64,
    weight_lambda: f64,
    rows: [[Row; 8]; 2],
}

impl StepTable {
    pub fn new(lambda: f64, weight_lambda: f64) -> Self {
        let z = kernel_normalizer(lambda);
        let mut rows = [[Row::default(); 8]; 2];
        for (y, rows_y) in rows.iter_mut().enumerate() {
            for (pat, row) in rows_y.iter_mut().enumerate() {
                let pat = pat as u8;
                let mut acc = 0.0;
                let mut push = |row: &mut Row, prob: f64, o: Outcome| {
                    acc += prob;
                    row.cum[row.len] = acc;
                    row.out[row.len] = o;
                    row.len += 1;
                };
                let make = |dx: i64, didx: i32, stay: bool| {
                    let nu = nu_pattern(pat, dx, stay);
                    let half_q = 0.5 * (nu * nu - second_ratio_pattern(pat, dx, stay));
                    let logw = log_ratio_pattern(pat, dx, stay, weight_lambda);
                    let rem = logw - weight_lambda * nu + weight_lambda * weight_lambda * half_q;
                    Outcome {
                        didx,
                        dx: dx as i8,
                        nu,
                        half_q,
                        logw,
                        rem,
                    }
                };
                for (s, &(dx, flip)) in DIRS.iter().enumerate() {
                    if pat & (1 << s) != 0 {
                        let didx = if flip { 1 - 2 * y as i32 } else { 2 * dx as i32 };
                        push(row, (lambda * dx as f64).exp() / z, make(dx, didx, false));
                    }
                }
                if pat != 7 {
                    let stay: f64 = (0..3)
                        .filter(|&s| pat & (1 << s) == 0)
                        .map(|s| (lambda * DIRS[s].0 as f64).exp())
                        .sum::<f64>()
                        / z;
                    push(row, stay, make(0, 0, true));
                }
                // Guard against rounding at the top of the row.
                row.cum[row.len - 1] = f64::INFINITY;
            }
        }
        StepTable {
            lambda,
            weight_lambda,
            rows,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn weight_lambda(&self) -> f64 {
        self.weight_lambda
    }
}

/// Environment in the layout the simulator reads: one pattern byte per
/// vertex, dense vertex indices.
#[derive(Debug, Clone)]
pub struct WalkEnv {
    x_min: i64,
    x_max: i64,
    patterns: Vec<u8>,
    /// Dense index of each lambda-point column's bottom vertex -> point index.
    marks: Vec<u32>,
    mark_xs: Vec<i64>,
}

const NO_MARK: u32 = u32::MAX;

impl WalkEnv {
    pub fn new(w: &WindowConfig) -> Self {
        let patterns = (0..w.nvertices()).map(|i| pattern(w, w.vertex(i))).collect();
        WalkEnv {
            x_min: w.x_min(),
            x_max: w.x_max(),
            patterns,
            marks: Vec::new(),
            mark_xs: Vec::new(),
        }
    }

    /// Track first and last visits to `(x,0)` for each `x` in `xs` (sorted).
    pub fn with_marks(mut self, xs: &[i64]) -> Self {
        self.marks = vec![NO_MARK; self.patterns.len()];
        for (k, &x) in xs.iter().enumerate() {
            self.marks[2 * (x - self.x_min) as usize] = k as u32;
        }
        self.mark_xs = xs.to_vec();
        self
    }

    pub fn x_range(&self) -> (i64, i64) {
        (self.x_min, self.x_max)
    }

    fn idx(&self, v: Vertex) -> usize {
        2 * (v.x - self.x_min) as usize + v.y as usize
    }
}

/// First and last visit steps to each marked point (`u64::MAX` = never).
#[derive(Debug, Clone, Serialize)]
pub struct MarkVisits {
    pub xs: Vec<i64>,
    pub first: Vec<u64>,
    pub last: Vec<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep the full position sequence.
    pub record_path: bool,
    /// Steps at which `X_k` is stored.
    pub checkpoints: Vec<usize>,
}

/// A simulated path with its online accumulators.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub lambda: f64,
    pub weight_lambda: f64,
    pub stream: u64,
    pub start: Vertex,
    pub n_steps: usize,
    pub end: Vertex,
    /// `X_n - X_0`.
    pub x: i64,
    pub m: f64,
    pub a: f64,
    pub log_weight: f64,
    pub remainder: f64,
    /// `max_{k <= n} (X_k - X_0)^2`.
    pub max_x2: f64,
    pub checkpoints: Vec<(usize, i64)>,
    #[serde(skip)]
    pub path: Option<Vec<Vertex>>,
    pub visits: Option<MarkVisits>,
}

impl Trajectory {
    /// `(M_n, A_n, R_{lambda,n}, log_weight)`.
    pub fn girsanov_components(&self) -> (f64, f64, f64, f64) {
        (self.m, self.a, self.remainder, self.log_weight)
    }

    /// Recompute `M_n` from the recorded path.
    pub fn replay_m(&self, w: &WindowConfig) -> Result<f64> {
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| LadderError::Precondition("path not recorded".into()))?;
        path.windows(2).map(|s| nu(w, s[0], s[1])).sum()
    }

    /// CSV `step,x,y,M,A,log_weight` of a recorded path.
    pub fn to_csv(&self, w: &WindowConfig) -> Result<String> {
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| LadderError::Precondition("path not recorded".into()))?;
        let mut s = String::from("step,x,y,M,A,log_weight\n");
        let (mut m, mut a, mut lw) = (0.0, 0.0, 0.0);
        s.push_str(&format!("0,{},{},0,0,0\n", path[0].x, path[0].y));
        for (k, pair) in path.windows(2).enumerate() {
            let (v, t) = (pair[0], pair[1]);
            let nu_k = nu(w, v, t)?;
            m += nu_k;
            a += 0.5 * (nu_k * nu_k - log_p_second_derivative_ratio(w, v, t)?);
            lw += log_kernel_ratio(w, self.weight_lambda, v, t)?;
            s.push_str(&format!("{},{},{},{m},{a},{lw}\n", k + 1, t.x, t.y));
        }
        Ok(s)
    }
}

/// Run `n_steps` of the walk at bias `table.lambda()` from `start`.
///
/// Aborts with [`LadderError::Boundary`] when the walk enters either
/// boundary column.
pub fn simulate<R: Rng + ?Sized>(
    env: &WalkEnv,
    table: &StepTable,
    start: Vertex,
    n_steps: usize,
    stream: u64,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    if start.x <= env.x_min || start.x >= env.x_max {
        return Err(LadderError::Boundary { step: 0, x: start.x });
    }
    let lo = 2 * (env.x_min + 1 - env.x_min) as usize;
    let hi = 2 * (env.x_max - env.x_min) as usize;
    let rows = &table.rows;
    let mut idx = env.idx(start);
    let mut x: i64 = 0;
    let (mut m, mut a, mut lw, mut rem) = (0.0, 0.0, 0.0, 0.0);
    let mut max_x2: i64 = 0;
    let mut path = opts.record_path.then(|| {
        let mut p = Vec::with_capacity(n_steps + 1);
        p.push(start);
        p
    });
    let tracking = !env.marks.is_empty();
    let nmarks = env.mark_xs.len();
    let (mut first, mut last) = if tracking {
        (vec![u64::MAX; nmarks], vec![u64::MAX; nmarks])
    } else {
        (Vec::new(), Vec::new())
    };
    if tracking {
        let k = env.marks[idx];
        if k != NO_MARK {
            first[k as usize] = 0;
            last[k as usize] = 0;
        }
    }
    let mut checkpoints = Vec::with_capacity(opts.checkpoints.len());
    let mut next_cp = 0;
    let mut cps: Vec<usize> = opts.checkpoints.clone();
    cps.sort_unstable();
    while next_cp < cps.len() && cps[next_cp] == 0 {
        checkpoints.push((0, 0));
        next_cp += 1;
    }
    for step in 1..=n_steps {
        let row = &rows[idx & 1][env.patterns[idx] as usize];
        let u: f64 = rng.random();
        let mut k = 0;
        while u >= row.cum[k] {
            k += 1;
        }
        let o = &row.out[k];
        idx = (idx as i64 + o.didx as i64) as usize;
        x += o.dx as i64;
        m += o.nu;
        a += o.half_q;
        lw += o.logw;
        rem += o.rem;
        max_x2 = max_x2.max(x * x);
        if idx < lo || idx >= hi {
            return Err(LadderError::Boundary {
                step,
                x: env.x_min + (idx / 2) as i64,
            });
        }
        if let Some(p) = path.as_mut() {
            p.push(Vertex::new(env.x_min + (idx / 2) as i64, (idx & 1) as u8));
        }
        if tracking {
            let mk = env.marks[idx];
            if mk != NO_MARK {
                let mk = mk as usize;
                if first[mk] == u64::MAX {
                    first[mk] = step as u64;
                }
                last[mk] = step as u64;
            }
        }
        while next_cp < cps.len() && cps[next_cp] == step {
            checkpoints.push((step, x));
            next_cp += 1;
        }
    }
    Ok(Trajectory {
        lambda: table.lambda,
        weight_lambda: table.weight_lambda,
        stream,
        start,
        n_steps,
        end: Vertex::new(env.x_min + (idx / 2) as i64, (idx & 1) as u8),
        x,
        m,
        a,
        log_weight: lw,
        remainder: rem,
        max_x2: max_x2 as f64,
        checkpoints,
        path,
        visits: tracking.then(|| MarkVisits {
            xs: env.mark_xs.clone(),
            first,
            last,
        }),
    })
}

/// Per-step Girsanov pieces along an explicit path: `(nu, half_q, logw)`.
pub fn path_increments(w: &WindowConfig, weight_lambda: f64, path: &[Vertex]) -> Result<Vec<(f64, f64, f64)>> {
    path.windows(2)
        .map(|s| {
            let n = nu(w, s[0], s[1])?;
            let q = log_p_second_derivative_ratio(w, s[0], s[1])?;
            let l = log_kernel_ratio(w, weight_lambda, s[0], s[1])?;
            Ok((n, 0.5 * (n * n - q), l))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::window::{BIT_H_BOTTOM, BIT_H_TOP, BIT_VERTICAL};
    use crate::rng::stream_rng;

    const ALL: u8 = BIT_VERTICAL | BIT_H_BOTTOM | BIT_H_TOP;

    fn fd_log_p(w: &WindowConfig, v: Vertex, t: Vertex) -> (f64, f64) {
        let h = 1e-4;
        let p = |l: f64| kernel_prob(w, l, v, t);
        let (pm, p0, pp) = (p(-h), p(0.0), p(h));
        ((pp.ln() - pm.ln()) / (2.0 * h), (pp - 2.0 * p0 + pm) / (h * h) / p0)
    }

    #[test]
    fn rows_for_simple_vertices() {
        let w = WindowConfig::from_columns(0, &[ALL; 5], 0.5, false).unwrap();
        let row = transition_row(&w, 0.0, Vertex::new(2, 0)).unwrap();
        assert_eq!(row.len(), 3);
        for (_, p) in &row {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = WindowConfig::from_columns(0, &[0; 5], 0.5, false).unwrap();
        for l in [0.0, 0.3, 1.0] {
            assert_eq!(
                transition_row(&w, l, Vertex::new(2, 1)).unwrap(),
                vec![(Vertex::new(2, 1), 1.0)]
            );
        }
        let w = WindowConfig::from_columns(0, &[0, 0, BIT_H_BOTTOM, 0, 0], 0.5, false).unwrap();
        let row = transition_row(&w, 0.1, Vertex::new(2, 0)).unwrap();
        let pr = 0.1f64.exp() / (0.1f64.exp() + 1.0 + (-0.1f64).exp());
        assert!((row[0].1 - pr).abs() < 1e-15);
        assert!((row[1].1 - (1.0 - pr)).abs() < 1e-15);
    }

    #[test]
    fn derivative_cases() {
        // Only the left edge open at (2,0).
        let w = WindowConfig::from_columns(0, &[0, BIT_H_BOTTOM, 0, 0, 0], 0.5, false).unwrap();
        let v = Vertex::new(2, 0);
        assert_eq!(nu(&w, v, v).unwrap(), 0.5);
        assert_eq!(nu(&w, v, Vertex::new(1, 0)).unwrap(), -1.0);
        let (d1, d2) = fd_log_p(&w, v, v);
        assert!((d1 - 0.5).abs() < 1e-6);
        assert!((d2 - log_p_second_derivative_ratio(&w, v, v).unwrap()).abs() < 1e-6);
        assert!(nu(&w, v, Vertex::new(3, 0)).is_err());
        let (drift, second) = martingale_checks(&w, &[v]).unwrap();
        assert!(drift < 1e-15 && second < 1e-15);

        let w = WindowConfig::from_columns(0, &[ALL; 5], 0.5, false).unwrap();
        assert!((log_p_second_derivative_ratio(&w, v, Vertex::new(3, 0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((log_p_second_derivative_ratio(&w, v, Vertex::new(2, 1)).unwrap() + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(nu(&w, v, Vertex::new(2, 1)).unwrap(), 0.0);
    }

    #[test]
    fn replay_and_identities() {
        let mut rng = stream_rng(41, 0);
        let w = crate::percolation::sample_window_conditioned(0.7, 400, 400, &mut rng).unwrap();
        let cl = crate::percolation::crossing_cluster(&w);
        let start = (0..w.nvertices())
            .map(|i| w.vertex(i))
            .find(|v| v.x >= 0 && cl[w.index(*v)])
            .unwrap();
        let env = WalkEnv::new(&w);
        let table = StepTable::new(0.0, 0.2);
        let opts = SimOptions {
            record_path: true,
            checkpoints: vec![10, 100],
        };
        let t1 = simulate(&env, &table, start, 2000, 7, &opts, &mut stream_rng(5, 7)).unwrap();
        let t2 = simulate(&env, &table, start, 2000, 7, &opts, &mut stream_rng(5, 7)).unwrap();
        assert_eq!(t1.path, t2.path);
        assert_eq!(t1.replay_m(&w).unwrap(), t1.m);
        let lhs = t1.log_weight;
        let rhs = 0.2 * t1.m - 0.04 * t1.a + t1.remainder;
        assert!((lhs - rhs).abs() < 1e-9);
        let inc = path_increments(&w, 0.2, t1.path.as_ref().unwrap()).unwrap();
        let lw: f64 = inc.iter().map(|i| i.2).sum();
        assert!((lw - t1.log_weight).abs() < 1e-9);
        let path = t1.path.as_ref().unwrap();
        for (k, pair) in path.windows(2).enumerate() {
            assert!(pair[0] == pair[1] || w.is_open(pair[0], pair[1]), "step {k}");
            if pair[0] != pair[1] {
                assert_eq!(nu(&w, pair[0], pair[1]).unwrap(), (pair[1].x - pair[0].x) as f64);
            }
        }
        assert_eq!(t1.checkpoints[1], (100, path[100].x - start.x));
        let t0 = simulate(
            &env,
            &StepTable::new(0.0, 0.0),
            start,
            100,
            0,
            &SimOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!((t0.log_weight, t0.remainder), (0.0, 0.0));
    }

    #[test]
    fn boundary_aborts() {
        let w = WindowConfig::from_columns(0, &[BIT_H_BOTTOM; 6], 0.5, true).unwrap();
        let env = WalkEnv::new(&w);
        let err = simulate(
            &env,
            &StepTable::new(1.0, 1.0),
            Vertex::new(2, 0),
            10_000,
            0,
            &SimOptions::default(),
            &mut stream_rng(1, 1),
        );
        assert!(matches!(err, Err(LadderError::Boundary { .. })));
    }
}
