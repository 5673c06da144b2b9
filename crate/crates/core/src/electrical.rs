//! Electrical networks on ladder blocks: effective resistances, tilted
//! conductances and the hitting, escape and ruin probabilities they encode.

use std::collections::VecDeque;

use crate::error::{LadderError, Result};
use crate::percolation::{crossing_cluster, top_isolated, Vertex, WindowConfig};

/// A finite network with positive edge conductances.
#[derive(Debug, Clone)]
pub struct ResistorGraph {
    vertices: Vec<Vertex>,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl ResistorGraph {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = vertices.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, c) in &edges {
            if i >= n || j >= n || i == j {
                return Err(LadderError::Parameter(format!("bad edge ({i}, {j})")));
            }
            if !(c > 0.0 && c.is_finite()) {
                return Err(LadderError::Parameter(format!("conductance {c} is not positive")));
            }
            adjacency[i].push((j, c));
            adjacency[j].push((i, c));
        }
        Ok(ResistorGraph {
            vertices,
            edges,
            adjacency,
        })
    }

    /// Open edges of `w` with both endpoints in columns `a..=b`, with the
    /// tilted conductance `exp(lambda (x(v) + x(w) - 2 x_ref))`.
    /// Vertices are indexed column-major, so the Laplacian has bandwidth 2.
    pub fn from_window(w: &WindowConfig, a: i64, b: i64, lambda: f64, x_ref: i64) -> Result<Self> {
        if a < w.x_min() || b > w.x_max() || a >= b {
            return Err(LadderError::Parameter(format!(
                "columns [{a}, {b}] not inside window [{}, {}]",
                w.x_min(),
                w.x_max()
            )));
        }
        let vertices: Vec<Vertex> = (a..=b).flat_map(|x| [Vertex::new(x, 0), Vertex::new(x, 1)]).collect();
        let idx = |x: i64, y: u8| 2 * (x - a) as usize + y as usize;
        let tilt = |x2: i64| (lambda * (x2 - 2 * x_ref) as f64).exp();
        let mut edges = Vec::new();
        for x in a..=b {
            if w.vertical(x) {
                edges.push((idx(x, 0), idx(x, 1), tilt(2 * x)));
            }
            if x < b {
                for y in 0..2 {
                    if w.horizontal(x, y) {
                        edges.push((idx(x, y), idx(x + 1, y), tilt(2 * x + 1)));
                    }
                }
            }
        }
        Self::new(vertices, edges)
    }

    /// Unit conductances on the open edges of columns `a..=b`.
    pub fn from_block(w: &WindowConfig, a: i64, b: i64) -> Result<Self> {
        Self::from_window(w, a, b, 0.0, 0)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }
    pub fn len(&self) -> usize {
        self.vertices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, v: Vertex) -> Option<usize> {
        self.vertices.iter().position(|&u| u == v)
    }

    fn require(&self, v: Vertex) -> Result<usize> {
        self.index_of(v)
            .ok_or_else(|| LadderError::Precondition(format!("vertex {v:?} not in network")))
    }

    /// Copy with edge `k` removed.
    pub fn without_edge(&self, k: usize) -> Self {
        let mut edges = self.edges.clone();
        edges.remove(k);
        Self::new(self.vertices.clone(), edges).expect("subset of a valid edge list")
    }

    /// Vertices reachable from `i`.
    pub fn component(&self, i: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        seen[i] = true;
        let mut q = VecDeque::from([i]);
        while let Some(u) = q.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen
    }

    /// Largest `|i - j|` over edges.
    pub fn bandwidth(&self) -> usize {
        self.edges.iter().map(|&(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    /// Solve the Dirichlet problem on the component of `anchor`: potentials
    /// fixed at `fixed`, net currents `injected` into the remaining vertices.
    /// Vertices off the component get `NaN`.
    pub fn solve_potentials(
        &self,
        anchor: usize,
        fixed: &[(usize, f64)],
        injected: &[(usize, f64)],
    ) -> Result<Vec<f64>> {
        let comp = self.component(anchor);
        let n = self.len();
        let mut value = vec![f64::NAN; n];
        let mut is_fixed = vec![false; n];
        for &(i, v) in fixed {
            if comp[i] {
                is_fixed[i] = true;
                value[i] = v;
            }
        }
        if !is_fixed.iter().any(|&f| f) {
            return Err(LadderError::Singular(0.0));
        }
        // Compressed unknown indices, order preserving.
        let mut unknown = vec![usize::MAX; n];
        let mut m = 0;
        for i in 0..n {
            if comp[i] && !is_fixed[i] {
                unknown[i] = m;
                m += 1;
            }
        }
        let mut rhs = vec![0.0; m];
        for &(i, c) in injected {
            if unknown[i] != usize::MAX {
                rhs[unknown[i]] += c;
            }
        }
        let k = self.bandwidth().max(1);
        let mut band = Banded::new(m, k);
        for i in 0..n {
            let ui = unknown[i];
            if ui == usize::MAX {
                continue;
            }
            for &(j, c) in &self.adjacency[i] {
                band.add(ui, ui, c);
                if unknown[j] != usize::MAX {
                    band.add(ui, unknown[j], -c);
                } else if is_fixed[j] {
                    rhs[ui] += c * value[j];
                }
            }
        }
        let x = band.solve(rhs)?;
        for i in 0..n {
            if unknown[i] != usize::MAX {
                value[i] = x[unknown[i]];
            }
        }
        Ok(value)
    }
}

/// Banded symmetric positive definite system, eliminated without pivoting.
struct Banded {
    n: usize,
    k: usize,
    a: Vec<f64>,
}

impl Banded {
    fn new(n: usize, k: usize) -> Self {
        Banded {
            n,
            k,
            a: vec![0.0; n * (2 * k + 1)],
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * (2 * self.k + 1) + (j + self.k - i)]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        *self.at(i, j) += v;
    }

    fn solve(mut self, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
        let (n, k) = (self.n, self.k);
        let diag: Vec<f64> = (0..n).map(|i| *self.at(i, i)).collect();
        for c in 0..n {
            let pivot = *self.at(c, c);
            if !(pivot > 1e-14 * diag[c]) {
                return Err(LadderError::Singular(pivot));
            }
            let hi = (c + k).min(n - 1);
            for r in c + 1..=hi {
                let f = *self.at(r, c) / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in c..=hi {
                    let v = *self.at(c, j);
                    *self.at(r, j) -= f * v;
                }
                rhs[r] -= f * rhs[c];
            }
        }
        let mut x = vec![0.0; n];
        for c in (0..n).rev() {
            let hi = (c + k).min(n - 1);
            let mut s = rhs[c];
            for j in c + 1..=hi {
                s -= *self.at(c, j) * x[j];
            }
            x[c] = s / *self.at(c, c);
        }
        Ok(x)
    }
}

/// Potentials of a unit current entering at `source` and leaving at the
/// grounded `ground`.
pub fn unit_current_voltages(g: &ResistorGraph, source: usize, ground: usize) -> Result<Vec<f64>> {
    if !g.component(source)[ground] {
        return Err(LadderError::Disconnected);
    }
    g.solve_potentials(source, &[(ground, 0.0)], &[(source, 1.0)])
}

/// `R_eff(a <-> b)`.
pub fn effective_resistance(g: &ResistorGraph, a: Vertex, b: Vertex) -> Result<f64> {
    let (ia, ib) = (g.require(a)?, g.require(b)?);
    if ia == ib {
        return Err(LadderError::Parameter("terminals coincide".into()));
    }
    Ok(unit_current_voltages(g, ia, ib)?[ia])
}

pub fn effective_conductance(g: &ResistorGraph, a: Vertex, b: Vertex) -> Result<f64> {
    effective_resistance(g, a, b).map(|r| 1.0 / r)
}

/// Effective conductance between `a` and a set of vertices held at 0.
pub fn conductance_to_set(g: &ResistorGraph, a: usize, set: &[usize]) -> Result<f64> {
    let comp = g.component(a);
    let targets: Vec<(usize, f64)> = set.iter().filter(|&&s| comp[s]).map(|&s| (s, 0.0)).collect();
    if targets.is_empty() {
        return Err(LadderError::Disconnected);
    }
    let mut fixed = targets;
    fixed.push((a, 1.0));
    let v = g.solve_potentials(a, &fixed, &[])?;
    Ok(g.neighbors(a).iter().map(|&(j, c)| c * (1.0 - v[j])).sum())
}

/// Normalizer `e^lambda + 1 + e^-lambda` of the walk kernel.
pub fn kernel_normalizer(lambda: f64) -> f64 {
    2.0 * lambda.cosh() + 1.0
}

fn require_prereg(w: &WindowConfig, cluster: &[bool], x: i64) -> Result<()> {
    let ok = x > w.x_min() && x < w.x_max() && top_isolated(w, x) && cluster[w.index(Vertex::new(x, 0))];
    if ok {
        Ok(())
    } else {
        Err(LadderError::Precondition(format!(
            "({x},0) is not a pre-regeneration point"
        )))
    }
}

/// `P^v(T_u < T_w)` for the biased walk, for pre-regeneration x-coordinates
/// `u < v < w`, from tilted effective resistances on `[u, w)`.
pub fn hitting_probability_exact(w: &WindowConfig, lambda: f64, u: i64, v: i64, wx: i64) -> Result<f64> {
    if !(u < v && v < wx) {
        return Err(LadderError::Precondition(format!("need u < v < w, got {u}, {v}, {wx}")));
    }
    let cluster = crossing_cluster(w);
    for x in [u, v, wx] {
        require_prereg(w, &cluster, x)?;
    }
    let left = ResistorGraph::from_window(w, u, v, lambda, v)?;
    let right = ResistorGraph::from_window(w, v, wx, lambda, v)?;
    let r_uv = effective_resistance(&left, Vertex::new(u, 0), Vertex::new(v, 0))?;
    let r_vw = effective_resistance(&right, Vertex::new(v, 0), Vertex::new(wx, 0))?;
    Ok(r_vw / (r_uv + r_vw))
}

/// Right-hand side of the uniform bound at finite `lambda` (`r = None` for
/// `R = infinity`).
pub fn hitting_uniform_upper(l: u32, r: Option<u32>, lambda: f64) -> f64 {
    let num = r.map_or(1.0, |r| -(-2.0 * r as f64).exp_m1());
    let denom_tail = 0.5 * (2.0 * (1.0 - lambda) * l as f64).exp_m1() * (-(-lambda).exp_m1()) / (2.0 * lambda).exp_m1();
    num / (num + denom_tail)
}

/// Default small-bias threshold for the closed-form brackets.
pub const DEFAULT_LAMBDA0: f64 = 0.2;

/// Closed-form bracket on `P^v(T_u < T_w)` for spacings `L, R` (in units of
/// `floor(1/lambda)`), with `r = None` meaning `R = infinity`.
///
/// For `(L, R) = (1, infinity)` the upper end is sharpened to 4/10.
pub fn hitting_probability_bounds(l: u32, r: Option<u32>, lambda: f64, lambda0: f64) -> Result<(f64, f64)> {
    if l == 0 || r == Some(0) {
        return Err(LadderError::Parameter("L and R must be positive".into()));
    }
    if !(lambda > 0.0 && lambda <= lambda0) {
        return Err(LadderError::Parameter(format!(
            "lambda = {lambda} outside the small-bias regime (0, {lambda0}]"
        )));
    }
    let l = l as f64;
    let (lower, upper) = match r {
        Some(r) => {
            let r = r as f64;
            let a = -(-r).exp_m1();
            let b = -(-2.0 * r).exp_m1();
            (a / (a + 6.0 * (2.0 * l).exp_m1()), b / (b + l.exp_m1() / 5.0))
        }
        None => (1.0 / (6.0 * (2.0 * l).exp() - 5.0), 5.0 / (4.0 + l.exp())),
    };
    let upper = if l == 1.0 && r.is_none() { upper.min(0.4) } else { upper };
    Ok((lower, upper))
}

/// Limit of the uniform bound at `L = 1`, `R = infinity`, `lambda -> 0`.
pub fn hitting_upper_limit_constant() -> f64 {
    4.0 / (3.0 + std::f64::consts::E.powi(2))
}

/// The environment-uniform lower bound `(1 - e^-lambda)/(e^lambda + 1 + e^-lambda)`.
pub fn escape_lower_bound(lambda: f64) -> f64 {
    -(-lambda).exp_m1() / kernel_normalizer(lambda)
}

/// Escape probability from `v`, with "infinity" replaced by the right end of
/// a window of `truncation` columns on each side of `v`.
#[derive(Debug, Clone, Copy)]
pub struct EscapeEstimate {
    pub value: f64,
    /// Columns used on each side.
    pub truncation: i64,
    /// Upper bound on the conductance neglected beyond the left cut, relative
    /// to the stationary mass at `v`.
    pub truncation_bound: f64,
}

/// Default truncation `ceil(5/lambda)` columns.
pub fn default_truncation(lambda: f64) -> i64 {
    if lambda > 0.0 {
        (5.0 / lambda).ceil() as i64
    } else {
        200
    }
}

pub fn escape_probability_exact(
    w: &WindowConfig,
    lambda: f64,
    v: Vertex,
    truncation: Option<i64>,
) -> Result<EscapeEstimate> {
    if lambda < 0.0 {
        return Err(LadderError::Parameter(format!("lambda = {lambda} < 0")));
    }
    let t = truncation.unwrap_or_else(|| default_truncation(lambda)).max(1);
    let comm = crate::percolation::forwards_mask(w);
    if !w.contains_x(v.x) || !comm[w.index(v)] {
        return Err(LadderError::Precondition(format!(
            "{v:?} is not forwards-communicating"
        )));
    }
    let right = v.x + t;
    if right > w.x_max() {
        return Err(LadderError::Precondition(format!(
            "window ends at {} < {right} needed for truncation",
            w.x_max()
        )));
    }
    let left = (v.x - t).max(w.x_min());
    let g = ResistorGraph::from_window(w, left, right, lambda, v.x)?;
    let iv = g.require(v)?;
    let set: Vec<usize> = (0..2).map(|y| g.len() - 2 + y).collect();
    let c = conductance_to_set(&g, iv, &set)?;
    let mass = kernel_normalizer(lambda);
    // Beyond the left cut at most two parallel edges per column, of
    // conductance e^{lambda(2x+1-2x(v))}.
    let gap = (v.x - left) as f64;
    let neglected = if left > w.x_min() || lambda == 0.0 {
        2.0 * (-2.0 * lambda * gap).exp() / (1.0 - (-2.0 * lambda).exp()).max(1e-300)
    } else {
        0.0
    };
    Ok(EscapeEstimate {
        value: c / mass,
        truncation: t,
        truncation_bound: neglected / mass,
    })
}

/// `r_i = P_i(sigma_i < sigma_0)` for the reflected biased walk on `0..=m`.
pub fn ruin_probability_r(i: u32, m: u32, lambda: f64) -> Result<f64> {
    if m < 2 || i < 1 || i > m {
        return Err(LadderError::Parameter(format!(
            "need 1 <= i <= m, m >= 2 (i={i}, m={m})"
        )));
    }
    if lambda < 0.0 {
        return Err(LadderError::Parameter(format!("lambda = {lambda} < 0")));
    }
    // P_{j}(hit j+1 before 0) = (1 - rho^j)/(1 - rho^(j+1)), rho = e^{-2 lambda}.
    let climb = |j: u32| -> f64 {
        if lambda == 0.0 {
            j as f64 / (j + 1) as f64
        } else {
            (-2.0 * lambda * j as f64).exp_m1() / (-2.0 * lambda * (j + 1) as f64).exp_m1()
        }
    };
    if i == m {
        return Ok(climb(m - 1));
    }
    let q = 1.0 / (1.0 + (-2.0 * lambda).exp());
    Ok(q + (1.0 - q) * climb(i - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::window::{BIT_H_BOTTOM, BIT_H_TOP, BIT_VERTICAL};

    fn v(x: i64, y: u8) -> Vertex {
        Vertex::new(x, y)
    }

    #[test]
    fn single_edge_and_chain() {
        let g = ResistorGraph::new(vec![v(0, 0), v(1, 0)], vec![(0, 1, 1.0)]).unwrap();
        assert!((effective_resistance(&g, v(0, 0), v(1, 0)).unwrap() - 1.0).abs() < 1e-14);
        let w = WindowConfig::from_columns(0, &[BIT_H_BOTTOM; 8], 0.5, false).unwrap();
        let g = ResistorGraph::from_block(&w, 0, 7).unwrap();
        assert!((effective_resistance(&g, v(0, 0), v(7, 0)).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn four_cycle() {
        let w = WindowConfig::from_columns(0, &[BIT_VERTICAL | BIT_H_BOTTOM | BIT_H_TOP, BIT_VERTICAL], 0.5, false)
            .unwrap();
        let g = ResistorGraph::from_block(&w, 0, 1).unwrap();
        let r = effective_resistance(&g, v(0, 0), v(1, 0)).unwrap();
        assert!((r - 0.75).abs() < 1e-14);
    }

    #[test]
    fn disconnected_and_bad_input() {
        let g = ResistorGraph::new(vec![v(0, 0), v(1, 0), v(2, 0)], vec![(0, 1, 1.0)]).unwrap();
        assert_eq!(
            effective_resistance(&g, v(0, 0), v(2, 0)),
            Err(LadderError::Disconnected)
        );
        assert!(ResistorGraph::new(vec![v(0, 0), v(1, 0)], vec![(0, 1, 0.0)]).is_err());
    }

    #[test]
    fn bounds_limits() {
        let (_, up) = hitting_probability_bounds(1, None, 0.1, DEFAULT_LAMBDA0).unwrap();
        assert!((up - 0.4).abs() < 1e-15);
        let (lo, _) = hitting_probability_bounds(2, None, 0.1, DEFAULT_LAMBDA0).unwrap();
        let (lo_big, up_big) = hitting_probability_bounds(2, Some(60), 0.1, DEFAULT_LAMBDA0).unwrap();
        assert!((lo - lo_big).abs() < 1e-12);
        assert!((5.0 / (4.0 + 2f64.exp()) - up_big).abs() < 1e-12);
        assert!((hitting_upper_limit_constant() - 0.3850).abs() < 1e-4);
        assert!((hitting_uniform_upper(1, None, 1e-7) - hitting_upper_limit_constant()).abs() < 1e-6);
        assert!(hitting_probability_bounds(1, Some(1), 0.3, DEFAULT_LAMBDA0).is_err());
    }

    #[test]
    fn symmetric_hitting_on_straight_ladder() {
        // Isolated tops at 0, 4, 8 on an otherwise all-open bottom line.
        let mut cols = vec![BIT_H_BOTTOM | BIT_H_TOP | BIT_VERTICAL; 13];
        for x in [2usize, 6, 10] {
            cols[x] = BIT_H_BOTTOM;
            cols[x - 1] &= !BIT_H_TOP;
        }
        let w = WindowConfig::from_columns(0, &cols, 0.5, true).unwrap();
        let p = hitting_probability_exact(&w, 0.0, 2, 6, 10).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(hitting_probability_exact(&w, 0.0, 2, 5, 10).is_err());
        let p_biased = hitting_probability_exact(&w, 0.3, 2, 6, 10).unwrap();
        assert!(p_biased < 0.5);
    }

    #[test]
    fn ruin_limits_and_monotonicity() {
        for m in 2..=20 {
            let lim = (2 * m - 3) as f64 / (2 * m - 2) as f64;
            assert!((ruin_probability_r(m - 1, m, 1e-4).unwrap() - lim).abs() < 1e-3);
            for &l in &[1e-4, 0.1, 0.5] {
                let r: Vec<f64> = (1..=m).map(|i| ruin_probability_r(i, m, l).unwrap()).collect();
                for i in 1..(m as usize - 1) {
                    assert!(r[i - 1] <= r[i] + 1e-15);
                }
                assert!(r[0] <= r[m as usize - 1] + 1e-15);
                assert!(r[m as usize - 1] <= r[m as usize - 2] + 1e-15);
            }
        }
        assert!(ruin_probability_r(0, 5, 0.1).is_err());
        assert!(ruin_probability_r(6, 5, 0.1).is_err());
    }

    #[test]
    fn escape_zero_bias_vanishes() {
        let w = WindowConfig::from_columns(-2000, &vec![7u8; 4001], 0.5, true).unwrap();
        let near = escape_probability_exact(&w, 0.0, v(0, 0), Some(50)).unwrap().value;
        let far = escape_probability_exact(&w, 0.0, v(0, 0), Some(1000)).unwrap().value;
        assert!(far < near && far < 1e-3);
        let biased = escape_probability_exact(&w, 0.1, v(0, 0), None).unwrap().value;
        assert!(biased >= escape_lower_bound(0.1));
    }
}
