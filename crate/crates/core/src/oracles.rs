//! Slow, independent reference computations used to cross-check the
//! production code: dense linear algebra, path enumeration, finite
//! differences.

use std::collections::{BTreeMap, VecDeque};

use crate::electrical::ResistorGraph;
use crate::error::{LadderError, Result};
use crate::percolation::{Vertex, WindowConfig};
use crate::walk::{kernel_prob, log_kernel_ratio, transition_row};

pub use crate::percolation::{enumerate_conditioned_distribution, sample_window_rejection};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-300 {
            return Err(LadderError::Singular(a[piv][col]));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Effective resistance from the full dense Laplacian, grounded at `b`,
/// restricted to the component of `a`.
pub fn dense_effective_resistance(g: &ResistorGraph, a: Vertex, b: Vertex) -> Result<f64> {
    let ia = g
        .index_of(a)
        .ok_or_else(|| LadderError::Precondition(format!("{a:?} not in graph")))?;
    let ib = g
        .index_of(b)
        .ok_or_else(|| LadderError::Precondition(format!("{b:?} not in graph")))?;
    let comp = g.component(ia);
    if !comp[ib] {
        return Err(LadderError::Disconnected);
    }
    let keep: Vec<usize> = (0..g.len()).filter(|&i| comp[i] && i != ib).collect();
    let mut pos = vec![usize::MAX; g.len()];
    for (k, &i) in keep.iter().enumerate() {
        pos[i] = k;
    }
    let m = keep.len();
    let mut lap = vec![vec![0.0; m]; m];
    for &(i, j, c) in g.edges() {
        for (s, t) in [(i, j), (j, i)] {
            if pos[s] != usize::MAX {
                lap[pos[s]][pos[s]] += c;
                if pos[t] != usize::MAX {
                    lap[pos[s]][pos[t]] -= c;
                }
            }
        }
    }
    let mut rhs = vec![0.0; m];
    rhs[pos[ia]] = 1.0;
    let v = dense_solve(lap, rhs)?;
    Ok(v[pos[ia]])
}

/// `r_i` by a first-step linear solve for the walk on `0..=m` that steps up
/// with probability `e^lambda/(e^lambda + e^-lambda)` and is pushed back
/// from `m`.
pub fn ruin_by_linear_solve(i: u32, m: u32, lambda: f64) -> Result<f64> {
    if m < 2 || i < 1 || i > m {
        return Err(LadderError::Parameter(format!(
            "need 1 <= i <= m, m >= 2 (i={i}, m={m})"
        )));
    }
    let q = lambda.exp() / (lambda.exp() + (-lambda).exp());
    // h(j) = P_j(hit i before 0) for j = 1..i-1.
    let k = (i - 1) as usize;
    let h_below = if k == 0 {
        0.0
    } else {
        let mut a = vec![vec![0.0; k]; k];
        let mut b = vec![0.0; k];
        for r in 0..k {
            a[r][r] = 1.0;
            if r + 1 < k {
                a[r][r + 1] = -q;
            } else {
                b[r] = q;
            }
            if r > 0 {
                a[r][r - 1] = -(1.0 - q);
            }
        }
        dense_solve(a, b)?[k - 1]
    };
    Ok(if i == m { h_below } else { q + (1.0 - q) * h_below })
}

/// `P^v(T_u < T_w)` for the lazy biased walk itself, by a dense solve of the
/// first-step equations on the component of `(v,0)` in columns `[u, w]`.
pub fn hitting_by_chain(w: &WindowConfig, lambda: f64, u: i64, v: i64, wx: i64) -> Result<f64> {
    let start = Vertex::new(v, 0);
    let (lo, hi) = (Vertex::new(u, 0), Vertex::new(wx, 0));
    let mut states = vec![start];
    let mut index = BTreeMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        if s == lo || s == hi {
            continue;
        }
        for t in w.open_neighbors(s) {
            if t.x < u || t.x > wx || index.contains_key(&t) {
                continue;
            }
            index.insert(t, states.len());
            states.push(t);
            queue.push_back(t);
        }
    }
    let n = states.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (r, &s) in states.iter().enumerate() {
        a[r][r] = 1.0;
        if s == lo {
            b[r] = 1.0;
            continue;
        }
        if s == hi {
            continue;
        }
        for (t, p) in transition_row(w, lambda, s)? {
            let c = *index
                .get(&t)
                .ok_or_else(|| LadderError::Precondition(format!("{t:?} escapes")))?;
            a[r][c] -= p;
        }
    }
    if !index.contains_key(&lo) || !index.contains_key(&hi) {
        return Err(LadderError::Disconnected);
    }
    Ok(dense_solve(a, b)?[0])
}

/// Exact law of `Y_n` under the biased kernel, by propagating the
/// distribution.
pub fn biased_distribution(w: &WindowConfig, lambda: f64, start: Vertex, n: usize) -> Result<BTreeMap<Vertex, f64>> {
    let mut dist = BTreeMap::from([(start, 1.0)]);
    for _ in 0..n {
        let mut next = BTreeMap::new();
        for (&s, &p) in &dist {
            for (t, q) in transition_row(w, lambda, s)? {
                *next.entry(t).or_insert(0.0) += p * q;
            }
        }
        dist = next;
    }
    Ok(dist)
}

/// Law of `Y_n` under the biased kernel, obtained by enumerating every
/// unbiased path of length `n` and weighting it by its likelihood ratio.
pub fn girsanov_enumeration(w: &WindowConfig, lambda: f64, start: Vertex, n: usize) -> Result<BTreeMap<Vertex, f64>> {
    fn walk(
        w: &WindowConfig,
        lambda: f64,
        v: Vertex,
        left: usize,
        p0: f64,
        logw: f64,
        out: &mut BTreeMap<Vertex, f64>,
    ) -> Result<()> {
        if left == 0 {
            *out.entry(v).or_insert(0.0) += p0 * logw.exp();
            return Ok(());
        }
        for (t, p) in transition_row(w, 0.0, v)? {
            let l = log_kernel_ratio(w, lambda, v, t)?;
            walk(w, lambda, t, left - 1, p0 * p, logw + l, out)?;
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(w, lambda, start, n, 1.0, 0.0, &mut out)?;
    Ok(out)
}

/// Central finite differences of `log p_lambda(v,w)` at `lambda = 0`:
/// `(first derivative, p''/p)`.
pub fn finite_difference_log_kernel(w: &WindowConfig, v: Vertex, t: Vertex, h: f64) -> (f64, f64) {
    let p = |l: f64| kernel_prob(w, l, v, t);
    let (pm, p0, pp) = (p(-h), p(0.0), p(h));
    ((pp.ln() - pm.ln()) / (2.0 * h), (pp - 2.0 * p0 + pm) / (h * h) / p0)
}
