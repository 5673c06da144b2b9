//! Forwards/backwards communication classes, traps and the full cluster
//! decomposition of a window.

use serde::Serialize;

use super::cluster::{crossing_cluster, prereg_with_cluster};
use super::cycles::{extract_cycles_with, Cycle, DEFAULT_MARGIN};
use super::window::{Vertex, WindowConfig};

/// Vertices of the crossing cluster that reach the right boundary column
/// along a path never going left of their own column.
pub fn forwards_mask(w: &WindowConfig) -> Vec<bool> {
    let cluster = crossing_cluster(w);
    forwards_with_cluster(w, &cluster)
}

fn forwards_with_cluster(w: &WindowConfig, cluster: &[bool]) -> Vec<bool> {
    let n = w.nvertices();
    let mut f = vec![false; n];
    f[n - 2] = true;
    f[n - 1] = true;
    for x in (w.x_min()..w.x_max()).rev() {
        let i = w.index(Vertex::new(x, 0));
        let (r0, r1) = (f[i + 2], f[i + 3]);
        let d0 = w.horizontal(x, 0) && r0;
        let d1 = w.horizontal(x, 1) && r1;
        let rung = w.vertical(x);
        f[i] = d0 || (rung && d1);
        f[i + 1] = d1 || (rung && d0);
    }
    for (fi, &c) in f.iter_mut().zip(cluster) {
        *fi &= c;
    }
    f
}

/// Mirror image of [`forwards_mask`]: reach the left boundary column without
/// going right of the own column.
pub fn backwards_mask(w: &WindowConfig) -> Vec<bool> {
    let cluster = crossing_cluster(w);
    backwards_with_cluster(w, &cluster)
}

fn backwards_with_cluster(w: &WindowConfig, cluster: &[bool]) -> Vec<bool> {
    let n = w.nvertices();
    let mut b = vec![false; n];
    b[0] = true;
    b[1] = true;
    for x in w.x_min() + 1..=w.x_max() {
        let i = w.index(Vertex::new(x, 0));
        let (l0, l1) = (b[i - 2], b[i - 1]);
        let d0 = w.horizontal(x - 1, 0) && l0;
        let d1 = w.horizontal(x - 1, 1) && l1;
        let rung = w.vertical(x);
        b[i] = d0 || (rung && d1);
        b[i + 1] = d1 || (rung && d0);
    }
    for (bi, &c) in b.iter_mut().zip(cluster) {
        *bi &= c;
    }
    b
}

/// A connected set of cluster vertices off the forwards-communicating set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trap {
    pub x_lo: i64,
    pub x_hi: i64,
    pub size: usize,
}

impl Trap {
    /// x-extent `x_hi - x_lo + 1`.
    pub fn length(&self) -> u32 {
        (self.x_hi - self.x_lo + 1) as u32
    }
}

fn find_traps(w: &WindowConfig, cluster: &[bool], forwards: &[bool]) -> Vec<Trap> {
    let n = w.nvertices();
    let in_trap: Vec<bool> = (0..n).map(|i| cluster[i] && !forwards[i]).collect();
    let mut seen = vec![false; n];
    let mut traps = Vec::new();
    let mut stack = Vec::new();
    for s in 0..n {
        if !in_trap[s] || seen[s] {
            continue;
        }
        seen[s] = true;
        stack.push(s);
        let mut t = Trap {
            x_lo: i64::MAX,
            x_hi: i64::MIN,
            size: 0,
        };
        while let Some(i) = stack.pop() {
            let v = w.vertex(i);
            t.x_lo = t.x_lo.min(v.x);
            t.x_hi = t.x_hi.max(v.x);
            t.size += 1;
            for u in w.open_neighbors(v) {
                let j = w.index(u);
                if in_trap[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        traps.push(t);
    }
    traps.sort_by_key(|t| (t.x_lo, t.x_hi));
    traps
}

/// Per-column backwards-communication state, bottom bit first:
/// `"10"` = only `(x,0)`, `"01"` = only `(x,1)`, `"11"` = both.
pub fn t_states(w: &WindowConfig, backwards: &[bool]) -> Vec<String> {
    (w.x_min()..=w.x_max())
        .map(|x| {
            let i = w.index(Vertex::new(x, 0));
            format!("{}{}", u8::from(backwards[i]), u8::from(backwards[i + 1]))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClusterDecomposition {
    pub prereg_xs: Vec<i64>,
    pub cycles: Vec<Cycle>,
    /// Left endpoint of each entry of `cycles`.
    pub cycle_starts: Vec<i64>,
    pub cluster_mask: Vec<bool>,
    pub backbone_mask: Vec<bool>,
    pub backwards_mask: Vec<bool>,
    pub traps: Vec<Trap>,
    pub t_states: Vec<String>,
}

impl ClusterDecomposition {
    pub fn trap_lengths(&self) -> Vec<u32> {
        self.traps.iter().map(Trap::length).collect()
    }
}

/// Decompose a window with the default cycle margin.
pub fn classify_communication(w: &WindowConfig) -> ClusterDecomposition {
    decompose(w, DEFAULT_MARGIN)
}

pub fn decompose(w: &WindowConfig, margin: i64) -> ClusterDecomposition {
    let cluster = crossing_cluster(w);
    let prereg_xs = prereg_with_cluster(w, &cluster);
    let forwards = forwards_with_cluster(w, &cluster);
    let backwards = backwards_with_cluster(w, &cluster);
    let traps = find_traps(w, &cluster, &forwards);
    let (cycle_starts, cycles) = extract_cycles_with(w, &prereg_xs, margin).into_iter().unzip();
    ClusterDecomposition {
        t_states: t_states(w, &backwards),
        prereg_xs,
        cycles,
        cycle_starts,
        cluster_mask: cluster,
        backbone_mask: forwards,
        backwards_mask: backwards,
        traps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::sampler::sample_window_conditioned;
    use crate::rng::stream_rng;

    #[test]
    fn straight_double_line() {
        let w = WindowConfig::from_columns(0, &[7; 12], 0.5, true).unwrap();
        let d = classify_communication(&w);
        assert!(d.backbone_mask.iter().all(|&b| b));
        assert!(d.backwards_mask.iter().all(|&b| b));
        assert!(d.traps.is_empty());
    }

    #[test]
    fn peninsula_of_length_three() {
        // Bottom line 0..=9, rung at 2, top path (2,1)-(5,1) dead-ending.
        let text = "ladder-window v1 0 9 0.5 1\n\
                    0 0 1 0\n1 0 1 0\n2 1 1 1\n3 0 1 1\n4 0 1 1\n\
                    5 0 1 0\n6 0 1 0\n7 0 1 0\n8 0 1 0\n9 0 0 0\n";
        let w = WindowConfig::from_text(text).unwrap();
        let d = classify_communication(&w);
        assert_eq!(d.trap_lengths(), vec![3]);
        assert!(d.backbone_mask[w.index(Vertex::new(2, 1))]);
        assert!(!d.backbone_mask[w.index(Vertex::new(3, 1))]);
    }

    #[test]
    fn t_state_never_empty_inside_conditioned_windows() {
        let mut rng = stream_rng(11, 0);
        for &p in &[0.3, 0.5, 0.7] {
            for _ in 0..200 {
                let w = sample_window_conditioned(p, 30, 30, &mut rng).unwrap();
                let d = classify_communication(&w);
                assert!(d.t_states.iter().all(|s| s != "00"));
                for &x in &d.prereg_xs {
                    assert!(d.backbone_mask[w.index(Vertex::new(x, 0))]);
                }
            }
        }
    }
}
