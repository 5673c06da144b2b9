//! Connected components, the crossing cluster and pre-regeneration points.

use std::collections::VecDeque;

use super::window::{Vertex, WindowConfig};

/// Label every vertex with its open-cluster id (dense vertex indexing).
pub fn component_labels(w: &WindowConfig) -> (Vec<u32>, u32) {
    let n = w.nvertices();
    let mut label = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if label[start] != u32::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for u in w.open_neighbors(w.vertex(i)) {
                let j = w.index(u);
                if label[j] == u32::MAX {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    (label, next)
}

/// Membership mask of the union of clusters touching both boundary columns.
pub fn crossing_cluster(w: &WindowConfig) -> Vec<bool> {
    let (label, count) = component_labels(w);
    let mut left = vec![false; count as usize];
    let mut right = vec![false; count as usize];
    let last = w.nvertices() - 2;
    for y in 0..2 {
        left[label[y] as usize] = true;
        right[label[last + y] as usize] = true;
    }
    label.iter().map(|&l| left[l as usize] && right[l as usize]).collect()
}

/// True iff an open path joins column `x_min` to column `x_max`.
pub fn crossing_exists(w: &WindowConfig) -> bool {
    crossing_cluster(w).iter().any(|&c| c)
}

/// `(x,1)` has no open incident edge.
#[inline]
pub fn top_isolated(w: &WindowConfig, x: i64) -> bool {
    !w.vertical(x) && !w.horizontal(x, 1) && !w.horizontal(x - 1, 1)
}

/// Interior `x` whose top vertex is isolated and whose bottom vertex lies on
/// the crossing cluster. Sorted increasingly.
pub fn find_preregeneration_points(w: &WindowConfig) -> Vec<i64> {
    let cluster = crossing_cluster(w);
    prereg_with_cluster(w, &cluster)
}

pub(crate) fn prereg_with_cluster(w: &WindowConfig, cluster: &[bool]) -> Vec<i64> {
    (w.x_min() + 1..w.x_max())
        .filter(|&x| top_isolated(w, x) && cluster[w.index(Vertex::new(x, 0))])
        .collect()
}
