//! Exact nearest-neighbor queries, strict ε-neighborhood graphs and DBSCAN.
//!
//! Neighborhood membership is strict everywhere in this module:
//! `q` is in the ε-neighborhood of `p` iff `d(p, q) < eps`. This is the
//! inequality used by ε-chains; classic DBSCAN uses `<=`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::{DistanceMetric, FeatureVector};
use crate::error::{Error, Result};

/// Exhaustive-scan index over an immutable point set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<FeatureVector>,
    metric: DistanceMetric,
}

impl NeighborIndex {
    pub fn new(points: Vec<FeatureVector>, metric: DistanceMetric) -> Self {
        NeighborIndex { points, metric }
    }

    pub fn points(&self) -> &[FeatureVector] {
        &self.points
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest stored point to `q`, skipping `exclude` if given. Ties go to
    /// the lowest index.
    pub fn nearest(&self, q: &[f64], exclude: Option<usize>) -> Result<(usize, f64)> {
        self.nearest_where(q, |i| Some(i) != exclude)
    }

    /// Nearest stored point among those accepted by `keep`.
    pub fn nearest_where(&self, q: &[f64], keep: impl Fn(usize) -> bool) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            if !keep(i) {
                continue;
            }
            if p.dim() != q.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.dim(),
                    got: q.len(),
                });
            }
            let d = self.metric.eval(p, q);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.ok_or(Error::EmptyIndex)
    }

    /// Indices of points with `d(p, q) < eps`, ascending.
    pub fn within(&self, q: &[f64], eps: f64) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| self.metric.eval(p, q) < eps)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn nearest_neighbor(q: &FeatureVector, idx: &NeighborIndex, exclude: Option<usize>) -> Result<(usize, f64)> {
    idx.nearest(q, exclude)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

/// Cluster assignment; `None` is noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanLabeling {
    pub cluster: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl DbscanLabeling {
    pub fn is_noise(&self, i: usize) -> bool {
        self.cluster[i].is_none()
    }

    /// Cluster id as a signed integer, `-1` for noise.
    pub fn signed(&self, i: usize) -> i64 {
        self.cluster[i].map_or(-1, |c| c as i64)
    }
}

/// Density clustering with strict ε-neighborhoods. A point is core when at
/// least `min_pts` points (itself included) lie within `eps`. Clusters are
/// opened in index order, so a border point reachable from several clusters
/// joins the lowest id.
pub fn dbscan(points: &[FeatureVector], params: DbscanParams, metric: DistanceMetric) -> DbscanLabeling {
    let n = points.len();
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| metric.eval(&points[i], &points[j]) < params.eps)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut cluster = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if cluster[start].is_some() || !is_core[start] {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        cluster[start] = Some(id);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighborhoods[p] {
                if cluster[q].is_none() {
                    cluster[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
    }
    DbscanLabeling { cluster, n_clusters }
}

/// Connected components of the graph linking points at distance `< eps`.
/// Component ids are assigned in order of each component's lowest index.
pub fn epsilon_components(points: &[FeatureVector], eps: f64, metric: DistanceMetric) -> Vec<usize> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if metric.eval(&points[i], &points[j]) < eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        out.push(ids[r]);
    }
    out
}

/// A finite point sequence with consecutive distances strictly below `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonChain {
    points: Vec<FeatureVector>,
    eps: f64,
}

impl EpsilonChain {
    pub fn new(points: Vec<FeatureVector>, eps: f64, metric: DistanceMetric) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("an ε-chain needs at least one point".into()));
        }
        if let Some(w) = points.windows(2).find(|w| metric.eval(&w[0], &w[1]) >= eps) {
            return Err(Error::InvalidParameter(format!(
                "consecutive chain points are {} apart, not below eps={eps}",
                metric.eval(&w[0], &w[1])
            )));
        }
        Ok(EpsilonChain { points, eps })
    }

    pub fn points(&self) -> &[FeatureVector] {
        &self.points
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of hops.
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 1
    }
}

/// Fewest-hop ε-chain from `points[from]` to `points[to]` through the given
/// points, or `None` when they lie in different components.
pub fn shortest_chain(
    points: &[FeatureVector],
    from: usize,
    to: usize,
    eps: f64,
    metric: DistanceMetric,
) -> Option<EpsilonChain> {
    let n = points.len();
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(p) = queue.pop_front() {
        if p == to {
            let mut path = vec![to];
            let mut cur = to;
            while cur != from {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            let pts = path.into_iter().map(|i| points[i].clone()).collect();
            return Some(EpsilonChain { points: pts, eps });
        }
        for q in 0..n {
            if !seen[q] && metric.eval(&points[p], &points[q]) < eps {
                seen[q] = true;
                prev[q] = p;
                queue.push_back(q);
            }
        }
    }
    None
}
