//! Audit criteria for a single counterfactual.
//!
//! * [`proximity`]: distance from `e` to its nearest same-class instance
//!   `a0`, relative to the distance from `a0` to its own nearest
//!   same-class instance (a k=1 local outlier factor).
//! * [`connectedness`]: whether `e` falls in a DBSCAN cluster (strict
//!   `eps`, `min_pts = 2`) together with some same-class instance, i.e.
//!   whether an ε-chain through same-class instances reaches `e`.
//! * [`stability`]: the largest ratio `|E(x) - E(x_j)|_2 / |x - x_j|_2`
//!   over dataset points `x_j` in the open ball of radius `eps` around `x`.
//!
//! "Same-class" data is X^l for l = f(e): training instances of class l
//! that the classifier also predicts as l.

use serde::{Deserialize, Serialize};

use crate::dataset::{l2, Dataset, DistanceMetric, FeatureVector};
use crate::error::{Error, Result};
use crate::neighbors::{dbscan, DbscanParams, NeighborIndex};

/// Added to the largest nearest-neighbor distance so the strict `<`
/// comparison still admits that neighbor.
pub const EPSILON_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityScore {
    pub value: f64,
    /// Index of a0 within the same-class data.
    pub a0_index: usize,
    pub numerator: f64,
    pub denominator: f64,
}

/// Proximity of `e` to `same_class_data`.
///
/// Instances coinciding with `a0` are skipped when looking for the
/// denominator's neighbor, so duplicated points cannot make it zero.
pub fn proximity(e: &FeatureVector, same_class_data: &Dataset, metric: DistanceMetric) -> Result<ProximityScore> {
    if same_class_data.len() < 2 {
        return Err(Error::TooFewInstances {
            required: 2,
            found: same_class_data.len(),
        });
    }
    let idx = NeighborIndex::new(same_class_data.features().cloned().collect(), metric);
    let (a0, numerator) = idx.nearest(e, None)?;
    let a0_point = &idx.points()[a0];
    let (_, denominator) = idx
        .nearest_where(a0_point, |i| i != a0 && metric.eval(&idx.points()[i], a0_point) > 0.0)
        .map_err(|_| Error::InvalidParameter("all same-class instances coincide; proximity undefined".into()))?;
    Ok(ProximityScore {
        value: numerator / denominator,
        a0_index: a0,
        numerator,
        denominator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectednessResult {
    pub connected: bool,
    pub eps: f64,
    /// DBSCAN cluster of `e`; `None` when `e` is noise.
    pub cluster_id: Option<usize>,
    /// Nearest same-class instance sharing e's cluster (index into the
    /// same-class data).
    pub anchor_index: Option<usize>,
}

pub fn connectedness(
    e: &FeatureVector,
    same_class_data: &Dataset,
    eps: f64,
    metric: DistanceMetric,
) -> Result<ConnectednessResult> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    let mut points = Vec::with_capacity(same_class_data.len() + 1);
    points.push(e.clone());
    points.extend(same_class_data.features().cloned());
    let labels = dbscan(&points, DbscanParams { eps, min_pts: 2 }, metric);
    let cluster_id = labels.cluster[0];
    let anchor_index = cluster_id.and_then(|c| {
        (1..points.len())
            .filter(|&i| labels.cluster[i] == Some(c))
            .map(|i| (i - 1, metric.eval(e, &points[i])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
    });
    Ok(ConnectednessResult {
        connected: anchor_index.is_some(),
        eps,
        cluster_id,
        anchor_index,
    })
}

/// Smallest eps leaving no instance of `same_class_data` isolated: the
/// largest nearest-neighbor distance plus [`EPSILON_MARGIN`].
pub fn default_epsilon(same_class_data: &Dataset, metric: DistanceMetric) -> Result<f64> {
    if same_class_data.len() < 2 {
        return Err(Error::TooFewInstances {
            required: 2,
            found: same_class_data.len(),
        });
    }
    let idx = NeighborIndex::new(same_class_data.features().cloned().collect(), metric);
    let mut worst = 0.0f64;
    for (i, p) in idx.points().iter().enumerate() {
        worst = worst.max(idx.nearest(p, Some(i))?.1);
    }
    Ok(worst + EPSILON_MARGIN)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonPolicy {
    Fixed(f64),
    /// [`default_epsilon`] over the counterfactual's class data.
    AutoPerClass,
}

impl EpsilonPolicy {
    pub fn resolve(&self, same_class_data: &Dataset, metric: DistanceMetric) -> Result<f64> {
        match *self {
            EpsilonPolicy::Fixed(eps) if eps > 0.0 => Ok(eps),
            EpsilonPolicy::Fixed(eps) => Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}"))),
            EpsilonPolicy::AutoPerClass => default_epsilon(same_class_data, metric),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityScore {
    pub value: f64,
    /// Index into `data` of the maximizing neighbor.
    pub witness_index: usize,
    /// Neighbors in the ball (excluding points equal to x).
    pub n_neighbors: usize,
    /// Neighbors skipped because the explainer failed on them.
    pub n_failed: usize,
}

/// Stability of `explain` around `x`, in L2.
///
/// Neighbors are the points of `data` with `0 < |x - x_j|_2 < eps`. If the
/// explainer fails on `x` the error is returned; failures on neighbors are
/// skipped and counted.
pub fn stability<E>(x: &FeatureVector, data: &Dataset, eps: f64, explain: E) -> Result<StabilityScore>
where
    E: Fn(&FeatureVector) -> Result<FeatureVector>,
{
    let neighbors: Vec<(usize, &FeatureVector, f64)> = data
        .features()
        .enumerate()
        .map(|(j, xj)| (j, xj, l2(x, xj)))
        .filter(|&(_, _, d)| d > 0.0 && d < eps)
        .collect();
    if neighbors.is_empty() {
        return Err(Error::StabilityUndefined { eps });
    }
    let ex = explain(x)?;
    let mut best: Option<(f64, usize)> = None;
    let mut n_failed = 0;
    for &(j, xj, d) in &neighbors {
        match explain(xj) {
            Ok(exj) => {
                let ratio = l2(&ex, &exj) / d;
                if best.is_none_or(|(b, _)| ratio > b) {
                    best = Some((ratio, j));
                }
            }
            Err(_) => n_failed += 1,
        }
    }
    let (value, witness_index) = best.ok_or(Error::AllNeighborsFailed {
        n_neighbors: neighbors.len(),
    })?;
    Ok(StabilityScore {
        value,
        witness_index,
        n_neighbors: neighbors.len(),
        n_failed,
    })
}
