//! Black-box classifiers.
//!
//! Everything downstream (generators, diagnostics) only sees the
//! [`Classifier`] trait: a label and a per-class score vector for any point.
//! Two trainable models are provided: a one-vs-rest RBF-kernel SVM trained
//! with a pairwise dual solver, and a k-nearest-neighbor vote.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Dataset, DistanceMetric};
use crate::error::{Error, Result};

/// A trained model seen only through its input/output behavior.
///
/// `predict` must agree with the argmax of `class_scores` (lowest class id
/// on ties); the provided default does exactly that. Inputs are assumed to
/// have `n_features()` entries; use [`predict`] / [`class_scores`] for a
/// checked call.
pub trait Classifier: Send + Sync {
    fn n_features(&self) -> usize;

    fn n_classes(&self) -> usize;

    fn class_scores(&self, x: &[f64]) -> ClassScores;

    fn predict(&self, x: &[f64]) -> ClassLabel {
        self.class_scores(x).argmax()
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn class_scores(&self, x: &[f64]) -> ClassScores {
        (**self).class_scores(x)
    }
    fn predict(&self, x: &[f64]) -> ClassLabel {
        (**self).predict(x)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn class_scores(&self, x: &[f64]) -> ClassScores {
        (**self).class_scores(x)
    }
    fn predict(&self, x: &[f64]) -> ClassLabel {
        (**self).predict(x)
    }
}

fn check_dim(f: &dyn Classifier, x: &[f64]) -> Result<()> {
    if x.len() != f.n_features() {
        return Err(Error::DimensionMismatch {
            expected: f.n_features(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn class_scores(f: &dyn Classifier, x: &[f64]) -> Result<ClassScores> {
    check_dim(f, x)?;
    Ok(f.class_scores(x))
}

pub fn predict(f: &dyn Classifier, x: &[f64]) -> Result<ClassLabel> {
    check_dim(f, x)?;
    Ok(f.predict(x))
}

/// Per-class scores in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassScores(Vec<f64>);

impl ClassScores {
    /// Softmax of raw decision values. Order is preserved: a larger
    /// decision value never gets a smaller score.
    pub fn from_decision_values(values: &[f64]) -> Self {
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        ClassScores(exp.into_iter().map(|e| e / sum).collect())
    }

    /// Normalizes nonnegative weights (e.g. vote counts) to sum to 1.
    pub fn from_probabilities(weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        assert!(sum > 0.0, "score weights must have positive mass");
        ClassScores(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn get(&self, l: ClassLabel) -> f64 {
        self.0[l.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Highest-scoring class, lowest id on ties.
    pub fn argmax(&self) -> ClassLabel {
        let mut best = 0;
        for (i, &s) in self.0.iter().enumerate().skip(1) {
            if s > self.0[best] {
                best = i;
            }
        }
        ClassLabel(best)
    }

    /// Highest score among classes other than `l`, with its class.
    pub fn best_other(&self, l: ClassLabel) -> (ClassLabel, f64) {
        let mut best: Option<(ClassLabel, f64)> = None;
        for (i, &s) in self.0.iter().enumerate() {
            if i == l.0 {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((ClassLabel(i), s));
            }
        }
        best.expect("at least two classes")
    }
}

pub fn accuracy(f: &dyn Classifier, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = d
        .instances()
        .iter()
        .filter(|i| f.predict(&i.features) == i.label)
        .count();
    Ok(hits as f64 / d.len() as f64)
}

// ---------------------------------------------------------------------------
// RBF SVM

/// Kernel width. `Auto` resolves to `1 / (n_features * var(all feature
/// values))` over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "GammaRepr", into = "GammaRepr")]
pub enum Gamma {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Value(f64),
    Keyword(String),
}

impl TryFrom<GammaRepr> for Gamma {
    type Error = String;

    fn try_from(r: GammaRepr) -> Result<Self, String> {
        match r {
            GammaRepr::Value(v) => Ok(Gamma::Fixed(v)),
            GammaRepr::Keyword(s) if s == "auto" => Ok(Gamma::Auto),
            GammaRepr::Keyword(s) => Err(format!("gamma must be a number or \"auto\", got {s:?}")),
        }
    }
}

impl From<Gamma> for GammaRepr {
    fn from(g: Gamma) -> Self {
        match g {
            Gamma::Auto => GammaRepr::Keyword("auto".into()),
            Gamma::Fixed(v) => GammaRepr::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbfSvmConfig {
    pub c: f64,
    pub gamma: Gamma,
    pub kkt_tolerance: f64,
    /// Iteration budget in units of the training-set size: at most
    /// `max_passes * n` pair updates per binary machine.
    pub max_passes: usize,
    /// Seeds the random choice among equally violating second indices.
    pub seed: u64,
}

impl Default for RbfSvmConfig {
    fn default() -> Self {
        RbfSvmConfig {
            c: 1.0,
            gamma: Gamma::Auto,
            kkt_tolerance: 1e-3,
            max_passes: 200,
            seed: 0,
        }
    }
}

impl RbfSvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("c must be > 0, got {}", self.c)));
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("gamma must be > 0, got {g}")));
            }
        }
        if !(self.kkt_tolerance.is_finite() && self.kkt_tolerance > 0.0) {
            return Err(Error::InvalidParameter("kkt_tolerance must be > 0".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidParameter("max_passes must be > 0".into()));
        }
        Ok(())
    }
}

/// `1 / (n_features * population variance of every training feature value)`.
pub fn auto_gamma(train: &Dataset) -> f64 {
    let vals: Vec<f64> = train.features().flat_map(|f| f.iter().copied()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (train.dim() as f64 * var)
    } else {
        1.0
    }
}

#[inline]
pub fn rbf_kernel(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * sq).exp()
}

/// One soft-margin kernel machine: `sum_i coef_i K(sv_i, x) + bias`, where
/// `coef_i = alpha_i * y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

impl BinarySvm {
    pub fn decision_value(&self, gamma: f64, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * rbf_kernel(gamma, sv, x))
            .sum::<f64>()
            + self.bias
    }
}

/// Solver state for one binary machine, kept for inspection after training.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTrainingReport {
    /// Dual coefficient of every training instance, support vector or not.
    pub alphas: Vec<f64>,
    /// +1 for the machine's class, -1 for the rest.
    pub targets: Vec<f64>,
    /// Decision values on the training set, maintained incrementally by the
    /// solver's gradient updates.
    pub cached_decision_values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub machines: Vec<BinaryTrainingReport>,
    pub c: f64,
}

/// One-vs-rest RBF SVM. Serializes to the documented model JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSvm {
    pub gamma: f64,
    pub n_features: usize,
    pub class_names: Vec<String>,
    /// One machine per class, in class-id order.
    pub machines: Vec<BinarySvm>,
    /// False if any machine stopped at the iteration budget.
    pub converged: bool,
    #[serde(skip)]
    report: Option<TrainingReport>,
}

impl RbfSvm {
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        self.machines.iter().map(|m| m.decision_value(self.gamma, x)).collect()
    }

    /// Solver internals; absent on models loaded from JSON.
    pub fn training_report(&self) -> Option<&TrainingReport> {
        self.report.as_ref()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl Classifier for RbfSvm {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.machines.len()
    }

    fn class_scores(&self, x: &[f64]) -> ClassScores {
        ClassScores::from_decision_values(&self.decision_values(x))
    }
}

pub fn train_rbf_svm(train: &Dataset, cfg: &RbfSvmConfig) -> Result<RbfSvm> {
    cfg.validate()?;
    let present = train.distinct_labels();
    if present < 2 {
        return Err(Error::TooFewClasses {
            required: 2,
            found: present,
        });
    }
    let gamma = match cfg.gamma {
        Gamma::Auto => auto_gamma(train),
        Gamma::Fixed(g) => g,
    };
    let points: Vec<&[f64]> = train.features().map(|f| f.as_slice()).collect();
    let n = points.len();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = rbf_kernel(gamma, points[i], points[j]);
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }
    let labels: Vec<ClassLabel> = train.labels().collect();

    let results: Vec<(BinarySvm, BinaryTrainingReport)> = (0..train.n_classes())
        .into_par_iter()
        .map(|class| {
            let targets: Vec<f64> = labels
                .iter()
                .map(|l| if l.0 == class { 1.0 } else { -1.0 })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let sol = solve_dual(&kernel, &targets, cfg.c, cfg.kkt_tolerance, cfg.max_passes * n.max(1), &mut rng);
            let mut support_vectors = Vec::new();
            let mut coefficients = Vec::new();
            for i in 0..n {
                if sol.alphas[i] > 0.0 {
                    support_vectors.push(points[i].to_vec());
                    coefficients.push(sol.alphas[i] * targets[i]);
                }
            }
            let cached_decision_values = (0..n)
                .map(|i| targets[i] * (sol.gradient[i] + 1.0) + sol.bias)
                .collect();
            (
                BinarySvm {
                    support_vectors,
                    coefficients,
                    bias: sol.bias,
                },
                BinaryTrainingReport {
                    alphas: sol.alphas,
                    targets,
                    cached_decision_values,
                    iterations: sol.iterations,
                    converged: sol.converged,
                },
            )
        })
        .collect();

    let converged = results.iter().all(|(_, r)| r.converged);
    let (machines, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(RbfSvm {
        gamma,
        n_features: train.dim(),
        class_names: train.class_names().to_vec(),
        machines,
        converged,
        report: Some(TrainingReport {
            machines: reports,
            c: cfg.c,
        }),
    })
}

struct DualSolution {
    alphas: Vec<f64>,
    /// Gradient of `1/2 a'Qa - e'a`, with `Q_ij = y_i y_j K_ij`.
    gradient: Vec<f64>,
    bias: f64,
    iterations: usize,
    converged: bool,
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Pairwise dual coordinate ascent on the soft-margin SVM dual, picking the
/// maximal KKT-violating pair at each step.
///
/// With `v_t = -y_t G_t`, the up set holds indices whose alpha can move in
/// the +y direction, the low set those that can move in -y. The solver stops
/// once `max_up v - min_low v <= tol`.
fn solve_dual(
    kernel: &[f64],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> DualSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    let mut ties = Vec::new();
    loop {
        let mut i = usize::MAX;
        let mut m = f64::NEG_INFINITY;
        let mut big_m = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m {
                m = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < big_m {
                big_m = v;
            }
        }
        if i == usize::MAX || !big_m.is_finite() || m - big_m <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        ties.clear();
        ties.extend((0..n).filter(|&t| in_low(alpha[t], y[t]) && -y[t] * grad[t] - big_m <= TIE_TOLERANCE));
        let j = if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.random_range(0..ties.len())]
        };

        // Move alpha_i by +y_i t and alpha_j by -y_j t, keeping sum(y alpha).
        let eta = (kernel[i * n + i] + kernel[j * n + j] - 2.0 * kernel[i * n + j]).max(1e-12);
        let mut t = (m - -y[j] * grad[j]) / eta;
        let cap_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let cap_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        t = t.min(cap_i).min(cap_j);

        alpha[i] = clamp_box(alpha[i] + y[i] * t, c);
        alpha[j] = clamp_box(alpha[j] - y[j] * t, c);
        for k in 0..n {
            grad[k] += y[k] * t * (kernel[k * n + i] - kernel[k * n + j]);
        }
        iterations += 1;
    }

    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut up_max = f64::NEG_INFINITY;
    let mut low_min = f64::INFINITY;
    for t in 0..n {
        let v = -y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_count += 1;
        }
        if in_up(alpha[t], y[t]) {
            up_max = up_max.max(v);
        }
        if in_low(alpha[t], y[t]) {
            low_min = low_min.min(v);
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else if up_max.is_finite() && low_min.is_finite() {
        (up_max + low_min) / 2.0
    } else if up_max.is_finite() {
        up_max
    } else {
        low_min
    };
    DualSolution {
        alphas: alpha,
        gradient: grad,
        bias,
        iterations,
        converged,
    }
}

fn clamp_box(a: f64, c: f64) -> f64 {
    if a < 1e-15 {
        0.0
    } else if a > c - 1e-15 * c.max(1.0) {
        c
    } else {
        a
    }
}

// ---------------------------------------------------------------------------
// k-NN

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: DistanceMetric,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 5,
            metric: DistanceMetric::L2,
        }
    }
}

/// Majority vote over the k nearest training instances. Scores are vote
/// fractions; equal distances are broken by lower training index.
#[derive(Debug, Clone)]
pub struct Knn {
    points: Vec<Vec<f64>>,
    labels: Vec<ClassLabel>,
    n_classes: usize,
    k: usize,
    metric: DistanceMetric,
}

pub fn train_knn(train: &Dataset, cfg: &KnnConfig) -> Result<Knn> {
    if cfg.k == 0 || cfg.k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("k must be odd and positive, got {}", cfg.k)));
    }
    if cfg.k > train.len() {
        return Err(Error::TooFewInstances {
            required: cfg.k,
            found: train.len(),
        });
    }
    Ok(Knn {
        points: train.features().map(|f| f.to_vec()).collect(),
        labels: train.labels().collect(),
        n_classes: train.n_classes(),
        k: cfg.k,
        metric: cfg.metric,
    })
}

impl Knn {
    /// Indices of the k nearest training points, nearest first.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (self.metric.eval(p, x), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }
}

impl Classifier for Knn {
    fn n_features(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn class_scores(&self, x: &[f64]) -> ClassScores {
        let mut votes = vec![0.0; self.n_classes];
        for i in self.neighbors(x) {
            votes[self.labels[i].0] += 1.0;
        }
        ClassScores::from_probabilities(votes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn xor() -> Dataset {
        Dataset::from_rows(vec![
            (vec![0.0, 0.0], 0),
            (vec![1.0, 1.0], 0),
            (vec![0.0, 1.0], 1),
            (vec![1.0, 0.0], 1),
        ])
        .unwrap()
    }

    fn cfg(c: f64, gamma: f64) -> RbfSvmConfig {
        RbfSvmConfig {
            c,
            gamma: Gamma::Fixed(gamma),
            ..Default::default()
        }
    }

    /// Kernel sum over the full dual vector, independent of the stored
    /// support-vector list.
    fn oracle_decision(train: &Dataset, r: &BinaryTrainingReport, bias: f64, gamma: f64, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, p) in train.features().enumerate() {
            let sq: f64 = p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            s += r.alphas[i] * r.targets[i] * (-gamma * sq).exp();
        }
        s + bias
    }

    #[test]
    fn separable_four_points() {
        let d = Dataset::from_rows(vec![
            (vec![0.0, 0.0], 0),
            (vec![0.0, 1.0], 0),
            (vec![3.0, 0.0], 1),
            (vec![3.0, 1.0], 1),
        ])
        .unwrap();
        let m = train_rbf_svm(&d, &cfg(10.0, 1.0)).unwrap();
        assert_eq!(accuracy(&m, &d).unwrap(), 1.0);
        assert!(m.converged);
    }

    #[test]
    fn xor_is_separated() {
        let d = xor();
        let m = train_rbf_svm(&d, &cfg(10.0, 1.0)).unwrap();
        assert_eq!(accuracy(&m, &d).unwrap(), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let d = Dataset::from_rows(vec![(vec![0.0], 0), (vec![1.0], 0)]).unwrap();
        assert!(matches!(
            train_rbf_svm(&d, &RbfSvmConfig::default()),
            Err(Error::TooFewClasses { found: 1, .. })
        ));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let d = xor();
        assert!(train_rbf_svm(&d, &cfg(0.0, 1.0)).is_err());
        assert!(train_rbf_svm(&d, &cfg(1.0, -1.0)).is_err());
    }

    #[test]
    fn auto_gamma_matches_variance_rule() {
        // values 0,0,1,1,0,1,1,0 -> var 0.25, 2 features -> gamma 2
        assert!((auto_gamma(&xor()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_problem_boundary_scores_half() {
        let d = Dataset::from_rows(vec![(vec![-1.0, 0.0], 0), (vec![1.0, 0.0], 1)]).unwrap();
        let m = train_rbf_svm(&d, &cfg(1.0, 0.5)).unwrap();
        let s = m.class_scores(&[0.0, 0.0]);
        assert!((s.as_slice()[0] - 0.5).abs() < 1e-6, "{s:?}");
        assert!((s.as_slice()[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn deep_in_region_scores_follow_decision_signs() {
        let d = Dataset::from_rows(vec![
            (vec![-1.0, 0.0], 0),
            (vec![-1.2, 0.3], 0),
            (vec![1.0, 0.0], 1),
            (vec![1.1, -0.2], 1),
        ])
        .unwrap();
        let m = train_rbf_svm(&d, &cfg(1.0, 0.5)).unwrap();
        let x = [-1.1, 0.1];
        let dv = m.decision_values(&x);
        assert!(dv[0] > 0.0 && dv[1] < 0.0);
        let s = m.class_scores(&x);
        assert!(s.get(ClassLabel(0)) > s.get(ClassLabel(1)));
    }

    #[test]
    fn dimensionality_checked() {
        let m = train_rbf_svm(&xor(), &cfg(1.0, 1.0)).unwrap();
        assert!(matches!(class_scores(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(predict(&m, &[1.0, 2.0, 3.0]).is_err());
    }

    fn blobs(seed: u64, n: usize, k: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::from_rows(
            (0..n)
                .map(|i| {
                    let c = i % k;
                    let x = vec![c as f64 + rng.random_range(-0.8..0.8), rng.random_range(-1.0..1.0)];
                    (x, c)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dual_constraints_and_decision_oracle() {
        for seed in 0..5 {
            let d = blobs(seed, 40, 3);
            let c = 2.0;
            let m = train_rbf_svm(&d, &cfg(c, 1.5)).unwrap();
            let rep = m.training_report().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for (mach, r) in m.machines.iter().zip(&rep.machines) {
                assert!(r.alphas.iter().all(|&a| (0.0..=c).contains(&a)));
                let s: f64 = r.alphas.iter().zip(&r.targets).map(|(a, y)| a * y).sum();
                assert!(s.abs() < 1e-6, "sum alpha y = {s}");
                for (i, p) in d.features().enumerate() {
                    let o = oracle_decision(&d, r, mach.bias, m.gamma, p);
                    assert!((r.cached_decision_values[i] - o).abs() < 1e-9);
                }
                for _ in 0..50 {
                    let x = [rng.random_range(-2.0..4.0), rng.random_range(-2.0..2.0)];
                    let o = oracle_decision(&d, r, mach.bias, m.gamma, &x);
                    assert!((mach.decision_value(m.gamma, &x) - o).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn predict_is_argmax_of_scores() {
        let d = blobs(7, 60, 3);
        let m = train_rbf_svm(&d, &RbfSvmConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = [rng.random_range(-2.0..4.0), rng.random_range(-2.0..2.0)];
            assert_eq!(m.predict(&x), m.class_scores(&x).argmax());
        }
    }

    #[test]
    fn iteration_budget_flags_non_convergence() {
        let d = blobs(3, 60, 3);
        let m = train_rbf_svm(
            &d,
            &RbfSvmConfig {
                max_passes: 1,
                kkt_tolerance: 1e-12,
                c: 100.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!m.converged);
        assert!(m.training_report().unwrap().machines.iter().any(|r| !r.converged));
    }

    #[test]
    fn model_json_roundtrip() {
        let d = blobs(2, 30, 2);
        let m = train_rbf_svm(&d, &RbfSvmConfig::default()).unwrap();
        let back = RbfSvm::from_json(&m.to_json().unwrap()).unwrap();
        assert!(back.training_report().is_none());
        for x in d.features() {
            assert_eq!(back.decision_values(x), m.decision_values(x));
        }
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for key in ["gamma", "n_features", "class_names", "machines", "converged"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn gamma_config_parsing() {
        let c: RbfSvmConfig = serde_json::from_str(r#"{"gamma":"auto","c":50}"#).unwrap();
        assert_eq!(c.gamma, Gamma::Auto);
        assert_eq!(c.c, 50.0);
        let c: RbfSvmConfig = serde_json::from_str(r#"{"gamma":0.5}"#).unwrap();
        assert_eq!(c.gamma, Gamma::Fixed(0.5));
        assert!(serde_json::from_str::<RbfSvmConfig>(r#"{"gamma":"scale"}"#).is_err());
        assert!(serde_json::from_str::<RbfSvmConfig>(r#"{"C":1}"#).is_err());
    }

    #[test]
    fn knn_self_neighbor_and_vote_fractions() {
        let d = Dataset::from_rows(vec![
            (vec![0.0], 0),
            (vec![1.0], 0),
            (vec![2.0], 1),
            (vec![10.0], 1),
        ])
        .unwrap();
        let k1 = train_knn(&d, &KnnConfig { k: 1, metric: DistanceMetric::L2 }).unwrap();
        assert_eq!(k1.predict(&[2.0]), ClassLabel(1));
        let k3 = train_knn(&d, &KnnConfig { k: 3, metric: DistanceMetric::L2 }).unwrap();
        let s = k3.class_scores(&[0.5]);
        assert_eq!(s.argmax(), ClassLabel(0));
        assert!((s.as_slice()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.as_slice()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn knn_k_too_large_or_even() {
        let d = xor();
        assert!(matches!(
            train_knn(&d, &KnnConfig { k: 5, metric: DistanceMetric::L2 }),
            Err(Error::TooFewInstances { .. })
        ));
        assert!(train_knn(&d, &KnnConfig { k: 2, metric: DistanceMetric::L2 }).is_err());
    }

    #[test]
    fn knn_matches_exhaustive_scan() {
        let d = blobs(11, 50, 3);
        let knn = train_knn(&d, &KnnConfig { k: 5, metric: DistanceMetric::L2 }).unwrap();
        let pts: Vec<Vec<f64>> = d.features().map(|f| f.to_vec()).collect();
        let labels: Vec<usize> = d.labels().map(|l| l.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = [rng.random_range(-1.0..3.0), rng.random_range(-1.0..1.0)];
            // repeated selection of the minimum, skipping already chosen
            let mut chosen: Vec<usize> = Vec::new();
            for _ in 0..5 {
                let mut best = None;
                for (i, p) in pts.iter().enumerate() {
                    if chosen.contains(&i) {
                        continue;
                    }
                    let dd = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                    if best.is_none_or(|(bd, _)| dd < bd) {
                        best = Some((dd, i));
                    }
                }
                chosen.push(best.unwrap().1);
            }
            let mut votes = [0usize; 3];
            for &i in &chosen {
                votes[labels[i]] += 1;
            }
            let mut expect = 0;
            for c in 1..3 {
                if votes[c] > votes[expect] {
                    expect = c;
                }
            }
            assert_eq!(knn.neighbors(&q), chosen);
            assert_eq!(knn.predict(&q), ClassLabel(expect));
        }
    }

    proptest! {
        #[test]
        fn scores_normalized(vals in prop::collection::vec(-50.0..50.0f64, 2..6)) {
            let s = ClassScores::from_decision_values(&vals);
            let sum: f64 = s.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(s.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if vals[i] > vals[j] {
                        prop_assert!(s.as_slice()[i] >= s.as_slice()[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn svm_scores_sum_to_one_on_random_points() {
        let d = blobs(9, 45, 3);
        let m = train_rbf_svm(&d, &RbfSvmConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = [rng.random_range(-5.0..8.0), rng.random_range(-5.0..5.0)];
            let sum: f64 = m.class_scores(&x).as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
