//! Post-hoc counterfactual generators.
//!
//! Each generator only queries the classifier through [`Classifier`]; none
//! of them sees training data. Every returned [`CounterfactualResult`] has a
//! predicted label different from the source's, and `evaluations` counts
//! the classifier calls spent producing it.
//!
//! * [`growing_spheres`]: L2-closest enemy found by shrinking then growing
//!   spherical layers of uniform samples around `x`, with an optional
//!   [`gs_sparsify`] pass that reverts coordinates to lower L0.
//! * [`hcls`]: random-restart hill climbing of the best other-class score
//!   within a distance budget that grows until the label flips.
//! * [`wachter`]: derivative-free coordinate descent on
//!   `lambda * (score_target(e) - target)^2 + |x - e|_1`, sweeping lambda up
//!   a schedule.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{ClassScores, Classifier};
use crate::dataset::{l2, ClassLabel, FeatureVector};
use crate::error::{Error, Result};

/// Which generator produced a result, and with which settings (seed
/// excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorTag {
    pub name: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub counterfactual: FeatureVector,
    pub source: FeatureVector,
    pub source_label: ClassLabel,
    pub counterfactual_label: ClassLabel,
    pub distance_l2: f64,
    pub generator: GeneratorTag,
    pub evaluations: u64,
}

impl CounterfactualResult {
    fn new(
        source: &FeatureVector,
        source_label: ClassLabel,
        counterfactual: Vec<f64>,
        counterfactual_label: ClassLabel,
        generator: GeneratorTag,
        evaluations: u64,
    ) -> Self {
        debug_assert_ne!(source_label, counterfactual_label);
        let distance_l2 = l2(source, &counterfactual);
        CounterfactualResult {
            counterfactual: FeatureVector::from_finite(counterfactual),
            source: source.clone(),
            source_label,
            counterfactual_label,
            distance_l2,
            generator,
            evaluations,
        }
    }
}

/// Classifier wrapper counting every call.
struct Probe<'a> {
    f: &'a dyn Classifier,
    calls: Cell<u64>,
}

impl<'a> Probe<'a> {
    fn new(f: &'a dyn Classifier) -> Self {
        Probe { f, calls: Cell::new(0) }
    }

    fn label(&self, x: &[f64]) -> ClassLabel {
        self.calls.set(self.calls.get() + 1);
        self.f.predict(x)
    }

    fn scores(&self, x: &[f64]) -> ClassScores {
        self.calls.set(self.calls.get() + 1);
        self.f.class_scores(x)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}

fn check_input(x: &FeatureVector, f: &dyn Classifier) -> Result<()> {
    if x.dim() != f.n_features() {
        return Err(Error::DimensionMismatch {
            expected: f.n_features(),
            got: x.dim(),
        });
    }
    if f.n_classes() < 2 {
        return Err(Error::TooFewClasses {
            required: 2,
            found: f.n_classes(),
        });
    }
    Ok(())
}

/// Uniform sample from the spherical layer `a0 <= |z - center| <= a1`.
///
/// Direction is a normalized isotropic Gaussian; the radius is drawn by
/// inverting the `r^(d-1)` radial density.
pub fn sample_in_layer<R: Rng + ?Sized>(rng: &mut R, center: &[f64], a0: f64, a1: f64) -> Vec<f64> {
    let d = center.len();
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    while norm == 0.0 {
        dir = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let u: f64 = rng.random();
    let dd = d as i32;
    let r = (a0.powi(dd) + u * (a1.powi(dd) - a0.powi(dd))).powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, v)| c + r * v / norm).collect()
}

fn hash_config<T: Serialize>(name: &str, cfg: &T) -> String {
    let mut v = serde_json::to_value(cfg).expect("configs serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("seed");
    }
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(v.to_string().as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Growing Spheres

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsConfig {
    pub n_per_layer: usize,
    /// Initial ball radius.
    pub eta0: f64,
    /// Layer width as a multiple of the post-shrink radius.
    pub layer_width_factor: f64,
    pub shrink_factor: f64,
    pub max_radius: f64,
    pub sparsify: bool,
    pub seed: u64,
}

impl Default for GsConfig {
    fn default() -> Self {
        GsConfig::for_diameter(1.0)
    }
}

impl GsConfig {
    /// Defaults scaled to a feature space of the given diameter:
    /// `eta0 = 0.1 * diameter`, `max_radius = 2 * diameter`.
    pub fn for_diameter(diameter: f64) -> Self {
        GsConfig {
            n_per_layer: 1000,
            eta0: 0.1 * diameter,
            layer_width_factor: 1.0,
            shrink_factor: 0.5,
            max_radius: 2.0 * diameter,
            sparsify: false,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.n_per_layer > 0
            && self.eta0 > 0.0
            && self.layer_width_factor > 0.0
            && self.shrink_factor > 0.0
            && self.shrink_factor < 1.0
            && self.max_radius > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid growing spheres config: {self:?}")))
        }
    }
}

const MAX_SHRINK_STEPS: usize = 64;

pub fn growing_spheres(x: &FeatureVector, f: &dyn Classifier, cfg: &GsConfig) -> Result<CounterfactualResult> {
    cfg.validate()?;
    check_input(x, f)?;
    let tag = GeneratorTag {
        name: "growing_spheres".into(),
        config_hash: hash_config("growing_spheres", cfg),
    };
    let probe = Probe::new(f);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lx = probe.label(x);

    // Shrink until the ball around x holds no sampled enemy.
    let mut eta = cfg.eta0;
    for _ in 0..MAX_SHRINK_STEPS {
        let found = (0..cfg.n_per_layer).any(|_| {
            let z = sample_in_layer(&mut rng, x, 0.0, eta);
            probe.label(&z) != lx
        });
        if !found {
            break;
        }
        eta *= cfg.shrink_factor;
    }

    // Grow outward layer by layer.
    let width = cfg.layer_width_factor * eta;
    let mut a0 = eta;
    while a0 < cfg.max_radius {
        let a1 = (a0 + width).min(cfg.max_radius);
        let mut best: Option<(f64, Vec<f64>, ClassLabel)> = None;
        for _ in 0..cfg.n_per_layer {
            let z = sample_in_layer(&mut rng, x, a0, a1);
            let lz = probe.label(&z);
            if lz != lx {
                let d = l2(x, &z);
                if best.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                    best = Some((d, z, lz));
                }
            }
        }
        if let Some((_, e, le)) = best {
            let e = if cfg.sparsify {
                sparsify_with(&probe, x, e, le)
            } else {
                e
            };
            return Ok(CounterfactualResult::new(x, lx, e, le, tag, probe.calls()));
        }
        a0 = a1;
    }
    Err(Error::NoCounterfactual { radius: cfg.max_radius })
}

/// Greedily reverts coordinates of `e` to the values in `x`, smallest
/// `|e_j - x_j|` first, keeping each revert only if `f` still predicts the
/// label of `e`.
pub fn gs_sparsify(x: &FeatureVector, e: &FeatureVector, f: &dyn Classifier) -> FeatureVector {
    let probe = Probe::new(f);
    let le = probe.label(e);
    FeatureVector::from_finite(sparsify_with(&probe, x, e.to_vec(), le))
}

fn sparsify_with(probe: &Probe<'_>, x: &[f64], mut e: Vec<f64>, le: ClassLabel) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).filter(|&j| e[j] != x[j]).collect();
    order.sort_by(|&a, &b| (e[a] - x[a]).abs().total_cmp(&(e[b] - x[b]).abs()));
    for j in order {
        let old = e[j];
        e[j] = x[j];
        if probe.label(&e) != le {
            e[j] = old;
        }
    }
    e
}

// ---------------------------------------------------------------------------
// HCLS

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HclsConfig {
    /// Initial maximum L2 distance from x.
    pub budget: f64,
    pub budget_growth: f64,
    pub max_budget: f64,
    /// Random restarts per budget.
    pub n_candidates: usize,
    /// Coordinate moves tried per restart.
    pub local_steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for HclsConfig {
    fn default() -> Self {
        HclsConfig::for_diameter(1.0)
    }
}

impl HclsConfig {
    pub fn for_diameter(diameter: f64) -> Self {
        HclsConfig {
            budget: 0.1 * diameter,
            budget_growth: 1.5,
            max_budget: 2.0 * diameter,
            n_candidates: 20,
            local_steps: 50,
            step_size: 0.02 * diameter,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.budget > 0.0
            && self.budget_growth > 1.0
            && self.budget <= self.max_budget
            && self.n_candidates > 0
            && self.step_size > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid HCLS config: {self:?}")))
        }
    }
}

fn project_onto_ball(x: &[f64], z: &mut [f64], radius: f64) {
    let d = l2(x, z);
    if d > radius {
        let s = radius / d;
        for (zi, xi) in z.iter_mut().zip(x) {
            *zi = xi + (*zi - xi) * s;
        }
    }
}

pub fn hcls(x: &FeatureVector, f: &dyn Classifier, cfg: &HclsConfig) -> Result<CounterfactualResult> {
    cfg.validate()?;
    check_input(x, f)?;
    let tag = GeneratorTag {
        name: "hcls".into(),
        config_hash: hash_config("hcls", cfg),
    };
    let probe = Probe::new(f);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lx = probe.label(x);
    let dim = x.dim();
    let objective = |scores: &ClassScores| scores.best_other(lx).1;

    let mut budget = cfg.budget;
    // relative slack so that repeated growth lands on max_budget
    while budget <= cfg.max_budget * (1.0 + 1e-12) {
        let mut best: Option<(f64, Vec<f64>, ClassLabel)> = None;
        for _ in 0..cfg.n_candidates {
            let mut p = sample_in_layer(&mut rng, x, 0.0, budget);
            let s = probe.scores(&p);
            let (mut obj, mut lp) = (objective(&s), s.argmax());
            for _ in 0..cfg.local_steps {
                let j = rng.random_range(0..dim);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut q = p.clone();
                q[j] += sign * cfg.step_size;
                project_onto_ball(x, &mut q, budget);
                let s = probe.scores(&q);
                let o = objective(&s);
                if o > obj {
                    p = q;
                    obj = o;
                    lp = s.argmax();
                }
            }
            if best.as_ref().is_none_or(|(bo, _, _)| obj > *bo) {
                best = Some((obj, p, lp));
            }
        }
        let (_, e, le) = best.expect("n_candidates > 0");
        if le != lx {
            return Ok(CounterfactualResult::new(x, lx, e, le, tag, probe.calls()));
        }
        if budget >= cfg.max_budget {
            break;
        }
        budget = (budget * cfg.budget_growth).min(cfg.max_budget);
    }
    Err(Error::NoCounterfactual { radius: budget })
}

// ---------------------------------------------------------------------------
// Wachter-style score target

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WachterConfig {
    pub target_score: f64,
    /// Class whose score is driven to `target_score`. Defaults to the
    /// highest-scoring class other than f(x).
    pub target_class: Option<usize>,
    pub lambda_schedule: Vec<f64>,
    pub n_restarts: usize,
    /// Coordinate-descent sweeps per restart.
    pub max_iters: usize,
    pub initial_step: f64,
    /// Descent stops once the step has been halved below this.
    pub min_step: f64,
    /// Restarts after the first begin uniformly in this ball around x.
    pub restart_radius: f64,
    pub seed: u64,
}

impl Default for WachterConfig {
    fn default() -> Self {
        WachterConfig::for_diameter(1.0)
    }
}

impl WachterConfig {
    pub fn for_diameter(diameter: f64) -> Self {
        WachterConfig {
            target_score: 0.5,
            target_class: None,
            lambda_schedule: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            n_restarts: 3,
            max_iters: 200,
            initial_step: 0.05 * diameter,
            min_step: 1e-4 * diameter,
            restart_radius: 0.1 * diameter,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let increasing = self.lambda_schedule.windows(2).all(|w| w[0] < w[1]);
        let ok = self.target_score > 0.0
            && self.target_score <= 1.0
            && !self.lambda_schedule.is_empty()
            && self.lambda_schedule.iter().all(|&l| l > 0.0)
            && increasing
            && self.n_restarts > 0
            && self.initial_step > 0.0
            && self.min_step > 0.0
            && self.restart_radius >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Wachter config: {self:?}")))
        }
    }
}

pub fn wachter(x: &FeatureVector, f: &dyn Classifier, cfg: &WachterConfig) -> Result<CounterfactualResult> {
    cfg.validate()?;
    check_input(x, f)?;
    let tag = GeneratorTag {
        name: "wachter".into(),
        config_hash: hash_config("wachter", cfg),
    };
    let probe = Probe::new(f);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sx = probe.scores(x);
    let lx = sx.argmax();
    let target = match cfg.target_class {
        Some(t) if t < f.n_classes() && t != lx.0 => ClassLabel(t),
        Some(t) => {
            return Err(Error::InvalidParameter(format!(
                "target class {t} must differ from the source class and be < {}",
                f.n_classes()
            )))
        }
        None => sx.best_other(lx).0,
    };
    let l1 = |z: &[f64]| z.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let mut farthest = 0.0f64;

    for &lambda in &cfg.lambda_schedule {
        // (objective, point, label) of the best label-flipping point seen
        let mut best_valid: Option<(f64, Vec<f64>, ClassLabel)> = None;
        let mut eval = |z: &[f64]| {
            let s = probe.scores(z);
            let obj = lambda * (s.get(target) - cfg.target_score).powi(2) + l1(z);
            let lz = s.argmax();
            if lz != lx && best_valid.as_ref().is_none_or(|(bo, _, _)| obj < *bo) {
                best_valid = Some((obj, z.to_vec(), lz));
            }
            obj
        };
        for r in 0..cfg.n_restarts {
            let mut cur = if r == 0 {
                x.to_vec()
            } else {
                sample_in_layer(&mut rng, x, 0.0, cfg.restart_radius)
            };
            let mut cur_obj = eval(&cur);
            let mut h = cfg.initial_step;
            let mut iters = 0;
            while h >= cfg.min_step && iters < cfg.max_iters {
                let mut improved = false;
                for j in 0..cur.len() {
                    for sign in [1.0, -1.0] {
                        let mut cand = cur.clone();
                        cand[j] += sign * h;
                        let o = eval(&cand);
                        if o < cur_obj {
                            cur = cand;
                            cur_obj = o;
                            improved = true;
                            break;
                        }
                    }
                }
                if !improved {
                    h *= 0.5;
                }
                iters += 1;
            }
            farthest = farthest.max(l2(x, &cur));
        }
        if let Some((_, e, le)) = best_valid {
            return Ok(CounterfactualResult::new(x, lx, e, le, tag, probe.calls()));
        }
    }
    Err(Error::NoCounterfactual { radius: farthest })
}

// ---------------------------------------------------------------------------

/// A configured generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    GrowingSpheres(GsConfig),
    Hcls(HclsConfig),
    Wachter(WachterConfig),
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::GrowingSpheres(_) => "growing_spheres",
            Generator::Hcls(_) => "hcls",
            Generator::Wachter(_) => "wachter",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Generator::GrowingSpheres(c) => c.seed,
            Generator::Hcls(c) => c.seed,
            Generator::Wachter(c) => c.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Generator {
        let mut g = self.clone();
        match &mut g {
            Generator::GrowingSpheres(c) => c.seed = seed,
            Generator::Hcls(c) => c.seed = seed,
            Generator::Wachter(c) => c.seed = seed,
        }
        g
    }

    pub fn config_hash(&self) -> String {
        match self {
            Generator::GrowingSpheres(c) => hash_config(self.name(), c),
            Generator::Hcls(c) => hash_config(self.name(), c),
            Generator::Wachter(c) => hash_config(self.name(), c),
        }
    }

    pub fn generate(&self, x: &FeatureVector, f: &dyn Classifier) -> Result<CounterfactualResult> {
        match self {
            Generator::GrowingSpheres(c) => growing_spheres(x, f, c),
            Generator::Hcls(c) => hcls(x, f, c),
            Generator::Wachter(c) => wachter(x, f, c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    /// f(z) = [z_0 >= t], scores a steep logistic of z_0 - t.
    struct Threshold(f64, usize);

    impl Classifier for Threshold {
        fn n_features(&self) -> usize {
            self.1
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn class_scores(&self, x: &[f64]) -> ClassScores {
            let v = 10.0 * (x[0] - self.0);
            ClassScores::from_decision_values(&[-v, v])
        }
        fn predict(&self, x: &[f64]) -> ClassLabel {
            ClassLabel((x[0] >= self.0) as usize)
        }
    }

    /// f(z) = [|z| < 1] in 2D.
    struct Disk;

    impl Classifier for Disk {
        fn n_features(&self) -> usize {
            2
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn class_scores(&self, x: &[f64]) -> ClassScores {
            let v = 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt();
            ClassScores::from_decision_values(&[-v, v])
        }
        fn predict(&self, x: &[f64]) -> ClassLabel {
            ClassLabel(((x[0] * x[0] + x[1] * x[1]).sqrt() < 1.0) as usize)
        }
    }

    struct Constant;

    impl Classifier for Constant {
        fn n_features(&self) -> usize {
            2
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn class_scores(&self, _: &[f64]) -> ClassScores {
            ClassScores::from_decision_values(&[1.0, 0.0])
        }
    }

    /// Counts calls independently of the generator's own accounting.
    struct Counting<C>(C, AtomicU64);

    impl<C: Classifier> Classifier for Counting<C> {
        fn n_features(&self) -> usize {
            self.0.n_features()
        }
        fn n_classes(&self) -> usize {
            self.0.n_classes()
        }
        fn class_scores(&self, x: &[f64]) -> ClassScores {
            self.1.fetch_add(1, Ordering::Relaxed);
            self.0.class_scores(x)
        }
        fn predict(&self, x: &[f64]) -> ClassLabel {
            self.1.fetch_add(1, Ordering::Relaxed);
            self.0.predict(x)
        }
    }

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn gs(seed: u64) -> GsConfig {
        GsConfig {
            n_per_layer: 1000,
            eta0: 0.3,
            seed,
            ..GsConfig::for_diameter(3.0)
        }
    }

    #[test]
    fn layer_samples_stay_in_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in 1..5 {
            let c = vec![1.0; d];
            for _ in 0..500 {
                let z = sample_in_layer(&mut rng, &c, 0.5, 0.7);
                let r = l2(&c, &z);
                assert!((0.5 - 1e-12..=0.7 + 1e-12).contains(&r));
            }
        }
    }

    #[test]
    fn layer_radius_distribution_is_uniform_in_volume() {
        // In 2D the fraction of a uniform disk sample within r is r^2.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let inside = (0..n)
            .filter(|_| l2(&[0.0, 0.0], &sample_in_layer(&mut rng, &[0.0, 0.0], 0.0, 1.0)) < 0.5)
            .count();
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.015, "{frac}");
    }

    #[test]
    fn gs_threshold_1d() {
        let f = Threshold(1.0, 1);
        let r = growing_spheres(&fv(&[0.0]), &f, &gs(1)).unwrap();
        assert_eq!(r.counterfactual_label, ClassLabel(1));
        // final layer width is at most eta0
        assert!(r.counterfactual[0] >= 1.0 && r.counterfactual[0] <= 1.3);
        assert!((r.distance_l2 - r.counterfactual[0]).abs() < 1e-12);
    }

    #[test]
    fn gs_unit_circle() {
        let r = growing_spheres(&fv(&[0.0, 0.0]), &Disk, &gs(2)).unwrap();
        let n = l2(&[0.0, 0.0], &r.counterfactual);
        assert!((1.0..=1.1).contains(&n), "{n}");
        assert_eq!(r.source_label, ClassLabel(1));
    }

    #[test]
    fn gs_shrinks_when_start_ball_holds_enemies() {
        let cfg = GsConfig { eta0: 5.0, ..gs(4) };
        let r = growing_spheres(&fv(&[0.0]), &Threshold(1.0, 1), &cfg).unwrap();
        assert!(r.counterfactual[0] >= 1.0 && r.counterfactual[0] < 1.1);
    }

    #[test]
    fn gs_constant_classifier_fails() {
        let err = growing_spheres(&fv(&[0.0, 0.0]), &Constant, &gs(0)).unwrap_err();
        assert!(matches!(err, Error::NoCounterfactual { radius } if radius == 6.0));
    }

    #[test]
    fn gs_deterministic_and_counted() {
        let f = Counting(Disk, AtomicU64::new(0));
        let a = growing_spheres(&fv(&[0.2, 0.1]), &f, &gs(9)).unwrap();
        assert_eq!(a.evaluations, f.1.load(Ordering::Relaxed));
        let b = growing_spheres(&fv(&[0.2, 0.1]), &Disk, &gs(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gs_sparsify_reverts_inessential_coordinates() {
        let f = Threshold(1.0, 2);
        let out = gs_sparsify(&fv(&[0.0, 0.0]), &fv(&[1.2, 0.1]), &f);
        assert_eq!(out.as_slice(), [1.2, 0.0]);
    }

    #[test]
    fn gs_sparsify_keeps_essential_coordinate() {
        let f = Threshold(1.0, 2);
        let e = fv(&[1.2, 0.0]);
        assert_eq!(gs_sparsify(&fv(&[0.0, 0.0]), &e, &f), e);
        let f1 = Threshold(1.0, 1);
        let e = fv(&[1.0 + 1e-6]);
        assert_eq!(gs_sparsify(&fv(&[0.0]), &e, &f1), e);
    }

    #[test]
    fn gs_with_sparsify_reaches_l0_one() {
        let f = Threshold(1.0, 3);
        let cfg = GsConfig { sparsify: true, ..gs(5) };
        let r = growing_spheres(&fv(&[0.0, 0.0, 0.0]), &f, &cfg).unwrap();
        assert_eq!(&r.counterfactual[1..], [0.0, 0.0]);
        assert_eq!(f.predict(&r.counterfactual), ClassLabel(1));
    }

    fn hc(budget: f64, max_budget: f64, seed: u64) -> HclsConfig {
        HclsConfig {
            budget,
            budget_growth: 1.5,
            max_budget,
            n_candidates: 10,
            local_steps: 100,
            step_size: 0.05,
            seed,
        }
    }

    #[test]
    fn hcls_pushes_to_budget_sphere() {
        let r = hcls(&fv(&[0.0]), &Threshold(1.0, 1), &hc(2.0, 2.0, 1)).unwrap();
        assert!((r.counterfactual[0] - 2.0).abs() < 0.05, "{:?}", r.counterfactual);
    }

    #[test]
    fn hcls_infeasible_budget() {
        let err = hcls(&fv(&[0.0]), &Threshold(1.0, 1), &hc(0.5, 0.5, 1)).unwrap_err();
        assert!(matches!(err, Error::NoCounterfactual { .. }));
    }

    #[test]
    fn hcls_grows_budget_and_respects_it() {
        for seed in 0..10 {
            let f = Counting(Threshold(1.0, 2), AtomicU64::new(0));
            let r = hcls(&fv(&[0.0, 0.0]), &f, &hc(0.3, 5.0, seed)).unwrap();
            // budgets 0.3, 0.45, 0.675, 1.0125 -> first feasible
            assert!(r.distance_l2 <= 1.0125 + 1e-9);
            assert!(r.counterfactual[0] >= 1.0);
            assert_eq!(r.evaluations, f.1.load(Ordering::Relaxed));
        }
    }

    fn wc(seed: u64) -> WachterConfig {
        WachterConfig {
            initial_step: 0.1,
            min_step: 1e-4,
            restart_radius: 0.2,
            seed,
            ..WachterConfig::default()
        }
    }

    #[test]
    fn wachter_threshold_lands_at_boundary() {
        let f = Counting(Threshold(1.0, 1), AtomicU64::new(0));
        // starts where the logistic score still has a usable slope
        let r = wachter(&fv(&[0.5]), &f, &wc(1)).unwrap();
        assert_eq!(r.counterfactual_label, ClassLabel(1));
        assert!((r.counterfactual[0] - 1.0).abs() < 1e-2, "{:?}", r.counterfactual);
        assert_eq!(r.evaluations, f.1.load(Ordering::Relaxed));
    }

    /// Two Gaussian bumps at (0,0) and (2,0); boundary is the line z_0 = 1.
    struct Bumps;

    impl Classifier for Bumps {
        fn n_features(&self) -> usize {
            2
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn class_scores(&self, x: &[f64]) -> ClassScores {
            let g = |cx: f64| (-((x[0] - cx).powi(2) + x[1] * x[1])).exp();
            ClassScores::from_probabilities(vec![g(0.0) + 1e-300, g(2.0) + 1e-300])
        }
    }

    #[test]
    fn wachter_matches_grid_minimizer() {
        let x = fv(&[0.2, 0.3]);
        let cfg = wc(3);
        let r = wachter(&x, &Bumps, &cfg).unwrap();
        // Brute force: the first lambda with a valid grid point, then the
        // lowest objective over valid grid points at that lambda.
        let mut oracle = None;
        for &lambda in &cfg.lambda_schedule {
            let mut best: Option<(f64, [f64; 2])> = None;
            for i in 0..=400 {
                for j in 0..=400 {
                    let z = [-1.0 + 4.0 * i as f64 / 400.0, -2.0 + 4.0 * j as f64 / 400.0];
                    let s = Bumps.class_scores(&z);
                    if s.argmax() != ClassLabel(1) {
                        continue;
                    }
                    let o = lambda * (s.as_slice()[1] - 0.5).powi(2) + (z[0] - 0.2).abs() + (z[1] - 0.3).abs();
                    if best.is_none_or(|(b, _)| o < b) {
                        best = Some((o, z));
                    }
                }
            }
            if let Some(b) = best {
                oracle = Some(b.1);
                break;
            }
        }
        let o = oracle.unwrap();
        assert!(l2(&o, &r.counterfactual) < 0.1, "oracle {o:?} vs {:?}", r.counterfactual);
        // the straight segment toward the boundary keeps z_1 at x_1
        assert!((r.counterfactual[1] - 0.3).abs() < 0.1);
        assert!((r.counterfactual[0] - 1.0).abs() < 0.1);
    }

    #[test]
    fn wachter_constant_fails() {
        assert!(matches!(
            wachter(&fv(&[0.0, 0.0]), &Constant, &wc(0)),
            Err(Error::NoCounterfactual { .. })
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let x = fv(&[0.0]);
        let f = Threshold(1.0, 1);
        assert!(growing_spheres(&x, &f, &GsConfig { shrink_factor: 1.0, ..gs(0) }).is_err());
        assert!(hcls(&x, &f, &HclsConfig { budget_growth: 1.0, ..hc(1.0, 2.0, 0) }).is_err());
        let w = WachterConfig {
            lambda_schedule: vec![1.0, 1.0],
            ..wc(0)
        };
        assert!(wachter(&x, &f, &w).is_err());
        assert!(matches!(
            growing_spheres(&fv(&[0.0, 1.0]), &f, &gs(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn generator_enum_parses_and_hashes_without_seed() {
        let g: Generator = serde_json::from_str(r#"{"kind":"hcls","budget":0.5}"#).unwrap();
        assert_eq!(g.name(), "hcls");
        assert_eq!(g.config_hash(), g.with_seed(99).config_hash());
        assert_ne!(g.config_hash(), Generator::Hcls(HclsConfig::default()).config_hash());
        assert!(serde_json::from_str::<Generator>(r#"{"kind":"hcls","bogus":1}"#).is_err());
    }
}
