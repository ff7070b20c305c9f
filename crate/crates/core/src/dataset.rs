//! Labeled datasets, CSV ingestion, seeded train/test splitting and distances.
//!
//! A [`Dataset`] is immutable once built. Labels are small contiguous ids
//! assigned in order of first appearance; the human-readable class names
//! live on the dataset, not on every instance.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::Classifier;
use crate::error::{Error, Result};

/// Absolute tolerance under which two coordinates count as equal for L0.
pub const L0_TOLERANCE: f64 = 1e-9;

/// A point of the feature space. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature vectors must have finite entries".into(),
            ));
        }
        Ok(FeatureVector(values))
    }

    /// Wraps values produced by arithmetic on finite vectors.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        FeatureVector::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// Class id. Names are resolved through [`Dataset::class_name`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub usize);

impl ClassLabel {
    pub fn id(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub features: FeatureVector,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<LabeledInstance>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking that it is nonempty, that every instance
    /// shares the dimensionality of `feature_names` and that every label is
    /// a valid class id.
    pub fn new(
        instances: Vec<LabeledInstance>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = feature_names.len();
        for inst in &instances {
            if inst.features.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: inst.features.dim(),
                });
            }
            if inst.label.0 >= class_names.len() {
                return Err(Error::InvalidLabel {
                    id: inst.label.0,
                    n_classes: class_names.len(),
                });
            }
        }
        Ok(Dataset {
            instances,
            feature_names,
            class_names,
        })
    }

    /// Convenience constructor with generated feature and class names.
    pub fn from_rows(rows: Vec<(Vec<f64>, usize)>) -> Result<Self> {
        let dim = rows.first().map_or(0, |(x, _)| x.len());
        let n_classes = rows.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
        let instances = rows
            .into_iter()
            .map(|(x, l)| {
                Ok(LabeledInstance {
                    features: FeatureVector::new(x)?,
                    label: ClassLabel(l),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            instances,
            (0..dim).map(|j| format!("x{}", j + 1)).collect(),
            (0..n_classes).map(|l| format!("class{l}")).collect(),
        )
    }

    /// A dataset with the same schema holding the selected instances. The
    /// result may be empty.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn instances(&self) -> &[LabeledInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, label: ClassLabel) -> Option<&str> {
        self.class_names.get(label.0).map(String::as_str)
    }

    pub fn features(&self) -> impl Iterator<Item = &FeatureVector> {
        self.instances.iter().map(|i| &i.features)
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        self.instances.iter().map(|i| i.label)
    }

    /// Number of distinct labels actually present.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.class_names.len()];
        for l in self.labels() {
            seen[l.0] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }

    /// Largest pairwise L2 distance between instances.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<&[f64]> = self.features().map(|f| f.as_slice()).collect();
        let mut best = 0.0f64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.max(l2(pts[i], pts[j]));
            }
        }
        best
    }

    /// Per-feature (min, max) over all instances.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim()];
        for x in self.features() {
            for (b, &v) in out.iter_mut().zip(x.iter()) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        out
    }

    /// Keeps only the named feature columns, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::UnknownColumn(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let instances = self
            .instances
            .iter()
            .map(|inst| LabeledInstance {
                features: FeatureVector::from_finite(cols.iter().map(|&c| inst.features[c]).collect()),
                label: inst.label,
            })
            .collect();
        Ok(Dataset {
            instances,
            feature_names: names.to_vec(),
            class_names: self.class_names.clone(),
        })
    }
}

/// Reads a CSV file with one header row, numeric feature columns and one
/// text label column. Labels receive ids in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let label_col = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::UnknownColumn(label_column.to_owned()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_col)
        .map(|(_, h)| h.clone())
        .collect();

    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut instances = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = r + 2;
        let mut values = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().enumerate() {
            if j == label_col {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: headers[j].clone(),
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: headers[j].clone(),
                });
            }
            values.push(v);
        }
        let name = record.get(label_col).unwrap_or_default().to_owned();
        let id = *class_ids.entry(name.clone()).or_insert_with(|| {
            class_names.push(name);
            class_names.len() - 1
        });
        instances.push(LabeledInstance {
            features: FeatureVector::from_finite(values),
            label: ClassLabel(id),
        });
    }
    Dataset::new(instances, feature_names, class_names)
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
    /// Indices into the original dataset, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Seeded random train/test partition.
///
/// The permutation is a Fisher-Yates shuffle of `0..n` driven by ChaCha8
/// seeded with `seed` (`rand_chacha::ChaCha8Rng::seed_from_u64`). The first
/// `round(train_fraction * n)` permuted indices form the training side. Both
/// sides keep the original instance order.
pub fn train_test_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let n = d.len();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::DegenerateSplit {
            fraction: train_fraction,
            n,
        });
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::DegenerateSplit {
            fraction: train_fraction,
            n,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut train_indices = perm[..n_train].to_vec();
    let mut test_indices = perm[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(DatasetSplit {
        train: d.subset(&train_indices),
        test: d.subset(&test_indices),
        train_indices,
        test_indices,
        seed,
        train_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Number of coordinates differing by more than [`L0_TOLERANCE`].
    L0,
    L1,
    #[default]
    L2,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        Ok(self.eval(a, b))
    }

    /// Unchecked evaluation; callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            DistanceMetric::L0 => a
                .iter()
                .zip(b)
                .filter(|(x, y)| (*x - *y).abs() > L0_TOLERANCE)
                .count() as f64,
            DistanceMetric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            DistanceMetric::L2 => l2(a, b),
        }
    }
}

pub fn distance(m: DistanceMetric, a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    m.distance(a, b)
}

#[inline]
pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// X^l: the instances of `d` whose true label is `l` and that `f` also
/// predicts as `l`. May be empty.
pub fn correctly_predicted_subset(f: &dyn Classifier, d: &Dataset, l: ClassLabel) -> Dataset {
    let keep: Vec<usize> = d
        .instances()
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.label == l && f.predict(&inst.features) == l)
        .map(|(i, _)| i)
        .collect();
    d.subset(&keep)
}

/// Per-feature min-max scaler onto [0, 1]. Fit on training data only.
/// Constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub ranges: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(train: &Dataset) -> Self {
        let bounds = train.bounds();
        MinMaxScaler {
            mins: bounds.iter().map(|b| b.0).collect(),
            ranges: bounds.iter().map(|b| b.1 - b.0).collect(),
        }
    }

    pub fn transform_vector(&self, x: &[f64]) -> FeatureVector {
        FeatureVector::from_finite(
            x.iter()
                .zip(self.mins.iter().zip(&self.ranges))
                .map(|(&v, (&lo, &r))| if r > 0.0 { (v - lo) / r } else { 0.0 })
                .collect(),
        )
    }

    pub fn transform(&self, d: &Dataset) -> Dataset {
        Dataset {
            instances: d
                .instances()
                .iter()
                .map(|inst| LabeledInstance {
                    features: self.transform_vector(&inst.features),
                    label: inst.label,
                })
                .collect(),
            feature_names: d.feature_names.clone(),
            class_names: d.class_names.clone(),
        }
    }
}
