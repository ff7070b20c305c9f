//! Auditing counterfactual explanations of black-box classifiers.
//!
//! A counterfactual for an instance `x` is a nearby point `e` that the model
//! labels differently. This crate generates counterfactuals with three
//! generators ([`generators::growing_spheres`], [`generators::hcls`] and
//! [`generators::wachter`]) and scores each one for how well it is supported
//! by correctly classified training data of its predicted class:
//!
//! * [`diagnostics::proximity`]: distance to the data, relative to the local
//!   density of that class.
//! * [`diagnostics::connectedness`]: whether `e` joins a dbscan cluster of
//!   the class's correctly classified instances.
//! * [`diagnostics::stability`]: a local Lipschitz estimate of the explainer
//!   itself.
//!
//! [`harness`] drives batch audits from a JSON config and writes CSV and
//! JSON reports. The `cf-audit` binary wraps it.
//!
//! ```
//! use cf_audit::classifiers::{train_rbf_svm, RbfSvmConfig};
//! use cf_audit::dataset::Dataset;
//! use cf_audit::generators::{growing_spheres, GsConfig};
//!
//! let rows = (0..40)
//!     .map(|i| {
//!         let t = i as f64 / 39.0;
//!         (vec![t, (i % 5) as f64 / 4.0], usize::from(t > 0.5))
//!     })
//!     .collect();
//! let data = Dataset::from_rows(rows)?;
//! let svm = train_rbf_svm(&data, &RbfSvmConfig::default())?;
//! let x = &data.instances()[0].features;
//! let e = growing_spheres(x, &svm, &GsConfig::for_diameter(data.diameter()))?;
//! assert_ne!(e.counterfactual_label, e.source_label);
//! # Ok::<(), cf_audit::Error>(())
//! ```

pub mod classifiers;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod generators;
pub mod harness;
pub mod neighbors;

pub use classifiers::{ClassScores, Classifier};
pub use dataset::{ClassLabel, Dataset, DistanceMetric, FeatureVector, LabeledInstance};
pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/classifiers.md")]
    mod classifiers {}
    #[doc = include_str!("../../../book/src/generators.md")]
    mod generators {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
