//! HEp-2 staining-pattern classification toolkit.
//!
//! * [`imaging`]: rescaling, gamma, thresholding, connected components and
//!   disk morphology on masked cell images.
//! * [`features`]: class-specific (128), texture (140) and combined (177)
//!   feature vectors, and z-score normalization.
//! * [`svm`]: RBF soft-margin SVM trained by SMO, with grid search.
//! * [`trees`]: Gini decision trees, random forest, random uniform forest
//!   and SAMME AdaBoost.
//! * [`frameworks`]: one-vs-one, one-vs-rest, hierarchical (cascade and
//!   common-feature) and tree-ensemble classifiers with second-stage
//!   ambiguity resolution.
//! * [`eval`]: TP/FP, OTP/OFP, CTP/ATP and macro F metrics, stratified
//!   splits and the multi-seed experiment runner.
//! * [`data`]: dataset loading, synthetic phantoms, feature CSV export and
//!   model persistence.

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod frameworks;
pub mod imaging;
pub mod labels;
mod persist;
pub mod svm;
pub mod trees;

pub use error::{Error, Result};
pub use labels::{ClassLabel, IntensityTag};
