//! Context-aware stress classification on tabular survey data.
//!
//! The crate covers the whole experiment: loading and cleaning CSV surveys,
//! min-max scaling, ANOVA-F and RFE feature selection, PCA, six base
//! classifiers (SVM, random forest, bagging, AdaBoost, gradient boosting and
//! regularized second-order boosting), four voting combiners plus stacking,
//! and a reproducible experiment driver with report and artifact output.

pub mod artifact;
pub mod cart;
pub mod dataio;
pub mod decomp;
pub mod ensemble;
pub mod error;
pub mod featsel;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod models;
pub mod modelselect;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod seed;
pub mod svm;
pub mod view;
pub mod synthetic;
pub mod tree_ensembles;

pub use error::{Error, Result};
