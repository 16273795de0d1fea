//! Open-set recognition by reshaping the penultimate feature space.
//!
//! A small network is trained so that the PCA projection of its class-mean
//! activation vectors spreads toward a shell while each class stays compact;
//! per-class distance thresholds then reject samples from unseen classes.
//! Cross-entropy and OpenMax baselines, dataset loaders, metrics and the
//! experiment runner live alongside.

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod linalg;
pub mod nn;
pub mod openmax;
pub mod predictor;
pub mod representation;
pub mod superlative;
pub mod tensor;

pub use error::{OsrError, Result};
pub use tensor::Tensor;
