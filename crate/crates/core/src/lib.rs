//! Kinship verification from face images.
//!
//! The pipeline enhances faces with multiscale retinex, describes them with
//! multi-scale local phase quantization histograms (or externally extracted
//! deep features), learns a cross-view tensor discriminant projection with
//! within-class covariance normalization, matches parent/child pairs by
//! cosine similarity and fuses modalities with logistic regression.

mod binio;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod imaging;
pub mod linalg;
pub mod lpq;
pub mod pipeline;
pub mod protocol;
pub mod scoring;
pub mod subspace;
pub mod synth;

pub use dataset::{DatasetManifest, FeatureBlock, FoldAssignment, Label, PairEntry, PairList, Relation, Role};
pub use error::{Error, Result};
pub use fusion::{fit_logistic, fuse, LrModel, LrOptions};
pub use imaging::{Image, MsrParams, Plane};
pub use lpq::{BlockGrid, LpqParams};
pub use scoring::{Metrics, PairScoreSet};
pub use subspace::{ProjectionModel, Tensor3, TxqdaParams};
