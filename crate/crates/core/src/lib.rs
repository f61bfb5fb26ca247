//! Hit-song prediction from Spotify audio features.
//!
//! The crate covers the whole path from chart and catalogue acquisition
//! ([`ingest`]) through dataset preparation ([`preprocess`]), standardized
//! PCA ([`pca`]), four classifiers with cross-validated pipelines
//! ([`models`]) to evaluation reports ([`eval`]). [`runner`] wires the
//! stages together for the command-line front end.

pub mod charts;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod pca;
pub mod preprocess;
pub mod rng;
pub mod runner;
pub mod synth;

pub use data::{FeatureMatrix, Label, SplitSpec, TrackRecord};
pub use error::{Error, Result};
