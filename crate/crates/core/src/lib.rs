//! Acoustic screening toolkit for nasal-breath recordings.
//!
//! The pipeline mirrors a four-stage flow: ingest audio, extract frame-level
//! acoustic features and collapse them to per-clip statistics, reduce the
//! feature set (random-forest importance, PCA, or correlation ranking), and
//! train/evaluate lightweight classifiers under patient-grouped k-fold
//! cross-validation. A seeded synthetic dataset generator makes the whole
//! chain verifiable end to end without clinical recordings.

pub mod audio;
pub mod dsp;
pub mod model;
pub mod select;
pub mod stats;

pub mod prelude {
    pub use crate::audio::{AudioClip, DatasetManifest, Label};
    pub use crate::dsp::{extract_tracks, DspConfig, FeatureTrackSet};
    pub use crate::stats::{
        aggregate_stats, build_feature_vector, named_mask, FeatureMask, FeatureVector,
    };
}

/// Crate-wide error type aggregating the per-module errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Select(#[from] select::SelectError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}
