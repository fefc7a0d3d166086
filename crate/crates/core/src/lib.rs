//! EEG-based user authentication pipeline.
//!
//! The crate covers the full chain from raw multi-channel recordings to an
//! evaluation report: session ingest (real CSV data or seeded synthetic
//! signals), bandpass filtering and sliding-window segmentation, per-window
//! statistical features, per-user extra-trees feature selection, kNN / LDA /
//! SVM classifiers with grid search, one-vs-rest authentication, and
//! hypothesis testing over the per-user results.
//!
//! Entry points:
//! - [`pipeline::run`] executes the whole pipeline from a [`pipeline::RunConfig`].
//! - Individual stages live in their own modules ([`ingest`], [`dsp`],
//!   [`features`], [`featsel`], [`classifiers`], [`protocol`], [`stats`]).
//!
//! Everything is deterministic given the configured seed: per-user and
//! per-tree random streams are derived with the splittable scheme in
//! [`seeds`], so results do not depend on worker-pool size.

pub mod classifiers;
pub mod dsp;
pub mod features;
pub mod featsel;
pub mod ingest;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod seeds;
pub mod stats;
