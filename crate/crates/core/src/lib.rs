//! Contrast-adaptive supervised tissue segmentation.
//!
//! A Gaussian intensity classifier alternates with a partial-volume
//! simulation model: the classifier's output fixes the class fractions, the
//! simulation centroids are fitted to the input image by least squares, and
//! the training images are re-rendered with those centroids before the
//! classifier is retrained. Segmentation therefore follows the contrast of
//! the input rather than that of the training data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod simulator;
pub mod sweep;
pub mod volume;

pub use adapt::{
    adapt_segment, segment_standard, AdaptConfig, AdaptResult, TrainingPair, VarianceMode,
};
pub use classifier::{classify, fit_classifier, GaussianClassParams};
pub use error::{Error, Result};
pub use metrics::{classification_error, dice, volume_consistency, SegmentationReport};
pub use phantom::{blur, gaussian_kernel_1d, make_phantom, Geometry, Phantom, PhantomSpec};
pub use simulator::{
    estimate_centroids, refit_residual_variance, simulate, soften_labels, SimulationParams,
};
pub use sweep::{run_sweep, sweep_csv, SweepRow, SweepSpec};
pub use volume::{
    argmax_labels, export_pgm, load_probmap, load_volume, save_probmap, save_volume, LabelImage,
    ProbMap, ScalarImage,
};
