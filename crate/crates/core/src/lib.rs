//! High-order tensor pooling.
//!
//! The crate builds order-r tensor descriptors from local features, runs the
//! tensor shrinkage operator `I_r - (I_r - M)^eta` (spectral power
//! normalization generalised to tensors) and extracts the super-diagonal as a
//! compact, spatially orderless representation. On top of that sit RBF
//! attention heads that relate support crops to query regions, a synthetic
//! episode pipeline, and numerical checks of the shrinkage-estimator view of
//! `1 - (1 - lambda)^eta`.
//!
//! Module map:
//!
//! - [`tensor`]: dense cubic tensors, contractions, unfoldings.
//! - [`descriptors`]: high-order tensor descriptors and the kernel
//!   linearization identity.
//! - [`tso`]: MaxExp, MaxExp(F), tensor shrinkage, SigmE.
//! - [`shrinkage`]: KL + Tsallis objective and its closed-form minimizer.
//! - [`attention`]: SoftMax / RBF attention and multi-head splitting.
//! - [`heads`]: Z-shot and Spatial-HOP relation heads.
//! - [`pipeline`]: HOP unit, query-map cross-attention, synthetic episodes.
//! - [`bench`], [`suite`]: timing harness and runnable property suites.
//! - [`io`]: the `TNSR` binary format, named-section containers, CSV.

pub mod attention;
pub mod bench;
pub mod descriptors;
pub mod error;
pub mod heads;
pub mod io;
pub mod pipeline;
pub mod shrinkage;
pub mod suite;
pub mod tensor;
pub mod tso;

pub(crate) mod rng;

pub use attention::{AttentionBundle, AttentionKind};
pub use descriptors::FeatureMatrix;
pub use error::{Error, Result};
pub use heads::{HeadWeights, RelationOutput, TokenMatrix};
pub use pipeline::{EpisodeBatch, EpisodeOutput, PipelineConfig, SplitConfig};
pub use shrinkage::ShrinkageProblem;
pub use tensor::{DenseTensor, SuperDiagonal, Unfolding};
pub use tso::{EtaChoice, SpectrumVector, TsoParams};

/// Regularizer added to every trace / l1 normalization.
pub const EPSILON: f64 = 1e-6;
