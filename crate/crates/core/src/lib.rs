//! Feature imputation for graphs with missing node features.
//!
//! The pipeline has two stages. Stage one diffuses the observed values of
//! each channel over the graph with a row-stochastic operator whose edge
//! weights come from pseudo-confidence, a geometric decay in the shortest
//! path distance to the nearest observed node. Stage two refines every node
//! row by exchanging information between correlated channels, gated by the
//! same confidence values.
//!
//! Modules:
//!
//! * [`graph`]: CSR adjacency, connected components, per-channel partitions.
//! * [`masking`]: structural and uniform missing-value protocols.
//! * [`confidence`]: multi-source BFS distances and pseudo-confidence.
//! * [`diffusion`]: the pinned channel diffusion, its closed form, and the
//!   symmetric-normalized baseline.
//! * [`propagation`]: channel correlation and inter-channel refinement.
//! * [`synth`]: block-model graphs with Gaussian class features.
//! * [`io`], [`eval`], [`pipeline`]: file formats, recovery metrics and the
//!   orchestration used by the `pcfi` binary.

pub mod confidence;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod masking;
pub mod pipeline;
pub mod propagation;
pub mod synth;

pub use confidence::{compute_spds, compute_spds_channel, SpdsMatrix, SpdsMode, UNREACHABLE};
pub use diffusion::{ChannelDiffusion, DiffusionResult, SolveMode, Stage1Config, Stage1Output};
pub use error::{PcfiError, Result};
pub use graph::{ChannelPartition, ComponentLabels, Graph};
pub use masking::{FeatureSet, KnownMask, MaskKind, MaskSpec};
pub use pipeline::{ImputationConfig, Method};
pub use propagation::{CorrelationMatrix, PropagationConfig};
