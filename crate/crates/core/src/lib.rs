//! Layer sensitivity analysis for diffusion attention layers.
//!
//! Each image of a labeled collection is summarized at every
//! (layer, timestep, projection) by the per-channel mean and standard
//! deviation of its attention features. Treating those summaries as diagonal
//! Gaussians, a layer is scored by how tightly same-style images cluster
//! relative to the spread between styles (inner / outer Jensen-Shannon
//! distance). Layers are ranked by that score and the ranking is compiled into
//! a [`plan::ConditioningPlan`] telling a generation pipeline which layers
//! receive style conditioning and for which timesteps structure conditioning
//! stays active.
//!
//! The pipeline, module by module:
//!
//! - [`trace`]: the summary data model and its line-delimited file format
//! - [`divergence`]: closed-form KL / JSD between diagonal Gaussians
//! - [`scoring`]: inner and outer distances and the clustering score per cell
//! - [`ranking`]: trimmed aggregation over repeated collections, layer ranking
//! - [`plan`]: conditioning plans built from a ranking
//! - [`synth`]: synthetic traces with planted sensitive layers
//! - [`eval`]: tradeoff curves and ranking recovery metrics
//! - [`cli`]: the `layerscope` command line

pub mod cli;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod plan;
pub mod ranking;
pub mod scoring;
pub mod synth;
pub mod trace;

mod numeric;

pub use numeric::round_half_up;

pub use divergence::{jsd, kl_diag_gauss, midpoint, DivergenceConfig, MidpointRule};
pub use error::{Error, Result};
pub use plan::{ConditioningPlan, SchedulerSpec};
pub use ranking::{LayerRanking, RankScope};
pub use scoring::{CellScore, ProjectionPolicy, SensitivityTable};
pub use trace::{GaussianSummary, Projection, TraceRecord, TraceSet};
