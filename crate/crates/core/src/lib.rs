//! Budget-constrained conformal calibration of lower predictive bounds on the
//! time-to-unsafe-sampling of generative-model prompts.
//!
//! The pipeline: a probability model `p̂(x)` gives closed-form geometric
//! quantiles `q̂_τ(x)`; calibration prompts receive designed censoring times
//! under an expected sampling budget; an inverse-censoring-weighted
//! miscoverage estimate selects the quantile level `τ̂`; and the lower
//! predictive bound for a new prompt is `q̂_τ̂(x)`.

pub mod allocator;
pub mod calibrate;
pub mod geom;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod seeds;
pub mod synthgen;

pub use allocator::{AllocationPlan, AllocatorError};
pub use calibrate::{CalibrationConfig, CalibrationError, CalibrationResult, Mode};
pub use geom::{GeomError, UnsafeProbability};
pub use model::{ProbabilityModel, TrainConfig, TrainingExample};
pub use oracle::{CensoredObservation, Oracle, PromptRecord, SyntheticOracle};
