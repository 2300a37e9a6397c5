//! Engagement estimation for multi-party human-robot interaction.
//!
//! Engagement is modeled as a piecewise-linear process whose slope in each
//! section is drawn from a per-behavior normal distribution. The first zero of
//! engagement predicts when a user leaves; slope distributions are fitted by
//! maximum likelihood against observed interaction durations.

pub mod behavior;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod synthgen;
pub mod timeline;
pub mod trainer;

pub use behavior::{Behavior, GaussianParams, ParameterSet};
pub use engine::{
    effective_slope, estimate_duration, gaussian_product, trace_sections, trajectory, EngagementTrace, Method,
    SlopeMode,
};
pub use error::{Error, Result};
pub use evaluation::{compare_methods, evaluate, EvalMetrics, MethodComparison};
pub use synthgen::{corpus_stats, generate, CorpusStats, ScenarioConfig};
pub use timeline::{BehaviorInterval, InteractionSession, Section, UserRecord, Violation};
pub use trainer::{negative_log_likelihood, split_dataset, train, TrainConfig, TrainReport};
