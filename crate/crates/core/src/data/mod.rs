//! Dataset ingestion, synthetic generation, windowing, normalization and
//! environment descriptors.

mod dataset;
mod env;
mod norm;
mod synth;
mod windows;

pub use dataset::{load_dataset, save_dataset, Manifest, SpatioTemporalDataset};
pub use env::{day_of_week, step_of_day, steps_per_day, EnvConfig, SpatialEnv, TemporalEnv, TrendScale};
pub use norm::NormStats;
pub use synth::{synth_generate, CommunityConfig, Regime, RegimeKey, SynthConfig};
pub use windows::{
    brute_force_distribution, make_windows, observation_windows, window_distribution, WindowSet,
};
