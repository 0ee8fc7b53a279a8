//! Imitation reward, episode evaluation, CMA-ES and swing-height optimization.

pub mod cmaes;
pub mod episode;
pub mod reward;
pub mod swing;

pub use cmaes::{cma_es, Bounds, CmaConfig, CmaResult, IterRecord};
pub use episode::{EpisodeConfig, EpisodeMode, EpisodeResult, EpisodeRunner, FallCriteria, LogEntry, Termination};
pub use reward::{reference_targets, state_from_target, step_reward, RefTarget, RewardTerms, RewardWeights};
pub use swing::{
    optimize_stitched, optimize_swing_z, save_history, stitch, stitch_sources, write_history, SwingZConfig,
    SwingZResult, SWING_DIMS,
};
