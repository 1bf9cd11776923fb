//! Centralized training of the decentralized agents.

pub mod episode;
pub mod gap;
pub mod losses;
pub mod record;
pub mod trainer;

pub use episode::{run_episode, EpisodeTrace, Phase, PhaseClock, RequestRule, RolloutSettings, EXPLORATION_PRIOR};
pub use gap::{gap_entries, mean_gap, GapEntry, GapMatrix};
pub use losses::PolicyGradient;
pub use record::{Mailbox, Received, ReplayBuffer, TransitionRecord};
pub use trainer::{mean_std, random_policy_returns, EvalPoint, LambdaMode, LossStats, TrainConfig, Trainer, UpdateReport};
