//! Training procedures: restoration pretraining, PPO, the co-adaptive loop and DQN.

mod dqn;
mod gae;
mod masc;
mod ppo;
mod pretrain;

pub use dqn::{dqn_train, td_targets, DqnConfig, DqnLog, DqnOutcome, Experience, ReplayBuffer};
pub use gae::{compute_gae, normalize_advantages};
pub use masc::{masc_train, MascConfig, MascOutcome, RolloutLog};
pub use ppo::{ppo_update, PpoConfig, PpoStats, RolloutBuffer, Transition};
pub use pretrain::{mean_l1, pretrain_mar, restoration_pairs, EpochLog, PretrainConfig, PretrainOutcome};
