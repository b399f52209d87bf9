//! Line-selection policies: heuristic baselines and learned networks.

mod baselines;
mod nets;

pub use baselines::{baseline_next_line, equispaced_order, lowbias_weights, BaselineKind};
pub use nets::{
    argmax_unacquired, masked_log_probs, sample_from_log_probs, select_q_action, Encoder, EncoderConfig, PolicyNet, PolicyOutput,
    QNet,
};
