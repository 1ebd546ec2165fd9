//! Training objectives: evidential regression losses, uncertainty-based task
//! weighting and the combined per-frame imitation objective.

mod evidential;
mod multitask;
mod objective;

pub use evidential::{
    evidence_regularizer, evidence_regularizer_grad, near_zero_boost, nll, nll_grad, Evidential,
    EvidentialGrad,
};
pub use multitask::{weighted_total, weighted_total_grads};
pub use objective::{
    frame_objective, FrameGrads, LossBreakdown, ObjectiveWeights, COMMAND_COUNT, COMMAND_NAMES,
};
