//! Planner network, its input features, the checkpoint format and the
//! training loop.

mod battery;
mod checkpoint;
mod features;
mod planner;
mod train;

pub use battery::gradient_battery;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use features::{
    lateral_hlc, longitudinal_hlc, meas_features, scan_features, LateralHlc, LongitudinalHlc,
    Observation, LATERAL_TAIL, LATERAL_WINDOW, MEAS_DIM, POS_NORM, SPEED_MARGIN,
};
pub use planner::{Planner, PlannerCache, PlannerInput, PlannerOutput};
pub use train::{train, TrainReport};
