//! Motion-video mimicking: recovers root positions and joint rotations for
//! the frames between keyframes by matching a video frame by frame, moving
//! inward from both keyframes of every interval.

pub mod estimator;
pub mod loss;
pub mod optimize;
pub mod schedule;

pub use estimator::{JointEstimator, KnownJoints, SceneEstimator};
pub use loss::{mimic_loss, FrameTargets, LossTerms, MimicConfig, MimicScene};
pub use optimize::{mimic_frame, mimic_sequence, FrameRecord, FrameResult, MimicInput, MimicOutcome};
pub use schedule::{inward_schedule, plan_sequence, FrameTask, InitSource, Round, SequencePlan};
