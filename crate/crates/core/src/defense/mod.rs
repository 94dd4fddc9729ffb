//! Detection, input transforms and runtime cost ceilings.

mod detector;
mod guard;
mod transform;

pub use detector::{
    balanced_accuracy, classify_trace, featurize_trace, train_detector, DefenseVerdict, Detector, Flag,
    TraceFeatures, DETECTOR_EPOCHS, DETECTOR_LR,
};
pub use guard::{guarded_infer, BreachPolicy, GuardConfig, GuardedOutcome};
pub use transform::{transform_input, Transform};
