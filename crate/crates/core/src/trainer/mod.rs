//! Classifier training, losses and evaluation.

mod eval;
mod loss;
mod train;

pub use eval::{
    compare_reports, evaluate, ClassDelta, ClassMetrics, Confusion, DeltaReport, EvalReport, DEFAULT_DECISION_THRESHOLD,
};
pub use loss::{
    bce_multilabel_grad, bce_multilabel_loss, focal_grad, focal_loss, LossKind, DEFAULT_FOCAL_ALPHA,
    DEFAULT_FOCAL_GAMMA,
};
pub use train::{
    train_classifier, ConstantProvider, EpochLog, EpochProvider, Optimizer, PilProvider, TrainConfig, TrainingLog,
};
