//! Localization head, losses, optimizer and the clip training loop.
//!
//! The head is a simple surrogate: every search token votes for the object
//! center with a score and an offset, and the box is the score-weighted mean
//! of the votes. Training runs short clips frame by frame so that the
//! temporal token sees the same recurrence as at inference time.

mod head;
mod loss;
mod optim;
mod train;

pub use head::{head_forward, localize, HeadParams, Prediction, HEAD_OUTPUTS};
pub use loss::{compute_loss, load_balance_loss, token_labels, FrameLoss, LossWeights};
pub use optim::{AdamW, AdamWConfig};
pub use train::{
    clip_loss, plan_clip, smoothed_endpoints, train, write_loss_log, ClipLoss, ClipPlan, PlannedFrame, StepLog,
};

pub use crate::model::partition_parameters;
