//! The staged pipeline: warm-up with variation tracking, prompt
//! pre-training, prompt-conditioned fine-tuning of the adaptive weights, and
//! test-time adaptation of the prompt bank.

mod plan;
mod stages;
mod transcript;

pub use plan::{AdaptPlan, FinetunePlan, StagePlan, WarmupPlan};
pub use stages::{
    predict, predict_mae, run_finetune, run_warmup, test_time_adapt, AdaptOutcome, FinetuneOutcome, PromptContext,
    WarmupOutcome,
};
pub use transcript::{Transcript, UnitRecord};
