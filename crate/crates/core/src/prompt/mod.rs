//! Spatial/temporal prompt encoders, the interaction module that regresses
//! window distribution parameters from them, and their self-supervised
//! training.

mod bank;
mod pretrain;
mod stim;

pub use bank::{align_spatial, align_temporal, Encoder, EncoderTrace, PromptBank, PromptConfig, PromptExport};
pub use pretrain::{pretrain_prompts, r_squared, ssl_batch_grad, ssl_epoch, ssl_loss, PretrainConfig, PretrainHistory, SslSet};
pub use stim::{softplus, stim_backward, stim_forward, StimGrad, StimOutput, StimWeights};
