//! Complementary spatiotemporal learning.
//!
//! A graph/temporal-convolution forecaster whose weights are split, from
//! their training dynamics, into a frozen stable part and a trainable
//! adaptive part; self-supervised spatial and temporal prompts condition
//! the adaptive part and are re-fitted at test time on a few unlabeled
//! windows.

pub mod backbone;
pub mod data;
pub mod disentangle;
pub mod error;
pub mod experiment;
pub mod prompt;
pub mod scenarios;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
