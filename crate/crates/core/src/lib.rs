//! Desk-scale transfer-learning laboratory.
//!
//! A compact reverse-mode engine ([`autodiff`]) drives three miniature CNN
//! families ([`zoo`]). [`strategy`] implements eight fine-tuning schedules
//! (freeze masks, starting-point penalties, relative-gradient-norm learning
//! rates), [`train`] runs the Adam loop with early stopping, [`metrics`]
//! scores predictions and [`data`] holds datasets, preprocessing, the FTDS
//! file format and a synthetic domain-shift generator.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod param;
pub mod strategy;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use param::{BlockTag, Parameter};
pub use tensor::{LabelMatrix, TaskKind, Tensor};
