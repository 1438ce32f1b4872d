//! Automatic modulation classification workbench.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`modem`] synthesizes unit-power complex-baseband frames for nine
//!    modulation classes and injects calibrated AWGN.
//! 2. [`features`] slices a frame into overlapping windows and renders
//!    each as a three-channel (amplitude, phase, I/Q) image.
//! 3. [`network`] runs an AlexNet-style convolutional stack per window,
//!    an LSTM across windows, and a dense classifier head. All layers are
//!    built on the reverse-mode engine in [`autodiff`].
//! 4. [`training`] implements stratified splits, Adam with early stopping,
//!    and the hyperparameter grid.
//! 5. [`evaluation`] computes confusion matrices, P/R/F1, ROC/AUC, PR and
//!    F1-threshold curves.
//!
//! Corpus files live in [`corpus`]; checkpoints in [`checkpoint`].

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod modem;
pub mod network;
pub mod report;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
