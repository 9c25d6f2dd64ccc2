//! Joint Neural Networks: twin-branch convolutional networks whose branches
//! exchange features through joint layers, for one-shot pair recognition and
//! one-shot multi-box detection.
//!
//! Modules follow the pipeline: [`numerics`] (tensors, kernels, SGD),
//! [`arch`] (network construction), [`detmath`] (losses and anchor math),
//! [`data`] (manifests, sampling, synthetic data), [`metrics`] and
//! [`harness`] (configuration, training, evaluation, checkpoints).

pub mod arch;
pub mod data;
pub mod detmath;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;

pub use arch::{Detector, DetectorSpec, JointPlacementMask, Preset, Recognizer, RecognizerSpec};
pub use error::{Error, Result};
pub use numerics::{Parameter, Tensor};
