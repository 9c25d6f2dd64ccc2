//! Dense tensors, layer kernels with analytic backward passes, a recording
//! tape, momentum SGD and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, numeric_gradient};
pub use graph::{Graph, Var};
pub use optim::{clip_grad_norm, grad_norm, sgd_step};
pub use tensor::{Grads, ParamId, ParamStore, Parameter, Tensor};

use serde::{Deserialize, Serialize};

/// One entry of a declarative layer table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Linear {
        out_features: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    ConcatChannels,
}

impl LayerKind {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv2d extents must be positive".into());
                }
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err("maxpool2d extents must be positive".into());
                }
            }
            LayerKind::Linear { out_features } => {
                if out_features == 0 {
                    return Err("linear layer needs at least one output".into());
                }
            }
            LayerKind::LeakyRelu { slope } => {
                if !slope.is_finite() {
                    return Err("leaky relu slope must be finite".into());
                }
            }
            LayerKind::Sigmoid | LayerKind::ConcatChannels => {}
        }
        Ok(())
    }
}
