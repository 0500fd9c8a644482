//! LiftPool: invertible lifting-scheme pooling.
//!
//! A feature map is split into even/odd polyphase components, a predictor
//! estimates the odd samples from the even ones (the residual is the detail
//! band) and an updater smooths the even samples with the details (the
//! approximation band). Both operators come in a classical fixed form and a
//! learned form (two grouped convolutions with ReLU/Tanh). Applying the steps
//! separably in 2-D yields the LL/LH/HL/HH sub-bands; running them backwards
//! reconstructs the input exactly, which is what the up-pooling layer does.
//!
//! The crate also carries everything needed to exercise the layers at desk
//! scale: a reverse-mode autodiff tape over the required op set, baseline
//! pooling layers, task plus constraint losses, tiny classifier/segmentation
//! models, binary dataset parsers and synthetic data, and an SGD trainer with
//! robustness metrics. The numeric core is generic over the float type.

// Index-based loops are clearer than iterator chains in the tensor kernels,
// and the conv helpers legitimately take many positional parameters.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

pub mod autodiff;
pub mod config;
pub mod conv;
pub mod data;
pub mod lifting;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod pools;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod threads;
pub mod trainer;
pub mod workflows;

pub use scalar::Scalar;
pub use tensor::{PadMode, Tensor, TensorError, TensorResult};

/// Concrete single-precision aliases (the training / checkpoint path).
pub type Tensor32 = Tensor<f32>;
pub type Tape32 = autodiff::Tape<f32>;

/// Concrete double-precision aliases (the verification path).
pub type Tensor64 = Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
