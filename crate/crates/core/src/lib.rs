//! A desk-scale laboratory for 2D-to-3D hand pose lifting.
//!
//! The crate compares spatial mixing blocks (graph convolution, skeleton-
//! masked attention, full self-attention) and positional encodings under an
//! identical training recipe, on top of a self-contained reverse-mode
//! autodiff engine, a synthetic kinematic hand generator, and an evaluation
//! stack (MPJPE, PCK/AUC, attention statistics, noise robustness).

pub mod autodiff;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod skeleton;
pub mod trainer;

pub use autodiff::{BoolMask, Tape, Tensor, TensorError};
pub use data::{CameraIntrinsics, PoseSample};
pub use metrics::EvalReport;
pub use model::{LiftingModel, ModelConfig, PeKind, SpatialKind};
pub use trainer::TrainConfig;
pub use skeleton::{build_hand_skeleton, SkeletonGraph};
