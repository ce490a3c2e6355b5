//! Lightweight Siamese U-Net change detection.
//!
//! The crate bundles a small reverse-mode tensor engine ([`tensor`], [`ops`]),
//! the change-detection network ([`model`]), optimization ([`train`]),
//! evaluation ([`metrics`]) and dataset / checkpoint I/O ([`data`]).

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod param;
pub mod tensor;
pub mod train;

pub use config::{Precision, RunConfig};
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, Metrics};
pub use model::{ClassifierKind, ForwardOutput, MixingStrategy, ModelConfig, TinyCd};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::{no_grad, DType, Element, Shape, Tensor};
