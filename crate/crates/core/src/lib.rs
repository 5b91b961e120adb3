//! A small, self-contained CNN kernel library built around depthwise
//! expansion: depthwise convolutions with a channel multiplier used as cheap
//! stand-ins for 1x1 channel-expansion layers.
//!
//! The crate provides:
//! - rank-4 NCHW tensors and a fully deterministic RNG ([`tensor`], [`rng`]);
//! - convolution / batch-norm / head primitives with explicit backward
//!   passes ([`ops`]);
//! - four residual-style building blocks and network assembly from declarative
//!   specs, including a handful of builtin CIFAR/ImageNet architectures
//!   ([`blocks`], [`arch`]);
//! - an analytic parameter/MAC cost model with embedded reference tables and
//!   a text spec-file format ([`analysis`], [`tables`], [`specfile`]);
//! - a CIFAR/synthetic data pipeline and a momentum-SGD trainer
//!   ([`data`], [`train`]);
//! - finite-difference gradient checking utilities ([`gradcheck`]).
//!
//! Everything is f64 and seed-deterministic: identical seeds give identical
//! results regardless of thread count, because all floating-point reductions
//! run in a fixed order.

#![forbid(unsafe_code)]

pub mod analysis;
pub mod arch;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod specfile;
pub mod tables;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
