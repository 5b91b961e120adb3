//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped by
//! failure mode rather than by module so callers (notably the CLI) can map
//! them onto exit codes without knowing which layer produced them.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A requested tensor shape overflows `usize` when its dimensions are
    /// multiplied together.
    #[error("tensor size overflow: {n}x{c}x{h}x{w} does not fit in usize")]
    Size { n: usize, c: usize, h: usize, w: usize },

    /// An argument violates a documented precondition (zero fan-in, stride
    /// outside {1,2}, empty class count, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor shapes are inconsistent with the operation being applied.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Batch statistics were requested over fewer than two values per
    /// channel, which would make normalization degenerate.
    #[error("degenerate batch: batch norm needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    /// A network description is self-inconsistent (widths, strides,
    /// divisibility) and cannot be built or costed.
    #[error("invalid network spec: {0}")]
    Spec(String),

    /// A name was not found in the builtin registry.
    #[error("unknown builtin network: {0:?}")]
    Lookup(String),

    /// A spec document failed to parse. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A dataset file has the wrong size, magic, or layout.
    #[error("data format error: {0}")]
    Format(String),

    /// A dataset file parsed structurally but contains impossible values
    /// (e.g. an out-of-range label).
    #[error("corrupt data: {0}")]
    CorruptData(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
