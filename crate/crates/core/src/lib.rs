//! Mixed-precision Euclidean distance self-join.
//!
//! Coordinates are stored as FP16, multiplied exactly and accumulated in
//! FP32 with round-toward-zero additions, emulating a 16x8x16 tensor-core
//! MMA. Squared distances come from the expansion
//! `|p_i - p_j|^2 = s_i + s_j - 2 <p_i, p_j>` with precomputed squared norms.
//!
//! * [`dataset`] loads, generates, converts and pads point sets.
//! * [`mma`] holds the arithmetic contract.
//! * [`tiling`] runs the blocked, work-queue driven join.
//! * [`oracle`] provides the FP64 and the order-exact scalar references.
//! * [`layout`] simulates the swizzled staging-buffer bank accesses.
//! * [`analysis`] covers reuse calculus, accuracy and selectivity metrics.
//! * [`harness`] backs the `halfjoin` command-line tool.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod layout;
pub mod mma;
pub mod oracle;
pub mod result;
pub mod tiling;

pub use dataset::{Dataset, HalfDataset};
pub use error::{Error, Result};
pub use result::{Pair, ResultSet};
pub use tiling::TileConfig;
