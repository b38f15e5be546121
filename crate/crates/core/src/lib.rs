//! Mixtures of tree-structured graphical models over 2D hand keypoint heatmaps.
//!
//! Unary heatmaps are rotated into a canonical hand orientation, refined by
//! exact sum-product inference in each model of a pool, blended with soft
//! shape weights and rotated back. Pairwise potentials depend only on the
//! displacement between neighboring keypoints, so every message is a 2D
//! convolution.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod inference;
pub mod io;
pub mod learning;
pub mod pipeline;
pub mod pool;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
