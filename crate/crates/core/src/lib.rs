//! Pathwise (probability-free) integration on sampled paths.
//!
//! The crate works entirely on finite samples: a path is its values on a
//! [`TimeGrid`], limits along refining partitions are exposed as per-level
//! tables, and every supremum over partitions is taken over grid partitions.
//!
//! * [`paths`]: grids, Brownian and lacunary generators, stopped interpolants.
//! * [`partitions`]: partitions, nested sequences, truncation.
//! * [`variation`]: p-variation by dynamic programming, control functions.
//! * [`control`]: controlled-path decompositions and their diagnostics.
//! * [`integration`]: Riemann sums, Lévy area, sewing, quadratic variation.
//! * [`functional`]: chain rule, Föllmer and functional Itô residuals.

// negated comparisons are how NaN fails the argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod functional;
pub mod integration;
pub mod partitions;
pub mod paths;
pub mod sum;
pub mod variation;

pub use error::{Error, Result};
pub use partitions::{dyadic_sequence, Partition, PartitionSequence};
pub use paths::{SampledPath, TimeGrid};
