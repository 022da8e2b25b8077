//! Executable foliations for transfer learning.
//!
//! Task and model spaces are treated as charted manifolds. Sets of related
//! tasks are orbits of pseudogroups acting on the leaves of a foliation, and
//! learning is a gradient flow on the model space. The crate provides the
//! data types and numerical checks needed to build such structures and test
//! their defining properties at a finite sampling resolution:
//!
//! - [`geometry`]: coordinate vectors, charts, atlases, ball charts and the
//!   ball/Euclidean homeomorphism.
//! - [`relatedness`]: transformations, pseudogroups, orbits, invariants and
//!   similarity partitions.
//! - [`foliation`]: foliated charts, leaf pseudogroups and navigation along
//!   a leaf.
//! - [`learning`]: loss surfaces, RK4 gradient flows, loss-ball topology,
//!   equivariance and plaque-restricted retraining.
//! - [`maml`]: the quadratic-loss MAML foliation in closed form.
//! - [`prototypical`]: prototypical-network episodes and their global/local
//!   coordinate split.
//! - [`harness`]: seeded experiment runner behind the `foliate` binary.

// `!(x < y)` is used on purpose so that NaN lands on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod foliation;
pub mod geometry;
pub mod harness;
pub mod learning;
pub mod maml;
pub mod prototypical;
pub mod relatedness;

pub use error::{Error, Result};
pub use geometry::{Atlas, BallChart, Chart, CoordinateVector};
