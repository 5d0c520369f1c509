//! Multi-penalty regression with tuned penalty vectors.
//!
//! Three model families share one tuning stack:
//!
//! * [`ridge`]: grouped ridge regression with one penalty per covariate group,
//! * [`gam`]: additive smoothing splines with one Sobolev penalty per component,
//! * [`enet`]: grouped elastic net with one penalty per covariate group.
//!
//! Penalty vectors are selected by a train/validation split or by averaged
//! K-fold cross-validation ([`tuner`]), using hypergradients obtained by
//! implicitly differentiating each family's stationarity conditions.
//! [`bounds`] evaluates the Lipschitz-in-λ factors and oracle-inequality
//! remainder shapes, and [`data`] provides the simulation designs, splits
//! and penalty tying maps.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod enet;
mod error;
pub mod gam;
pub(crate) mod linalg;
pub mod ridge;
pub mod tuner;

pub use error::{Error, Result};
