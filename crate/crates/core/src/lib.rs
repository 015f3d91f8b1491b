//! Default contagion with domino effect.
//!
//! A portfolio of firms whose values follow independent diffusions defaults
//! when a value reaches its barrier. Every default pushes the surviving firms
//! down by a fixed contagion amount, which may in turn default them in the
//! same instant. This crate provides
//!
//! * [`model`]: the portfolio data model and its reduction to an arithmetic
//!   Brownian first-passage problem,
//! * [`passage`]: closed-form first-passage densities and exact samplers,
//! * [`domain`]: the contagion-domain set algebra (cascade closure, boxes,
//!   inclusion-exclusion chains),
//! * [`analytic`]: semi-analytic distributions of the number of defaults, the
//!   contagion times and joint survival via nested quadrature,
//! * [`montecarlo`]: an exact renewal simulator and a discretized path
//!   simulator with Brownian-bridge crossing correction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod domain;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod normal;
pub mod passage;
pub mod quadrature;
pub mod rng;

pub use error::{DominoError, Result};
pub use model::{ContagionMatrix, FirmParams, ModelKind, Portfolio};
pub use domain::IndexSet;
