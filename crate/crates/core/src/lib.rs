//! Numerical toolkit for heat kernels and spectral determinants on
//! hyperbolic surfaces.
//!
//! The modules build on each other: [`hyp`] supplies the half-plane geometry,
//! [`plane_kernel`] the heat kernel of the hyperbolic plane, [`collar`] the
//! cylinder and collar computations, [`fuchsian`] group enumeration on a
//! compact genus-2 surface, and [`spectral`] the regularized log-determinant
//! machinery. [`bounds`] certifies the quantitative inequalities on grids.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod collar;
pub mod error;
pub mod fuchsian;
pub mod hyp;
pub mod plane_kernel;
pub mod quad;
pub mod spectral;

pub use error::{Estimate, HypError, Result};
