//! Construction, solution and verification of classical solutions of the
//! fully degenerate Monge-Ampere problem `det D^2 f = h f^p` on convex planar
//! domains, where the solution vanishes on a convex subdomain.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] domains, Dirichlet data, grids and finite-difference calculus;
//! * [`transforms`] the density/pressure transform, singular distance,
//!   Holder seminorms and hodograph patches near the free boundary;
//! * [`radial`] the radial reduction, used as an independent oracle;
//! * [`solver`] the 2D sweep solver and free-boundary extraction;
//! * [`continuation`] the supersolution and the march in the forcing
//!   parameter;
//! * [`diagnostics`] the pressure operator, classification, comparison and
//!   the estimate suite;
//! * [`cli`] the batch front end behind the `degma` binary.

pub mod cli;
pub mod continuation;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod numerics;
pub mod radial;
pub mod solver;
pub mod transforms;

pub use error::{Error, Result};
pub use transforms::ExponentPack;
