//! Deep-learning solver for large isometric bending of bilayer plates.
//!
//! A residual tanh network `ŷ(x; θ)` is lifted to a deformation
//! `û = g₁ ŷ + g₂` that satisfies clamped boundary conditions exactly. The
//! penalized bending energy `E[û] + β C[û]²` is estimated by Monte Carlo and
//! minimized with Adam, optionally after pre-training on nested subdomains
//! grown from the clamped edge.

pub mod autodiff;
pub mod boundary;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod network;
pub mod trainer;

pub use error::{Error, Result};

/// A point of the reference plane.
pub type Point = [f64; 2];
