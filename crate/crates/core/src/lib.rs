//! Rate-induced tipping in fast-slow systems with a folded critical manifold.

pub mod canard;
pub mod desing;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod model;
pub mod ode;
pub mod parallel;
pub mod poly;
pub mod roots;
pub mod scan;

pub use error::{Error, Result};
