//! Discontinuous Galerkin minimization of nonconvex elastic energies on criss-cross triangulations.
//!
//! The guide in `book/` walks through the pieces; its code blocks run as doctests.

pub mod energy;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod minimize;
pub mod models;
pub mod space;
pub mod trace;
pub mod twinning;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spaces.md")]
    mod spaces {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/minimization.md")]
    mod minimization {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
