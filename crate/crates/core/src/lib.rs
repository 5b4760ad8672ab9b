//! Darned lattices, their continuous-time random walks, and numerical checks of
//! the walk's measure, generator, isoperimetry and heat kernel.
//!
//! ```
//! use darnwalk::{DarnedLattice, DarningRegion};
//!
//! let k = DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap();
//! let g = DarnedLattice::build(&k, 3, 2.0).unwrap();
//! let star = g.star().unwrap();
//! assert!(g.degree(star) > 0);
//! ```

pub mod dynamics;
mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod isoperimetry;
pub mod lattice;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use dynamics::{RateMode, WalkConfig, WalkPath};
pub use error::{Error, Result};
pub use geometry::{DarningRegion, Extent, Point, Shape};
pub use lattice::{DarnedLattice, MetricTable, QuotientMetric, VertexId};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/walk.md")]
    mod walk {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/isoperimetry.md")]
    mod isoperimetry {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
