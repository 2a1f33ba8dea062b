pub mod datagen;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod robust;
pub mod selftest;
pub mod solver;
pub mod warp;

pub use error::{Error, Result};

// Chapters of the guide in book/, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/warps.md")]
    mod warps {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
