//! Binding-site prediction with E(3)-equivariant message passing and
//! coordinate-carrying virtual nodes.
//!
//! The guide under `book/` walks through the pieces; its code blocks run as
//! doctests of this crate.

pub mod diffengine;
pub mod error;
pub mod expressivity;
pub mod geometry;
pub mod graphio;
pub mod inference;
pub mod losses;
pub mod model;
pub mod runtime;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/kchain.md")]
    mod kchain {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/design.md")]
    mod design {}
}
