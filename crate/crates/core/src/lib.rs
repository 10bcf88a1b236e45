// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delaunay;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod integrate;
pub mod manifold;
pub mod modal;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/modes.md")]
    struct Modes;
    #[doc = include_str!("../../../book/src/chart.md")]
    struct Chart;
    #[doc = include_str!("../../../book/src/controller.md")]
    struct Controller;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/results.md")]
    struct Results;
}
