pub mod checkpoint;
pub mod compression;
pub mod cp;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod recovery;
mod rng;
pub mod streaming;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

// The book's chapters are compiled as doctests so that its examples keep
// working as the API moves.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/intro.md")]
mod book_intro {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tensors.md")]
mod book_tensors {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cp_als.md")]
mod book_cp_als {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/compression.md")]
mod book_compression {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/recovery.md")]
mod book_recovery {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/streaming.md")]
mod book_streaming {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
