//! Frequency-domain single-image super-resolution.
//!
//! Images are converted to zero-centered YCbCr, the luma plane is cut into
//! 32x32 DCT blocks, and the low-frequency corner of every block is
//! rearranged into a stack of per-frequency feature maps. A dual-branch
//! network predicts the high-resolution maps, which are written back into
//! the blocks and inverse transformed.
//!
//! The `book/` directory next to this crate walks through each stage; its
//! code listings are compiled and run as doc-tests of this crate.

pub mod cli;
pub mod codec;
pub mod enhance;
pub mod error;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

// The guide's listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/merge.md")]
    mod merge {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
