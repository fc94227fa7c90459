//! Compiles every book chapter as a module doc so `cargo test` runs its
//! listings. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/world.md")]
pub mod world {}
#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}
#[doc = include_str!("../../../book/src/decomposition.md")]
pub mod decomposition {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/rloo.md")]
pub mod rloo {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
