//! The guide's chapters, compiled so that `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/input_files.md")]
pub mod input_files {}
#[doc = include_str!("../../../book/src/metaorders.md")]
pub mod metaorders {}
#[doc = include_str!("../../../book/src/impact_curves.md")]
pub mod impact_curves {}
#[doc = include_str!("../../../book/src/impact_model.md")]
pub mod impact_model {}
#[doc = include_str!("../../../book/src/lengths.md")]
pub mod lengths {}
#[doc = include_str!("../../../book/src/sqrt_and_fair_pricing.md")]
pub mod sqrt_and_fair_pricing {}
#[doc = include_str!("../../../book/src/synthetic_market.md")]
pub mod synthetic_market {}
#[doc = include_str!("../../../book/src/command_line.md")]
pub mod command_line {}
#[doc = include_str!("../../../book/src/validation.md")]
pub mod validation {}
