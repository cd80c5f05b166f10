//! Metaorder reconstruction, impact measurement and a synthetic market for
//! testing the whole pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calendar;
pub mod distributions;
pub mod farmer;
pub mod impact;
pub mod ingestion;
pub mod price;
pub mod reconstruction;
pub mod regression;
pub mod synthetic;
pub mod types;

pub use calendar::{Timestamp, TradingCalendar};
pub use price::Price;
pub use types::*;
