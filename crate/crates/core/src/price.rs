//! Exact decimal prices.
//!
//! Prices are stored as signed 64-bit integers in units of 10⁻⁸ of the quote
//! currency. Parsing and formatting never go through binary floating point, so
//! a file read and written back is reproduced byte for byte.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of decimal places carried by [`Price`].
pub const PRICE_DECIMALS: u32 = 8;
/// `10^PRICE_DECIMALS`.
pub const PRICE_SCALE: i64 = 100_000_000;

/// A fixed-point decimal price with eight decimal places.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PriceParseError {
    #[error("empty price")]
    Empty,
    #[error("malformed price {0:?}")]
    Malformed(String),
    #[error("price {0:?} has more than {PRICE_DECIMALS} decimals")]
    TooPrecise(String),
    #[error("price {0:?} out of range")]
    Overflow(String),
}

impl Price {
    pub const ZERO: Price = Price(0);

    /// Builds a price from its raw integer representation (units of 10⁻⁸).
    pub const fn from_units(units: i64) -> Self {
        Price(units)
    }

    pub const fn units(self) -> i64 {
        self.0
    }

    /// Rounds a floating point value to the nearest representable price
    /// (half away from zero). Returns `None` for non-finite or out-of-range
    /// input.
    pub fn from_f64(value: f64) -> Option<Self> {
        let scaled = (value * PRICE_SCALE as f64).round();
        if !scaled.is_finite() || scaled.abs() >= i64::MAX as f64 {
            return None;
        }
        Some(Price(scaled as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / PRICE_SCALE as f64
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn checked_add(self, other: Price) -> Option<Price> {
        self.0.checked_add(other.0).map(Price)
    }

    pub fn checked_sub(self, other: Price) -> Option<Price> {
        self.0.checked_sub(other.0).map(Price)
    }
}

impl FromStr for Price {
    type Err = PriceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        if text.is_empty() {
            return Err(PriceParseError::Empty);
        }
        let malformed = || PriceParseError::Malformed(s.to_string());
        let (negative, body) = match text.as_bytes()[0] {
            b'-' => (true, &text[1..]),
            b'+' => (false, &text[1..]),
            _ => (false, text),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(malformed());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(malformed());
        }
        if body.ends_with('.') {
            return Err(malformed());
        }
        if frac_part.len() > PRICE_DECIMALS as usize {
            return Err(PriceParseError::TooPrecise(s.to_string()));
        }
        let overflow = || PriceParseError::Overflow(s.to_string());
        let int_value: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| overflow())?
        };
        let mut frac_value: i64 = 0;
        for b in frac_part.bytes() {
            frac_value = frac_value * 10 + i64::from(b - b'0');
        }
        frac_value *= 10_i64.pow(PRICE_DECIMALS - frac_part.len() as u32);
        let units = int_value
            .checked_mul(PRICE_SCALE)
            .and_then(|v| v.checked_add(frac_value))
            .ok_or_else(overflow)?;
        Ok(Price(if negative { -units } else { units }))
    }
}

/// Canonical form: no trailing fractional zeros, no decimal point for whole
/// numbers (`10`, `10.1`, `0.00000001`).
impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let scale = PRICE_SCALE as u64;
        let int_part = abs / scale;
        let frac = abs % scale;
        if frac == 0 {
            return write!(f, "{sign}{int_part}");
        }
        let digits = format!("{:0width$}", frac, width = PRICE_DECIMALS as usize);
        write!(f, "{sign}{int_part}.{}", digits.trim_end_matches('0'))
    }
}
