//! Domain records shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use thiserror::Error;

use crate::calendar::{Timestamp, TradingCalendar};
use crate::price::{Price, PRICE_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    /// ε: +1 for a buy, −1 for a sell.
    pub const fn sign(self) -> i8 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }

    pub const fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

/// ε(side).
pub const fn sign_of(side: Side) -> i8 {
    side.sign()
}

impl FromStr for Side {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "buy" => Ok(Side::Buy),
            "sell" => Ok(Side::Sell),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrderClass {
    AggressiveLimit,
    PassiveLimit,
    Other,
}

impl OrderClass {
    pub const fn as_str(self) -> &'static str {
        match self {
            OrderClass::AggressiveLimit => "aggressive_limit",
            OrderClass::PassiveLimit => "passive_limit",
            OrderClass::Other => "other",
        }
    }
}

impl FromStr for OrderClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "aggressive_limit" => Ok(OrderClass::AggressiveLimit),
            "passive_limit" => Ok(OrderClass::PassiveLimit),
            "other" => Ok(OrderClass::Other),
            _ => Err(()),
        }
    }
}

impl fmt::Display for OrderClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unvalidated order-log fields, as read from one line.
#[derive(Debug, Clone, Copy)]
pub struct RawFill<'a> {
    pub timestamp_ms: &'a str,
    pub agent_id: &'a str,
    pub instrument_id: &'a str,
    pub venue_id: &'a str,
    pub side: &'a str,
    pub price: &'a str,
    pub quantity: &'a str,
    pub order_class: &'a str,
}

/// Why a candidate fill was refused.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("price > 0 violated")]
    NonPositivePrice,
    #[error("quantity > 0 violated")]
    NonPositiveQuantity,
    #[error("malformed price {0:?}")]
    MalformedPrice(String),
    #[error("malformed quantity {0:?}")]
    MalformedQuantity(String),
    #[error("fractional quantity {0:?}")]
    FractionalQuantity(String),
    #[error("unknown side {0:?}")]
    UnknownSide(String),
    #[error("unknown order class {0:?}")]
    UnknownOrderClass(String),
    #[error("malformed timestamp {0:?}")]
    MalformedTimestamp(String),
    #[error("empty {0}")]
    EmptyField(&'static str),
}

/// One executed order slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fill {
    pub timestamp: Timestamp,
    pub day: NaiveDate,
    pub agent_id: Arc<str>,
    pub instrument_id: Arc<str>,
    pub venue_id: Arc<str>,
    pub side: Side,
    pub price: Price,
    pub quantity: u64,
    pub order_class: OrderClass,
}

impl Fill {
    /// Validates an already-typed fill and assigns its trading day.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        timestamp: Timestamp,
        agent_id: impl Into<Arc<str>>,
        instrument_id: impl Into<Arc<str>>,
        venue_id: impl Into<Arc<str>>,
        side: Side,
        price: Price,
        quantity: u64,
        order_class: OrderClass,
        calendar: &TradingCalendar,
    ) -> Result<Fill, Rejection> {
        if !price.is_positive() {
            return Err(Rejection::NonPositivePrice);
        }
        if quantity == 0 {
            return Err(Rejection::NonPositiveQuantity);
        }
        let day = calendar
            .day_of(timestamp)
            .ok_or_else(|| Rejection::MalformedTimestamp(timestamp.to_string()))?;
        Ok(Fill {
            timestamp,
            day,
            agent_id: agent_id.into(),
            instrument_id: instrument_id.into(),
            venue_id: venue_id.into(),
            side,
            price,
            quantity,
            order_class,
        })
    }

    pub fn notional_units(&self) -> i128 {
        i128::from(self.price.units()) * i128::from(self.quantity)
    }
}

/// Turns raw text fields into a [`Fill`], or names the violated invariant.
pub fn validate_fill(raw: &RawFill<'_>, calendar: &TradingCalendar) -> Result<Fill, Rejection> {
    let ts_text = raw.timestamp_ms.trim();
    let timestamp = ts_text
        .parse::<i64>()
        .map(Timestamp)
        .map_err(|_| Rejection::MalformedTimestamp(raw.timestamp_ms.to_string()))?;
    for (name, value) in [
        ("agent_id", raw.agent_id),
        ("instrument_id", raw.instrument_id),
        ("venue_id", raw.venue_id),
    ] {
        if value.is_empty() {
            return Err(Rejection::EmptyField(name));
        }
    }
    let side: Side = raw
        .side
        .parse()
        .map_err(|_| Rejection::UnknownSide(raw.side.to_string()))?;
    let price: Price = raw
        .price
        .parse()
        .map_err(|_| Rejection::MalformedPrice(raw.price.to_string()))?;
    let quantity = parse_quantity(raw.quantity)?;
    let order_class: OrderClass = raw
        .order_class
        .parse()
        .map_err(|_| Rejection::UnknownOrderClass(raw.order_class.to_string()))?;
    Fill::new(
        timestamp,
        raw.agent_id,
        raw.instrument_id,
        raw.venue_id,
        side,
        price,
        quantity,
        order_class,
        calendar,
    )
}

/// Whole shares. Negative or zero counts map to the `quantity > 0`
/// rejection; anything with a fractional part is refused outright.
pub(crate) fn parse_quantity(text: &str) -> Result<u64, Rejection> {
    let t = text.trim();
    if let Ok(q) = t.parse::<u64>() {
        return if q == 0 {
            Err(Rejection::NonPositiveQuantity)
        } else {
            Ok(q)
        };
    }
    if let Ok(q) = t.parse::<i64>() {
        if q <= 0 {
            return Err(Rejection::NonPositiveQuantity);
        }
    }
    match t.parse::<Price>() {
        Ok(p) if p.units() <= 0 => Err(Rejection::NonPositiveQuantity),
        Ok(p) if p.units() % PRICE_SCALE != 0 => Err(Rejection::FractionalQuantity(text.into())),
        _ => Err(Rejection::MalformedQuantity(text.into())),
    }
}

/// A fill after same-second aggregation. The notional is kept exactly
/// (price units × shares) so merging never loses precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub timestamp: Timestamp,
    pub quantity: u64,
    pub notional: i128,
    /// How many raw fills were merged into this one.
    pub merged: u32,
}

impl Execution {
    pub fn new(timestamp: Timestamp, price: Price, quantity: u64) -> Self {
        Execution {
            timestamp,
            quantity,
            notional: i128::from(price.units()) * i128::from(quantity),
            merged: 1,
        }
    }

    /// Quantity-weighted mean price.
    pub fn price(&self) -> f64 {
        self.notional as f64 / self.quantity as f64 / PRICE_SCALE as f64
    }

    /// Price rounded to tape precision, for output.
    pub fn rounded_price(&self) -> Price {
        let q = i128::from(self.quantity);
        let half = q / 2;
        let units = if self.notional >= 0 {
            (self.notional + half) / q
        } else {
            (self.notional - half) / q
        };
        Price::from_units(units as i64)
    }
}

impl From<&Fill> for Execution {
    fn from(fill: &Fill) -> Self {
        Execution::new(fill.timestamp, fill.price, fill.quantity)
    }
}

/// Grouping key of a metaorder: agent, instrument, direction and day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetaorderKey {
    pub agent_id: Arc<str>,
    pub instrument_id: Arc<str>,
    pub side: Side,
    pub day: NaiveDate,
}

impl MetaorderKey {
    pub fn of(fill: &Fill) -> Self {
        MetaorderKey {
            agent_id: fill.agent_id.clone(),
            instrument_id: fill.instrument_id.clone(),
            side: fill.side,
            day: fill.day,
        }
    }
}

impl fmt::Display for MetaorderKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.agent_id, self.instrument_id, self.side, self.day
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetaorderError {
    #[error("metaorder needs at least two executions, got {0}")]
    TooShort(usize),
    #[error("execution timestamps decrease at index {0}")]
    Unsorted(usize),
    #[error("execution {0} has zero quantity")]
    ZeroQuantity(usize),
    #[error("executions {0} and {1} fall in the same second")]
    SameSecond(usize, usize),
    #[error("fill {0} does not share the metaorder key")]
    KeyMismatch(usize),
    #[error("non-positive duration")]
    ZeroDuration,
    #[error("market volume {volume} is smaller than metaorder size {quantity}")]
    VolumeBelowSize { volume: u64, quantity: u64 },
    #[error("market volume must be positive")]
    ZeroVolume,
}

/// A reconstructed metaorder ω.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metaorder {
    key: MetaorderKey,
    executions: Vec<Execution>,
    quantity: u64,
    market_volume: Option<u64>,
}

impl Metaorder {
    /// Builds a metaorder from already merged executions.
    ///
    /// Executions must be time-sorted, fall in distinct seconds, have positive
    /// quantities and number at least two.
    pub fn new(key: MetaorderKey, executions: Vec<Execution>) -> Result<Self, MetaorderError> {
        if executions.len() < 2 {
            return Err(MetaorderError::TooShort(executions.len()));
        }
        for (i, e) in executions.iter().enumerate() {
            if e.quantity == 0 {
                return Err(MetaorderError::ZeroQuantity(i));
            }
            if i > 0 {
                let prev = &executions[i - 1];
                if e.timestamp < prev.timestamp {
                    return Err(MetaorderError::Unsorted(i));
                }
                if e.timestamp.second() == prev.timestamp.second() {
                    return Err(MetaorderError::SameSecond(i - 1, i));
                }
            }
        }
        let first = executions[0].timestamp;
        let last = executions[executions.len() - 1].timestamp;
        if last <= first {
            return Err(MetaorderError::ZeroDuration);
        }
        let quantity = executions.iter().map(|e| e.quantity).sum();
        Ok(Metaorder {
            key,
            executions,
            quantity,
            market_volume: None,
        })
    }

    /// Groups raw fills of one key into a metaorder: checks the shared key and
    /// time order, then merges same-second fills.
    pub fn from_fills(fills: &[Fill]) -> Result<Self, MetaorderError> {
        let Some(first) = fills.first() else {
            return Err(MetaorderError::TooShort(0));
        };
        let key = MetaorderKey::of(first);
        for (i, f) in fills.iter().enumerate() {
            if f.agent_id != key.agent_id
                || f.instrument_id != key.instrument_id
                || f.side != key.side
                || f.day != key.day
            {
                return Err(MetaorderError::KeyMismatch(i));
            }
        }
        let executions: Vec<Execution> = fills.iter().map(Execution::from).collect();
        let merged = crate::ingestion::aggregate_same_second(&executions)
            .map_err(|e| MetaorderError::Unsorted(e.index))?;
        Metaorder::new(key, merged)
    }

    pub fn key(&self) -> &MetaorderKey {
        &self.key
    }

    pub fn side(&self) -> Side {
        self.key.side
    }

    /// ε(ω) as a float, ready for multiplication.
    pub fn sign(&self) -> f64 {
        f64::from(self.key.side.sign())
    }

    pub fn executions(&self) -> &[Execution] {
        &self.executions
    }

    /// t0(ω).
    pub fn start(&self) -> Timestamp {
        self.executions[0].timestamp
    }

    pub fn end(&self) -> Timestamp {
        self.executions[self.executions.len() - 1].timestamp
    }

    /// T(ω) in seconds.
    pub fn duration_secs(&self) -> f64 {
        self.end().seconds_since(self.start())
    }

    pub fn duration_millis(&self) -> i64 {
        self.end().millis() - self.start().millis()
    }

    /// N(ω).
    pub fn length(&self) -> usize {
        self.executions.len()
    }

    /// Q(ω).
    pub fn quantity(&self) -> u64 {
        self.quantity
    }

    /// V(ω), once enriched from a tape.
    pub fn market_volume(&self) -> Option<u64> {
        self.market_volume
    }

    /// Q/V, once enriched.
    pub fn participation(&self) -> Option<f64> {
        self.market_volume
            .map(|v| self.quantity as f64 / v as f64)
    }

    pub fn with_market_volume(mut self, volume: u64) -> Result<Self, MetaorderError> {
        if volume == 0 {
            return Err(MetaorderError::ZeroVolume);
        }
        if volume < self.quantity {
            return Err(MetaorderError::VolumeBelowSize {
                volume,
                quantity: self.quantity,
            });
        }
        self.market_volume = Some(volume);
        Ok(self)
    }

    /// Σ notional, exact.
    pub fn notional(&self) -> i128 {
        self.executions.iter().map(|e| e.notional).sum()
    }
}

/// A market-wide print.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trade {
    pub timestamp: Timestamp,
    pub price: Price,
    pub quantity: u64,
}

/// Best bid and offer snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quote {
    pub timestamp: Timestamp,
    pub bid: Price,
    pub ask: Price,
}

impl Quote {
    pub fn mid(&self) -> f64 {
        (self.bid.units() as f64 + self.ask.units() as f64) / 2.0 / PRICE_SCALE as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TapeError {
    #[error("trades not time-sorted at index {0}")]
    UnsortedTrades(usize),
    #[error("quotes not time-sorted at index {0}")]
    UnsortedQuotes(usize),
    #[error("crossed quote at index {0}: bid >= ask")]
    CrossedQuote(usize),
}

/// Per-instrument, per-day market series.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeTape {
    instrument_id: Arc<str>,
    day: NaiveDate,
    trades: Vec<Trade>,
    quotes: Option<Vec<Quote>>,
    cumulative_volume: Vec<u64>,
}

impl TradeTape {
    pub fn new(
        instrument_id: impl Into<Arc<str>>,
        day: NaiveDate,
        trades: Vec<Trade>,
        quotes: Option<Vec<Quote>>,
    ) -> Result<Self, TapeError> {
        if let Some(i) = (1..trades.len()).find(|&i| trades[i].timestamp < trades[i - 1].timestamp)
        {
            return Err(TapeError::UnsortedTrades(i));
        }
        if let Some(qs) = &quotes {
            if let Some(i) = (1..qs.len()).find(|&i| qs[i].timestamp < qs[i - 1].timestamp) {
                return Err(TapeError::UnsortedQuotes(i));
            }
            if let Some(i) = qs.iter().position(|q| q.bid >= q.ask) {
                return Err(TapeError::CrossedQuote(i));
            }
        }
        let mut acc = 0u64;
        let cumulative_volume = trades
            .iter()
            .map(|t| {
                acc += t.quantity;
                acc
            })
            .collect();
        Ok(TradeTape {
            instrument_id: instrument_id.into(),
            day,
            trades,
            quotes,
            cumulative_volume,
        })
    }

    pub fn instrument_id(&self) -> &str {
        &self.instrument_id
    }

    pub fn day(&self) -> NaiveDate {
        self.day
    }

    pub fn trades(&self) -> &[Trade] {
        &self.trades
    }

    pub fn quotes(&self) -> Option<&[Quote]> {
        self.quotes.as_deref()
    }

    pub fn has_quotes(&self) -> bool {
        self.quotes.as_ref().is_some_and(|q| !q.is_empty())
    }

    /// Shares traded with `from <= timestamp <= to`.
    pub fn volume_between(&self, from: Timestamp, to: Timestamp) -> u64 {
        if to < from {
            return 0;
        }
        let lo = self.trades.partition_point(|t| t.timestamp < from);
        let hi = self.trades.partition_point(|t| t.timestamp <= to);
        if hi <= lo {
            return 0;
        }
        let before = if lo == 0 { 0 } else { self.cumulative_volume[lo - 1] };
        self.cumulative_volume[hi - 1] - before
    }

    /// Latest quote with `timestamp <= at`.
    pub fn quote_at(&self, at: Timestamp) -> Option<&Quote> {
        let qs = self.quotes.as_ref()?;
        let idx = qs.partition_point(|q| q.timestamp <= at);
        idx.checked_sub(1).map(|i| &qs[i])
    }

    /// Latest quote strictly before `at`.
    pub fn quote_before(&self, at: Timestamp) -> Option<&Quote> {
        let qs = self.quotes.as_ref()?;
        let idx = qs.partition_point(|q| q.timestamp < at);
        idx.checked_sub(1).map(|i| &qs[i])
    }

    /// Latest trade with `timestamp <= at`.
    pub fn trade_at(&self, at: Timestamp) -> Option<&Trade> {
        let idx = self.trades.partition_point(|t| t.timestamp <= at);
        idx.checked_sub(1).map(|i| &self.trades[i])
    }

    pub fn trade_before(&self, at: Timestamp) -> Option<&Trade> {
        let idx = self.trades.partition_point(|t| t.timestamp < at);
        idx.checked_sub(1).map(|i| &self.trades[i])
    }

    /// Timestamp of the last event (trade or quote) on the tape.
    pub fn last_timestamp(&self) -> Option<Timestamp> {
        let t = self.trades.last().map(|t| t.timestamp);
        let q = self
            .quotes
            .as_ref()
            .and_then(|qs| qs.last())
            .map(|q| q.timestamp);
        t.max(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Execution,
    Relaxation,
}

impl Phase {
    pub const fn as_str(self) -> &'static str {
        match self {
            Phase::Execution => "execution",
            Phase::Relaxation => "relaxation",
        }
    }
}

/// One bucketed point of an impact curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub rescaled_time: f64,
    pub mean_signed_impact: f64,
    pub count: usize,
    pub phase: Phase,
    /// Terminal-bucket artifact: too many points from two-fill metaorders.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("rescaled time decreases at point {0}")]
    NotSorted(usize),
    #[error("point {0} lies outside its phase interval")]
    OutOfPhase(usize),
    #[error("point {0} has zero count")]
    EmptyBucket(usize),
}

/// Both values reported at rescaled time 1, where execution prices hand over
/// to mid-prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seam {
    pub execution: f64,
    pub mid: f64,
}

/// Signed, bucketed impact in rescaled time: execution on [0, 1],
/// relaxation on [1, 2].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImpactCurve {
    points: Vec<CurvePoint>,
    seam: Option<Seam>,
    proxy: bool,
}

impl ImpactCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self, CurveError> {
        for (i, p) in points.iter().enumerate() {
            if p.count == 0 {
                return Err(CurveError::EmptyBucket(i));
            }
            let ok = match p.phase {
                Phase::Execution => (0.0..=1.0).contains(&p.rescaled_time),
                Phase::Relaxation => (1.0..=2.0).contains(&p.rescaled_time),
            };
            if !ok {
                return Err(CurveError::OutOfPhase(i));
            }
            if i > 0 && p.rescaled_time < points[i - 1].rescaled_time {
                return Err(CurveError::NotSorted(i));
            }
        }
        Ok(ImpactCurve {
            points,
            seam: None,
            proxy: false,
        })
    }

    pub fn with_seam(mut self, seam: Option<Seam>) -> Self {
        self.seam = seam;
        self
    }

    /// Marks a curve whose relaxation used last-trade prices instead of mids.
    pub fn with_proxy(mut self, proxy: bool) -> Self {
        self.proxy = proxy;
        self
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn seam(&self) -> Option<Seam> {
        self.seam
    }

    pub fn is_proxy(&self) -> bool {
        self.proxy
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(move |p| p.phase == phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw<'a>(price: &'a str, qty: &'a str, side: &'a str) -> RawFill<'a> {
        RawFill {
            timestamp_ms: "1583136000000",
            agent_id: "A",
            instrument_id: "X",
            venue_id: "XPAR",
            side,
            price,
            quantity: qty,
            order_class: "aggressive_limit",
        }
    }

    #[test]
    fn accepts_valid_fill() {
        let cal = TradingCalendar::default();
        let f = validate_fill(&raw("10.0", "100", "buy"), &cal).unwrap();
        assert_eq!(f.price.to_string(), "10");
        assert_eq!(f.quantity, 100);
        assert_eq!(f.side, Side::Buy);
        assert_eq!(f.day, NaiveDate::from_ymd_opt(2020, 3, 2).unwrap());
    }

    #[test]
    fn rejection_messages_name_the_invariant() {
        let cal = TradingCalendar::default();
        let e = validate_fill(&raw("-1.0", "100", "buy"), &cal).unwrap_err();
        assert_eq!(e.to_string(), "price > 0 violated");
        let e = validate_fill(&raw("10.0", "0", "buy"), &cal).unwrap_err();
        assert_eq!(e.to_string(), "quantity > 0 violated");
        assert_eq!(
            validate_fill(&raw("10.0", "-5", "buy"), &cal).unwrap_err(),
            Rejection::NonPositiveQuantity
        );
        assert_eq!(
            validate_fill(&raw("10.0", "1.5", "buy"), &cal).unwrap_err(),
            Rejection::FractionalQuantity("1.5".into())
        );
        assert_eq!(
            validate_fill(&raw("10.0", "10", "hold"), &cal).unwrap_err(),
            Rejection::UnknownSide("hold".into())
        );
        let mut r = raw("10.0", "10", "buy");
        r.timestamp_ms = "yesterday";
        assert!(matches!(
            validate_fill(&r, &cal).unwrap_err(),
            Rejection::MalformedTimestamp(_)
        ));
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign_of(Side::Buy), 1);
        assert_eq!(sign_of(Side::Sell), -1);
        for s in [Side::Buy, Side::Sell] {
            assert_eq!(sign_of(s) * sign_of(s), 1);
            assert_eq!(sign_of(s.opposite()), -sign_of(s));
        }
    }

    #[test]
    fn execution_price_and_rounding() {
        let e = Execution {
            timestamp: Timestamp(0),
            quantity: 3,
            notional: 10 * 100_000_000 + 1,
            merged: 2,
        };
        assert_eq!(e.rounded_price().units(), 333_333_334);
    }

    fn exec(ms: i64, qty: u64) -> Execution {
        Execution::new(Timestamp(ms), Price::from_units(1_000_000_000), qty)
    }

    fn key() -> MetaorderKey {
        MetaorderKey {
            agent_id: "A".into(),
            instrument_id: "X".into(),
            side: Side::Sell,
            day: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
        }
    }

    #[test]
    fn metaorder_invariants() {
        let m = Metaorder::new(key(), vec![exec(1000, 10), exec(3500, 30)]).unwrap();
        assert_eq!(m.length(), 2);
        assert_eq!(m.quantity(), 40);
        assert_eq!(m.duration_secs(), 2.5);
        assert_eq!(m.sign(), -1.0);
        assert_eq!(
            Metaorder::new(key(), vec![exec(1000, 10)]).unwrap_err(),
            MetaorderError::TooShort(1)
        );
        assert_eq!(
            Metaorder::new(key(), vec![exec(3000, 10), exec(1000, 10)]).unwrap_err(),
            MetaorderError::Unsorted(1)
        );
        assert_eq!(
            Metaorder::new(key(), vec![exec(1000, 10), exec(1500, 10)]).unwrap_err(),
            MetaorderError::SameSecond(0, 1)
        );
        let m = m.with_market_volume(400).unwrap();
        assert_eq!(m.participation(), Some(0.1));
        let m2 = Metaorder::new(key(), vec![exec(1000, 10), exec(3500, 30)]).unwrap();
        assert!(matches!(
            m2.with_market_volume(39),
            Err(MetaorderError::VolumeBelowSize { .. })
        ));
    }

    #[test]
    fn tape_lookups() {
        let day = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        let p = Price::from_units(100);
        let trades = vec![
            Trade { timestamp: Timestamp(10), price: p, quantity: 5 },
            Trade { timestamp: Timestamp(20), price: p, quantity: 7 },
            Trade { timestamp: Timestamp(30), price: p, quantity: 11 },
        ];
        let quotes = vec![Quote {
            timestamp: Timestamp(15),
            bid: Price::from_units(99),
            ask: Price::from_units(101),
        }];
        let tape = TradeTape::new("X", day, trades, Some(quotes)).unwrap();
        assert_eq!(tape.volume_between(Timestamp(10), Timestamp(30)), 23);
        assert_eq!(tape.volume_between(Timestamp(11), Timestamp(29)), 7);
        assert_eq!(tape.volume_between(Timestamp(31), Timestamp(40)), 0);
        assert!(tape.quote_at(Timestamp(14)).is_none());
        assert_eq!(tape.quote_at(Timestamp(15)).unwrap().mid(), 1e-6);
        assert!(tape.quote_before(Timestamp(15)).is_none());
        assert_eq!(tape.last_timestamp(), Some(Timestamp(30)));

        let crossed = vec![Quote {
            timestamp: Timestamp(1),
            bid: Price::from_units(101),
            ask: Price::from_units(100),
        }];
        assert_eq!(
            TradeTape::new("X", day, vec![], Some(crossed)).unwrap_err(),
            TapeError::CrossedQuote(0)
        );
    }

    #[test]
    fn curve_invariants() {
        let pt = |x: f64, phase| CurvePoint {
            rescaled_time: x,
            mean_signed_impact: 0.0,
            count: 1,
            phase,
            flagged: false,
        };
        assert!(ImpactCurve::new(vec![pt(0.5, Phase::Execution), pt(1.5, Phase::Relaxation)]).is_ok());
        assert_eq!(
            ImpactCurve::new(vec![pt(1.5, Phase::Execution)]).unwrap_err(),
            CurveError::OutOfPhase(0)
        );
        assert_eq!(
            ImpactCurve::new(vec![pt(0.5, Phase::Execution), pt(0.2, Phase::Execution)])
                .unwrap_err(),
            CurveError::NotSorted(1)
        );
    }
}
