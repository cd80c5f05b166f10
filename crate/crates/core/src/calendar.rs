//! Timestamps and trading-day assignment.

use chrono::{DateTime, NaiveDate, NaiveTime, TimeZone};
use chrono_tz::Tz;

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn millis(self) -> i64 {
        self.0
    }

    /// Whole second containing this instant (`floor(ms / 1000)`).
    pub const fn second(self) -> i64 {
        self.0.div_euclid(1000)
    }

    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }

    pub const fn plus_millis(self, ms: i64) -> Timestamp {
        Timestamp(self.0 + ms)
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maps instants to exchange-local trading days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradingCalendar {
    tz: Tz,
}

impl Default for TradingCalendar {
    fn default() -> Self {
        TradingCalendar {
            tz: chrono_tz::Europe::Paris,
        }
    }
}

impl TradingCalendar {
    pub fn new(tz: Tz) -> Self {
        TradingCalendar { tz }
    }

    /// Parses an IANA zone name such as `Europe/Paris`.
    pub fn from_name(name: &str) -> Option<Self> {
        name.parse::<Tz>().ok().map(TradingCalendar::new)
    }

    pub fn timezone(&self) -> Tz {
        self.tz
    }

    /// Local calendar date of `ts`, or `None` if the timestamp is outside
    /// chrono's representable range.
    pub fn day_of(&self, ts: Timestamp) -> Option<NaiveDate> {
        let utc = DateTime::from_timestamp_millis(ts.0)?;
        Some(utc.with_timezone(&self.tz).date_naive())
    }

    /// UTC instant of a local wall-clock time on `day`. Ambiguous times
    /// (DST fall-back) resolve to the earlier instant; non-existent times
    /// (spring-forward gap) return `None`.
    pub fn instant(&self, day: NaiveDate, time: NaiveTime) -> Option<Timestamp> {
        let local = day.and_time(time);
        let dt = self.tz.from_local_datetime(&local).earliest()?;
        Some(Timestamp(dt.timestamp_millis()))
    }
}
