//! Order-log and market-tape parsing, same-second aggregation, and the
//! matching writers.
//!
//! Both formats are comma-separated UTF-8 with a mandatory header row. Lines
//! starting with `#` are comments and are skipped wherever they appear.
//! Malformed lines never abort a parse: they are collected, with their
//! 1-based line numbers, in a [`RejectionReport`].

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::sync::Arc;

use chrono::NaiveDate;
use thiserror::Error;

use crate::calendar::{Timestamp, TradingCalendar};
use crate::price::Price;
use crate::types::{
    parse_quantity, validate_fill, Execution, Fill, Quote, RawFill, Rejection, Trade, TradeTape,
};

pub const ORDER_LOG_COLUMNS: [&str; 8] = [
    "timestamp_ms",
    "agent_id",
    "instrument_id",
    "venue_id",
    "side",
    "price",
    "quantity",
    "order_class",
];

pub const TAPE_COLUMNS: [&str; 4] = ["timestamp_ms", "instrument_id", "price", "quantity"];
pub const TAPE_QUOTE_COLUMNS: [&str; 6] = [
    "timestamp_ms",
    "instrument_id",
    "price",
    "quantity",
    "best_bid",
    "best_ask",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("missing header row")]
    MissingHeader,
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            other => IngestError::Csv(format!("{other:?}")),
        }
    }
}

/// A non-fatal, per-line problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineRejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    pub entries: Vec<LineRejection>,
}

impl RejectionReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn push(&mut self, line: u64, reason: impl Into<String>) {
        self.entries.push(LineRejection {
            line,
            reason: reason.into(),
        });
    }

    /// Writes `line,reason` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: Option<&str>) -> Result<(), IngestError> {
        if let Some(p) = provenance {
            writeln!(w, "# {p}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["line", "reason"])?;
        for e in &self.entries {
            out.write_record([e.line.to_string().as_str(), e.reason.as_str()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(source)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn check_header(record: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    if record.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(IngestError::HeaderMismatch {
            expected: expected.join(","),
            found: record.iter().collect::<Vec<_>>().join(","),
        })
    }
}

/// Streaming order-log parser: yields one item per data line, in file order.
pub struct OrderLogReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    calendar: TradingCalendar,
}

impl<R: Read> OrderLogReader<R> {
    /// Reads and checks the header. A missing or mismatched header is fatal.
    pub fn new(source: R, calendar: TradingCalendar) -> Result<Self, IngestError> {
        let mut records = reader(source).into_records();
        match records.next() {
            None => Err(IngestError::MissingHeader),
            Some(Err(e)) => Err(e.into()),
            Some(Ok(h)) => {
                check_header(&h, &ORDER_LOG_COLUMNS)?;
                Ok(OrderLogReader { records, calendar })
            }
        }
    }
}

impl<R: Read> Iterator for OrderLogReader<R> {
    /// `Err` is either a fatal I/O error or a per-line rejection.
    type Item = Result<Result<Fill, LineRejection>, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Some(match e.into_kind() {
                    csv::ErrorKind::Io(io) => Err(IngestError::Io(io)),
                    other => Ok(Err(LineRejection {
                        line,
                        reason: format!("unreadable line: {other:?}"),
                    })),
                });
            }
        };
        let line = line_of(&record);
        if record.len() != ORDER_LOG_COLUMNS.len() {
            return Some(Ok(Err(LineRejection {
                line,
                reason: format!(
                    "expected {} columns, found {}",
                    ORDER_LOG_COLUMNS.len(),
                    record.len()
                ),
            })));
        }
        let raw = RawFill {
            timestamp_ms: &record[0],
            agent_id: &record[1],
            instrument_id: &record[2],
            venue_id: &record[3],
            side: &record[4],
            price: &record[5],
            quantity: &record[6],
            order_class: &record[7],
        };
        Some(Ok(validate_fill(&raw, &self.calendar).map_err(|r| {
            LineRejection {
                line,
                reason: r.to_string(),
            }
        })))
    }
}

#[derive(Debug, Clone, Default)]
pub struct OrderLog {
    pub fills: Vec<Fill>,
    pub rejections: RejectionReport,
}

/// Parses a whole order log into fills plus a rejection report.
pub fn parse_order_log<R: Read>(
    source: R,
    calendar: &TradingCalendar,
) -> Result<OrderLog, IngestError> {
    let mut log = OrderLog::default();
    // Interning ids keeps large logs from holding one allocation per field.
    let mut interner: BTreeMap<Arc<str>, ()> = BTreeMap::new();
    let mut intern = |s: &Arc<str>| -> Arc<str> {
        if let Some((k, _)) = interner.get_key_value(s) {
            k.clone()
        } else {
            interner.insert(s.clone(), ());
            s.clone()
        }
    };
    for item in OrderLogReader::new(source, *calendar)? {
        match item? {
            Ok(mut fill) => {
                fill.agent_id = intern(&fill.agent_id);
                fill.instrument_id = intern(&fill.instrument_id);
                fill.venue_id = intern(&fill.venue_id);
                log.fills.push(fill);
            }
            Err(rej) => log.rejections.entries.push(rej),
        }
    }
    Ok(log)
}

/// Tapes keyed by (instrument, day), plus per-line rejections.
#[derive(Debug, Clone, Default)]
pub struct MarketTapes {
    pub tapes: BTreeMap<(Arc<str>, NaiveDate), TradeTape>,
    pub rejections: RejectionReport,
}

impl MarketTapes {
    pub fn get(&self, instrument_id: &str, day: NaiveDate) -> Option<&TradeTape> {
        self.tapes.get(&(Arc::from(instrument_id), day))
    }

    pub fn len(&self) -> usize {
        self.tapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tapes.is_empty()
    }
}

#[derive(Default)]
struct TapeBuilder {
    trades: Vec<Trade>,
    quotes: Vec<Quote>,
}

fn parse_positive_price(text: &str, what: &str) -> Result<Price, String> {
    let p: Price = text
        .parse()
        .map_err(|_| format!("malformed {what} {text:?}"))?;
    if p.is_positive() {
        Ok(p)
    } else {
        Err(format!("{what} > 0 violated"))
    }
}

/// One parsed tape line: a trade, a quote update, or both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapeRecord {
    pub timestamp: Timestamp,
    pub instrument_id: Arc<str>,
    pub trade: Option<(Price, u64)>,
    pub quote: Option<(Price, Price)>,
}

fn parse_tape_line(record: &csv::StringRecord, with_quotes: bool) -> Result<TapeRecord, String> {
    let expected = if with_quotes { 6 } else { 4 };
    if record.len() != expected {
        return Err(format!(
            "expected {expected} columns, found {}",
            record.len()
        ));
    }
    let timestamp = record[0]
        .trim()
        .parse::<i64>()
        .map(Timestamp)
        .map_err(|_| Rejection::MalformedTimestamp(record[0].to_string()).to_string())?;
    if record[1].is_empty() {
        return Err(Rejection::EmptyField("instrument_id").to_string());
    }
    let has_trade = !(with_quotes && record[2].is_empty() && record[3].is_empty());
    let trade = if has_trade {
        let price = parse_positive_price(&record[2], "price")?;
        let qty = parse_quantity(&record[3]).map_err(|e| e.to_string())?;
        Some((price, qty))
    } else {
        None
    };
    let quote = if with_quotes && !(record[4].is_empty() && record[5].is_empty()) {
        let bid = parse_positive_price(&record[4], "best_bid")?;
        let ask = parse_positive_price(&record[5], "best_ask")?;
        if bid >= ask {
            return Err(format!("crossed quote: bid {bid} >= ask {ask}"));
        }
        Some((bid, ask))
    } else {
        None
    };
    if trade.is_none() && quote.is_none() {
        return Err("line carries neither a trade nor a quote".into());
    }
    Ok(TapeRecord {
        timestamp,
        instrument_id: Arc::from(&record[1]),
        trade,
        quote,
    })
}

/// Parses a market tape and partitions it by instrument and trading day.
///
/// The header selects the layout: four columns for trades only, six when
/// best bid/ask are present.
pub fn parse_market_tape<R: Read>(
    source: R,
    calendar: &TradingCalendar,
) -> Result<MarketTapes, IngestError> {
    let mut records = reader(source).into_records();
    let header = match records.next() {
        None => return Err(IngestError::MissingHeader),
        Some(r) => r?,
    };
    let with_quotes = if header.len() == TAPE_QUOTE_COLUMNS.len() {
        check_header(&header, &TAPE_QUOTE_COLUMNS)?;
        true
    } else {
        check_header(&header, &TAPE_COLUMNS)?;
        false
    };

    let mut rejections = RejectionReport::default();
    let mut builders: BTreeMap<(Arc<str>, NaiveDate), TapeBuilder> = BTreeMap::new();
    for item in records {
        let record = match item {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                match e.into_kind() {
                    csv::ErrorKind::Io(io) => return Err(IngestError::Io(io)),
                    other => {
                        rejections.push(line, format!("unreadable line: {other:?}"));
                        continue;
                    }
                }
            }
        };
        let line = line_of(&record);
        let rec = match parse_tape_line(&record, with_quotes) {
            Ok(r) => r,
            Err(reason) => {
                rejections.push(line, reason);
                continue;
            }
        };
        let Some(day) = calendar.day_of(rec.timestamp) else {
            rejections.push(line, Rejection::MalformedTimestamp(rec.timestamp.to_string()).to_string());
            continue;
        };
        let key = match builders.range((rec.instrument_id.clone(), day)..).next() {
            Some(((inst, d), _)) if **inst == *rec.instrument_id && *d == day => (inst.clone(), day),
            _ => (rec.instrument_id.clone(), day),
        };
        let b = builders.entry(key).or_default();
        if let Some((price, quantity)) = rec.trade {
            b.trades.push(Trade {
                timestamp: rec.timestamp,
                price,
                quantity,
            });
        }
        if let Some((bid, ask)) = rec.quote {
            b.quotes.push(Quote {
                timestamp: rec.timestamp,
                bid,
                ask,
            });
        }
    }

    let mut tapes = BTreeMap::new();
    for ((inst, day), mut b) in builders {
        b.trades.sort_by_key(|t| t.timestamp);
        b.quotes.sort_by_key(|q| q.timestamp);
        let quotes = with_quotes.then_some(b.quotes);
        let tape = TradeTape::new(inst.clone(), day, b.trades, quotes)
            .expect("sorted, uncrossed by construction");
        tapes.insert((inst, day), tape);
    }
    Ok(MarketTapes { tapes, rejections })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("executions not time-sorted at index {index}")]
pub struct UnsortedError {
    pub index: usize,
}

/// Merges executions that fall in the same whole second
/// (`floor(timestamp_ms / 1000)`).
///
/// The merged execution keeps the summed quantity, the exact summed notional
/// (so its price is the local VWAP) and the timestamp of the last merged
/// fill.
pub fn aggregate_same_second(executions: &[Execution]) -> Result<Vec<Execution>, UnsortedError> {
    let mut out: Vec<Execution> = Vec::with_capacity(executions.len());
    for (i, e) in executions.iter().enumerate() {
        if i > 0 && e.timestamp < executions[i - 1].timestamp {
            return Err(UnsortedError { index: i });
        }
        match out.last_mut() {
            Some(last) if last.timestamp.second() == e.timestamp.second() => {
                last.quantity += e.quantity;
                last.notional += e.notional;
                last.merged += e.merged;
                last.timestamp = e.timestamp;
            }
            _ => out.push(*e),
        }
    }
    Ok(out)
}

/// Writes fills in order-log format. `provenance` becomes a leading
/// `# ...` comment line.
pub fn write_order_log<'a, W: Write>(
    w: W,
    fills: impl IntoIterator<Item = &'a Fill>,
    provenance: Option<&str>,
) -> Result<(), IngestError> {
    let mut w = io::BufWriter::new(w);
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(w, "{}", ORDER_LOG_COLUMNS.join(","))?;
    write_fill_rows(&mut w, fills)?;
    w.flush()?;
    Ok(())
}

/// Writes tape records. With `with_quotes` the six-column layout is used and
/// absent halves are left empty.
pub fn write_market_tape<'a, W: Write>(
    w: W,
    records: impl IntoIterator<Item = &'a TapeRecord>,
    with_quotes: bool,
    provenance: Option<&str>,
) -> Result<(), IngestError> {
    let mut w = io::BufWriter::new(w);
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    if with_quotes {
        writeln!(w, "{}", TAPE_QUOTE_COLUMNS.join(","))?;
    } else {
        writeln!(w, "{}", TAPE_COLUMNS.join(","))?;
    }
    write_tape_rows(&mut w, records, with_quotes)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_fill_rows<'a, W: Write>(
    w: &mut W,
    fills: impl IntoIterator<Item = &'a Fill>,
) -> io::Result<()> {
    for f in fills {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            f.timestamp,
            f.agent_id,
            f.instrument_id,
            f.venue_id,
            f.side,
            f.price,
            f.quantity,
            f.order_class
        )?;
    }
    Ok(())
}

pub(crate) fn write_tape_rows<'a, W: Write>(
    w: &mut W,
    records: impl IntoIterator<Item = &'a TapeRecord>,
    with_quotes: bool,
) -> io::Result<()> {
    for r in records {
        write!(w, "{},{},", r.timestamp, r.instrument_id)?;
        match r.trade {
            Some((p, q)) => write!(w, "{p},{q}")?,
            None => write!(w, ",")?,
        }
        if with_quotes {
            match r.quote {
                Some((b, a)) => write!(w, ",{b},{a}")?,
                None => write!(w, ",,")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
