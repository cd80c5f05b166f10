//! Grouping fills into metaorders and attaching market volume.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingestion::MarketTapes;
use crate::types::{Execution, Fill, Metaorder, MetaorderError, MetaorderKey, TradeTape};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReconstructOptions {
    /// Split a key's fills wherever two consecutive merged executions are
    /// more than this many milliseconds apart. `None` never splits.
    pub max_gap_ms: Option<i64>,
}

/// Output of [`reconstruct_with`].
#[derive(Debug, Clone, Default)]
pub struct Reconstruction {
    pub metaorders: Vec<Metaorder>,
    /// Groups that collapsed to a single execution after merging.
    pub discarded_groups: usize,
    pub discarded_fills: usize,
}

/// Groups fills by (agent, instrument, side, day), merges same-second fills
/// and keeps groups with at least two executions.
pub fn reconstruct_metaorders(fills: &[Fill]) -> Vec<Metaorder> {
    reconstruct_with(fills, &ReconstructOptions::default()).metaorders
}

pub fn reconstruct_with(fills: &[Fill], options: &ReconstructOptions) -> Reconstruction {
    let mut groups: BTreeMap<MetaorderKey, Vec<&Fill>> = BTreeMap::new();
    for f in fills {
        groups.entry(MetaorderKey::of(f)).or_default().push(f);
    }
    let groups: Vec<(MetaorderKey, Vec<&Fill>)> = groups.into_iter().collect();

    let per_group: Vec<(Vec<Metaorder>, usize, usize)> = groups
        .into_par_iter()
        .map(|(key, mut members)| {
            members.sort_by(|a, b| {
                a.timestamp
                    .cmp(&b.timestamp)
                    .then(a.price.cmp(&b.price))
                    .then(a.quantity.cmp(&b.quantity))
            });
            let executions: Vec<Execution> = members.iter().map(|f| Execution::from(*f)).collect();
            let merged = crate::ingestion::aggregate_same_second(&executions)
                .expect("group sorted above");
            let mut out = Vec::new();
            let (mut dropped_groups, mut dropped_fills) = (0, 0);
            for run in split_at_gaps(merged, options.max_gap_ms) {
                let raw: usize = run.iter().map(|e| e.merged as usize).sum();
                match Metaorder::new(key.clone(), run) {
                    Ok(m) => out.push(m),
                    Err(_) => {
                        dropped_groups += 1;
                        dropped_fills += raw;
                    }
                }
            }
            (out, dropped_groups, dropped_fills)
        })
        .collect();

    let mut result = Reconstruction::default();
    for (ms, g, f) in per_group {
        result.metaorders.extend(ms);
        result.discarded_groups += g;
        result.discarded_fills += f;
    }
    result
}

fn split_at_gaps(executions: Vec<Execution>, max_gap_ms: Option<i64>) -> Vec<Vec<Execution>> {
    let Some(gap) = max_gap_ms else {
        return vec![executions];
    };
    let mut runs: Vec<Vec<Execution>> = Vec::new();
    for e in executions {
        match runs.last_mut() {
            Some(run) if e.timestamp.millis() - run[run.len() - 1].timestamp.millis() <= gap => {
                run.push(e)
            }
            _ => runs.push(vec![e]),
        }
    }
    runs
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReconstructError {
    #[error("minimum length must be at least 2, got {0}")]
    MinLengthTooSmall(usize),
    #[error("tape {tape_instrument}/{tape_day} does not match metaorder {key}")]
    TapeMismatch {
        key: String,
        tape_instrument: String,
        tape_day: chrono::NaiveDate,
    },
    #[error("no tape for metaorder {0}")]
    MissingTape(String),
    #[error("metaorder {key}: {source}")]
    Volume {
        key: String,
        #[source]
        source: MetaorderError,
    },
}

/// Ω_{n*}: the metaorders with N ≥ `n_star`, order preserved.
pub fn filter_min_length(
    metaorders: Vec<Metaorder>,
    n_star: usize,
) -> Result<Vec<Metaorder>, ReconstructError> {
    if n_star < 2 {
        return Err(ReconstructError::MinLengthTooSmall(n_star));
    }
    Ok(metaorders
        .into_iter()
        .filter(|m| m.length() >= n_star)
        .collect())
}

/// Sets V to the tape volume traded in the closed interval [t0, t0 + T].
pub fn enrich_with_market_volume(
    metaorder: Metaorder,
    tape: &TradeTape,
) -> Result<Metaorder, ReconstructError> {
    let key = metaorder.key();
    if tape.instrument_id() != &*key.instrument_id || tape.day() != key.day {
        return Err(ReconstructError::TapeMismatch {
            key: key.to_string(),
            tape_instrument: tape.instrument_id().to_string(),
            tape_day: tape.day(),
        });
    }
    let volume = tape.volume_between(metaorder.start(), metaorder.end());
    let key = key.to_string();
    metaorder
        .with_market_volume(volume)
        .map_err(|source| ReconstructError::Volume { key, source })
}

/// Enriches every metaorder that has a consistent tape. Failures are
/// returned alongside instead of aborting.
pub fn enrich_all(
    metaorders: Vec<Metaorder>,
    tapes: &MarketTapes,
) -> (Vec<Metaorder>, Vec<ReconstructError>) {
    let results: Vec<Result<Metaorder, ReconstructError>> = metaorders
        .into_par_iter()
        .map(|m| {
            let key = m.key();
            match tapes.get(&key.instrument_id, key.day) {
                Some(tape) => enrich_with_market_volume(m, tape),
                None => Err(ReconstructError::MissingTape(key.to_string())),
            }
        })
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => errors.push(e),
        }
    }
    (ok, errors)
}

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "agent_id",
    "instrument_id",
    "day",
    "sign",
    "t0_ms",
    "duration_s",
    "n",
    "q",
    "v",
    "participation",
];

/// Writes one row per metaorder. `v` and `participation` are empty when the
/// metaorder was not enriched.
pub fn write_metaorder_summary<'a, W: Write>(
    w: W,
    metaorders: impl IntoIterator<Item = &'a Metaorder>,
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(w, "{}", SUMMARY_COLUMNS.join(","))?;
    for m in metaorders {
        let k = m.key();
        let (v, part) = match (m.market_volume(), m.participation()) {
            (Some(v), Some(p)) => (v.to_string(), p.to_string()),
            _ => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            k.agent_id,
            k.instrument_id,
            k.day,
            k.side.sign(),
            m.start(),
            m.duration_secs(),
            m.length(),
            m.quantity(),
            v,
            part
        )?;
    }
    w.flush()
}
