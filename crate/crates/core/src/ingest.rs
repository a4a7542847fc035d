//! Delimited-text event ingestion.
//!
//! Each input row names a row key, a column key, a timestamp and optionally a
//! count. Keys are mapped to dense ids in first-seen order; timestamps are
//! binned relative to an epoch at a fixed frequency.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::stream::EventRecord;

/// Width of one time bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frequency {
    Hourly,
    Daily,
    Weekly,
    Seconds(u64),
}

impl Frequency {
    pub fn seconds(self) -> u64 {
        match self {
            Frequency::Hourly => 3_600,
            Frequency::Daily => 86_400,
            Frequency::Weekly => 604_800,
            Frequency::Seconds(s) => s,
        }
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hourly" => Ok(Frequency::Hourly),
            "daily" => Ok(Frequency::Daily),
            "weekly" => Ok(Frequency::Weekly),
            other => match other.parse::<u64>() {
                Ok(secs) if secs > 0 => Ok(Frequency::Seconds(secs)),
                _ => Err(Error::Config(format!(
                    "frequency must be hourly, daily, weekly or a positive number of seconds, got {s:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frequency::Hourly => f.write_str("hourly"),
            Frequency::Daily => f.write_str("daily"),
            Frequency::Weekly => f.write_str("weekly"),
            Frequency::Seconds(s) => write!(f, "{s}"),
        }
    }
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

/// Parses a timestamp as RFC 3339, one of a few ISO-like layouts, a bare
/// date, or integer seconds since the Unix epoch.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    raw.parse::<i64>()
        .ok()
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
        .map(|dt| dt.naive_utc())
}

/// Column mapping and binning parameters for an event file.
#[derive(Debug, Clone)]
pub struct IngestSchema {
    pub row_col: String,
    pub col_col: String,
    pub time_col: String,
    /// When absent, each input row counts as one event.
    pub count_col: Option<String>,
    pub frequency: Frequency,
    pub epoch: NaiveDateTime,
    pub delimiter: u8,
}

/// Dense id assignment in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn id_of(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> Option<&str> {
        self.keys.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Writes the sidecar CSV `id,key`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "key"])?;
        for (id, key) in self.keys.iter().enumerate() {
            w.write_record([id.to_string().as_str(), key.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A row that could not be turned into an event.
#[derive(Debug, Clone, PartialEq)]
pub struct MalformedRow {
    /// 1-based line number in the input file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

/// Result of ingesting one event file.
#[derive(Debug, Default)]
pub struct Ingested {
    pub events: Vec<EventRecord>,
    pub rows: IdMap,
    pub cols: IdMap,
    pub malformed: Vec<MalformedRow>,
}

impl Ingested {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }
}

pub fn ingest_events(path: &Path, schema: &IngestSchema) -> Result<Ingested> {
    ingest_reader(File::open(path)?, schema)
}

/// Reads events from any delimited source with a header row.
pub fn ingest_reader<R: Read>(input: R, schema: &IngestSchema) -> Result<Ingested> {
    let bin_secs = schema.frequency.seconds() as i64;
    if bin_secs <= 0 {
        return Err(Error::Config("frequency must be positive".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    let row_idx = column(&schema.row_col)?;
    let col_idx = column(&schema.col_col)?;
    let time_idx = column(&schema.time_col)?;
    let count_idx = schema.count_col.as_deref().map(column).transpose()?;

    let mut out = Ingested::default();
    for (i, record) in reader.records().enumerate() {
        let line = record
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i as u64 + 2, |p| p.line());
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.malformed.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |idx: usize| record.get(idx).map(str::trim);
        let parsed = (|| {
            let row_key = field(row_idx).filter(|s| !s.is_empty()).ok_or("missing row key")?;
            let col_key = field(col_idx).filter(|s| !s.is_empty()).ok_or("missing column key")?;
            let ts = field(time_idx)
                .and_then(parse_timestamp)
                .ok_or("unparseable timestamp")?;
            let count = match count_idx {
                None => 1.0,
                Some(idx) => field(idx)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or("unparseable count")?,
            };
            if !count.is_finite() || count < 0.0 {
                return Err("negative or non-finite count");
            }
            let offset = (ts - schema.epoch).num_seconds();
            if offset < 0 {
                return Err("timestamp before epoch");
            }
            Ok((row_key, col_key, (offset / bin_secs) as u64, count))
        })();
        match parsed {
            Ok((row_key, col_key, time, count)) => {
                let row = out.rows.id_of(row_key);
                let col = out.cols.id_of(col_key);
                out.events.push(EventRecord { row, col, time, count });
            }
            Err(reason) => out.malformed.push(MalformedRow {
                line,
                reason: reason.to_owned(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(count: bool) -> IngestSchema {
        IngestSchema {
            row_col: "src".into(),
            col_col: "dst".into(),
            time_col: "ts".into(),
            count_col: count.then(|| "n".into()),
            frequency: Frequency::Hourly,
            epoch: parse_timestamp("2020-01-01T00:00").unwrap(),
            delimiter: b',',
        }
    }

    #[test]
    fn hourly_binning() {
        let data = "src,dst,ts,n\nA,B,2020-01-01T03:12,1\n";
        let got = ingest_reader(data.as_bytes(), &schema(true)).unwrap();
        assert_eq!(
            got.events,
            vec![EventRecord {
                row: 0,
                col: 0,
                time: 3,
                count: 1.0
            }]
        );
    }

    #[test]
    fn ids_in_first_seen_order() {
        let data = "src,dst,ts\nX,P,2020-01-01\nY,P,2020-01-01\nX,Q,2020-01-02\n";
        let got = ingest_reader(data.as_bytes(), &schema(false)).unwrap();
        assert_eq!(got.rows.get("X"), Some(0));
        assert_eq!(got.rows.get("Y"), Some(1));
        assert_eq!(got.cols.key(1), Some("Q"));
        assert_eq!(got.events[2].time, 24);
        assert!(got.events.iter().all(|e| e.count == 1.0));
    }

    #[test]
    fn negative_count_skipped_with_line() {
        let data = "src,dst,ts,n\nA,B,2020-01-01,1\nA,B,2020-01-01,-2\nA,B,nonsense,1\n";
        let got = ingest_reader(data.as_bytes(), &schema(true)).unwrap();
        assert_eq!(got.events.len(), 1);
        assert_eq!(got.malformed.len(), 2);
        assert_eq!(got.malformed[0].line, 3);
        assert_eq!(got.malformed[1].line, 4);
    }

    #[test]
    fn missing_column_is_fatal() {
        let data = "src,dst,when\nA,B,2020-01-01\n";
        let err = ingest_reader(data.as_bytes(), &schema(false)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn frequency_parsing() {
        assert_eq!("weekly".parse::<Frequency>().unwrap(), Frequency::Weekly);
        assert_eq!("900".parse::<Frequency>().unwrap(), Frequency::Seconds(900));
        assert!("0".parse::<Frequency>().is_err());
        assert!("fortnightly".parse::<Frequency>().is_err());
    }

    #[test]
    fn timestamp_layouts() {
        let a = parse_timestamp("2020-01-01T03:12:00Z").unwrap();
        let b = parse_timestamp("2020-01-01 03:12").unwrap();
        let c = parse_timestamp("1577848320").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
