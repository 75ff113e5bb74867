//! Trip CSV ingestion with configurable column names and local-date
//! truncation.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use tripgen_core::demand::{DemandAccumulator, MonthlySample, TripRecord};
use tripgen_core::{CivilDate, StationId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripColumns {
    pub start_station_id: String,
    pub end_station_id: String,
    pub started_at: String,
    pub ended_at: String,
    /// IANA zone used to turn timestamps into civil dates.
    pub timezone: String,
}

impl Default for TripColumns {
    fn default() -> Self {
        Self {
            start_station_id: "start_station_id".into(),
            end_station_id: "end_station_id".into(),
            started_at: "started_at".into(),
            ended_at: "ended_at".into(),
            timezone: "America/New_York".into(),
        }
    }
}

impl TripColumns {
    pub fn zone(&self) -> Result<Tz> {
        self.timezone.parse::<Tz>().map_err(|e| anyhow::anyhow!("unknown timezone {:?}: {e}", self.timezone))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows: usize,
    pub records: usize,
    pub skipped: usize,
    /// Skipped rows per reason.
    pub reasons: BTreeMap<String, usize>,
}

impl IngestStats {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.rows += other.rows;
        self.records += other.records;
        self.skipped += other.skipped;
        for (k, v) in &other.reasons {
            *self.reasons.entry(k.clone()).or_default() += v;
        }
    }
}

const NAIVE_FORMATS: [&str; 6] =
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M", "%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M"];

/// Local civil date of a timestamp. Timestamps with an offset are converted
/// to `zone`; naive timestamps are taken as local time already.
pub fn local_date(text: &str, zone: Tz) -> Option<CivilDate> {
    let text = text.trim();
    let date = if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        t.with_timezone(&zone).date_naive()
    } else if let Ok(t) = DateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S%.f%#z") {
        t.with_timezone(&zone).date_naive()
    } else if let Some(t) = NAIVE_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(text, f).ok()) {
        t.date()
    } else {
        NaiveDate::parse_from_str(text, "%Y-%m-%d").ok()?
    };
    CivilDate::new(date.year(), date.month() as u8, date.day() as u8).ok()
}

/// Streams trips from CSV, calling `sink` for every valid row. A missing
/// column is fatal; rows with an empty station id, an unparseable timestamp
/// or an end before the start are skipped and counted.
pub fn for_each_trip<R: Read>(reader: R, columns: &TripColumns, mut sink: impl FnMut(TripRecord)) -> Result<IngestStats> {
    let zone = columns.zone()?;
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers().context("reading the header row")?.clone();
    let find = |name: &str| -> Result<usize> {
        match headers.iter().position(|h| h.trim() == name) {
            Some(i) => Ok(i),
            None => bail!("trip file has no column {name:?} (columns: {})", headers.iter().collect::<Vec<_>>().join(", ")),
        }
    };
    let idx = [find(&columns.start_station_id)?, find(&columns.end_station_id)?, find(&columns.started_at)?, find(&columns.ended_at)?];
    let mut stats = IngestStats::default();
    for (line, row) in csv.records().enumerate() {
        stats.rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                log::warn!("trip row {}: {e}", line + 2);
                stats.skip("unreadable row");
                continue;
            }
        };
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let (Ok(start), Ok(end)) = (StationId::new(field(idx[0])), StationId::new(field(idx[1]))) else {
            log::warn!("trip row {}: missing station id", line + 2);
            stats.skip("missing station id");
            continue;
        };
        let (Some(started), Some(ended)) = (local_date(field(idx[2]), zone), local_date(field(idx[3]), zone)) else {
            log::warn!("trip row {}: unparseable timestamp {:?} / {:?}", line + 2, field(idx[2]), field(idx[3]));
            stats.skip("unparseable timestamp");
            continue;
        };
        match TripRecord::new(start, end, started, ended) {
            Ok(t) => {
                stats.records += 1;
                sink(t);
            }
            Err(e) => {
                log::warn!("trip row {}: {e}", line + 2);
                stats.skip("ends before it starts");
            }
        }
    }
    Ok(stats)
}

pub fn read_trips<R: Read>(reader: R, columns: &TripColumns) -> Result<(Vec<TripRecord>, IngestStats)> {
    let mut out = Vec::new();
    let stats = for_each_trip(reader, columns, |t| out.push(t))?;
    Ok((out, stats))
}

/// Monthly samples over every trip file, without keeping trips in memory.
pub fn aggregate_trip_files(paths: &[impl AsRef<Path>], columns: &TripColumns) -> Result<(Vec<MonthlySample>, IngestStats)> {
    let mut acc = DemandAccumulator::new();
    let mut stats = IngestStats::default();
    for p in paths {
        let p = p.as_ref();
        let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let s = for_each_trip(std::io::BufReader::new(file), columns, |t| acc.add(&t)).with_context(|| format!("reading {}", p.display()))?;
        if s.skipped > 0 {
            log::warn!("{}: skipped {} of {} rows", p.display(), s.skipped, s.rows);
        }
        stats.merge(&s);
    }
    Ok((acc.finish(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ny() -> Tz {
        "America/New_York".parse().unwrap()
    }

    #[test]
    fn timestamps_become_local_dates() {
        let d = |y, m, day| CivilDate::new(y, m, day).unwrap();
        assert_eq!(local_date("2019-07-01 00:03:12.3450", ny()), Some(d(2019, 7, 1)));
        assert_eq!(local_date("2019-07-01T03:30:00Z", ny()), Some(d(2019, 6, 30)));
        assert_eq!(local_date("2019-07-01T03:30:00-04:00", ny()), Some(d(2019, 7, 1)));
        assert_eq!(local_date("9/1/2014 00:00:25", ny()), Some(d(2014, 9, 1)));
        assert_eq!(local_date("2016-02-29", ny()), Some(d(2016, 2, 29)));
        assert_eq!(local_date("yesterday", ny()), None);
    }

    #[test]
    fn well_formed_rows_all_become_records() {
        let csv = "start_station_id,end_station_id,started_at,ended_at\nA,B,2019-07-01 08:00:00,2019-07-01 08:20:00\nB,A,2019-07-02 09:00:00,2019-07-02 09:10:00\nA,A,2019-07-03 10:00:00,2019-07-03 10:30:00\n";
        let (trips, stats) = read_trips(csv.as_bytes(), &TripColumns::default()).unwrap();
        assert_eq!((trips.len(), stats.skipped, stats.rows), (3, 0, 3));
    }

    #[test]
    fn bad_timestamp_is_skipped_and_counted() {
        let csv = "start_station_id,end_station_id,started_at,ended_at\n\
            A,B,2019-07-01 08:00:00,2019-07-01 08:20:00\n\
            A,B,not a time,2019-07-01 08:20:00\n\
            A,B,2019-07-02 08:00:00,2019-07-02 08:20:00\n\
            A,B,2019-07-03 08:00:00,2019-07-03 08:20:00\n\
            A,B,2019-07-04 08:00:00,2019-07-04 08:20:00\n";
        let (trips, stats) = read_trips(csv.as_bytes(), &TripColumns::default()).unwrap();
        assert_eq!(trips.len(), 4);
        assert_eq!(stats.skipped, 1);
        assert_eq!(stats.reasons["unparseable timestamp"], 1);
    }

    #[test]
    fn columns_are_remappable_and_required() {
        let csv = "starttime,stoptime,start station id,end station id\n7/1/2013 00:00:00,7/1/2013 00:10:55,164,504\n";
        let columns = TripColumns {
            start_station_id: "start station id".into(),
            end_station_id: "end station id".into(),
            started_at: "starttime".into(),
            ended_at: "stoptime".into(),
            ..TripColumns::default()
        };
        let (trips, _) = read_trips(csv.as_bytes(), &columns).unwrap();
        assert_eq!(trips[0].start_station_id.as_str(), "164");
        let err = read_trips(csv.as_bytes(), &TripColumns::default()).unwrap_err();
        assert!(err.to_string().contains("start_station_id"));
    }

    #[test]
    fn reversed_and_incomplete_rows_are_skipped() {
        let csv = "start_station_id,end_station_id,started_at,ended_at\n\
            A,B,2019-07-02 08:00:00,2019-07-01 08:20:00\n\
            ,B,2019-07-01 08:00:00,2019-07-01 08:20:00\n\
            A,B,2019-07-01 08:00:00\n";
        let (trips, stats) = read_trips(csv.as_bytes(), &TripColumns::default()).unwrap();
        assert!(trips.is_empty());
        assert_eq!(stats.skipped, 3);
    }
}
