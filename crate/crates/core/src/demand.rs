//! Monthly demand samples: per-station average daily outflow and inflow,
//! station lifecycle derivation, and the temporal train/validation/test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::station::{StationId, StationRecord};
use crate::time::{CivilDate, YearMonth};

/// One trip, with timestamps already truncated to local civil dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub start_station_id: StationId,
    pub end_station_id: StationId,
    pub start_date: CivilDate,
    pub end_date: CivilDate,
}

impl TripRecord {
    pub fn new(start: StationId, end: StationId, start_date: CivilDate, end_date: CivilDate) -> Result<Self> {
        if end_date < start_date {
            return Err(Error::InvalidInput(alloc::format!("trip ends ({end_date}) before it starts ({start_date})")));
        }
        Ok(Self { start_station_id: start, end_station_id: end, start_date, end_date })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySample {
    pub station_id: StationId,
    pub month: YearMonth,
    /// Departures per active day.
    pub y_out: f64,
    /// Arrivals per active day.
    pub y_in: f64,
    pub active_days: u32,
}

impl MonthlySample {
    pub fn key(&self) -> (YearMonth, &StationId) {
        (self.month, &self.station_id)
    }
}

#[derive(Debug, Default, Clone)]
struct StationMonth {
    departures: u64,
    arrivals: u64,
    days: BTreeSet<u8>,
}

/// Streaming aggregator over trips. Departures are attributed to the start
/// date's month and arrivals to the end date's month, so a trip crossing a
/// month boundary counts once in each.
#[derive(Debug, Default, Clone)]
pub struct DemandAccumulator {
    cells: BTreeMap<(YearMonth, StationId), StationMonth>,
    month_filter: Option<YearMonth>,
}

impl DemandAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Only count events falling in `month`.
    pub fn for_month(month: YearMonth) -> Self {
        Self { month_filter: Some(month), ..Self::default() }
    }

    pub fn add(&mut self, trip: &TripRecord) {
        let dep_month = trip.start_date.year_month();
        if self.month_filter.is_none_or(|m| m == dep_month) {
            let cell = self.cells.entry((dep_month, trip.start_station_id.clone())).or_default();
            cell.departures += 1;
            cell.days.insert(trip.start_date.day);
        }
        let arr_month = trip.end_date.year_month();
        if self.month_filter.is_none_or(|m| m == arr_month) {
            let cell = self.cells.entry((arr_month, trip.end_station_id.clone())).or_default();
            cell.arrivals += 1;
            cell.days.insert(trip.end_date.day);
        }
    }

    /// Samples ordered by (month, station id).
    pub fn finish(self) -> Vec<MonthlySample> {
        self.cells
            .into_iter()
            .map(|((month, station_id), cell)| {
                let active_days = cell.days.len() as u32;
                let d = f64::from(active_days);
                MonthlySample {
                    station_id,
                    month,
                    y_out: cell.departures as f64 / d,
                    y_in: cell.arrivals as f64 / d,
                    active_days,
                }
            })
            .collect()
    }
}

/// One sample per station with at least one departure or arrival in `month`.
/// An active day is a day with at least one departure or arrival.
pub fn aggregate_monthly_demand<'a>(trips: impl IntoIterator<Item = &'a TripRecord>, month: YearMonth) -> Vec<MonthlySample> {
    let mut acc = DemandAccumulator::for_month(month);
    for t in trips {
        acc.add(t);
    }
    acc.finish()
}

/// Station lifecycle derived from samples: first and last month with any
/// activity. Registry entries override the derived first month but keep their
/// own coordinates; stations absent from the registry are reported as missing.
pub fn derive_lifecycle(samples: &[MonthlySample]) -> BTreeMap<StationId, (YearMonth, YearMonth)> {
    let mut out: BTreeMap<StationId, (YearMonth, YearMonth)> = BTreeMap::new();
    for s in samples {
        out.entry(s.station_id.clone())
            .and_modify(|(first, last)| {
                *first = (*first).min(s.month);
                *last = (*last).max(s.month);
            })
            .or_insert((s.month, s.month));
    }
    out
}

/// Merges registry coordinates with data-derived lifecycle. A registry
/// `first_active_month` wins when `prefer_registry` is set; otherwise the
/// data-derived month is used.
pub fn reconcile_stations(
    registry: &[StationRecord],
    samples: &[MonthlySample],
    prefer_registry: bool,
) -> Result<Vec<StationRecord>> {
    let lifecycle = derive_lifecycle(samples);
    let by_id: BTreeMap<&StationId, &StationRecord> = registry.iter().map(|s| (&s.id, s)).collect();
    let mut out = Vec::with_capacity(lifecycle.len());
    for (id, (first, last)) in lifecycle {
        let reg = by_id
            .get(&id)
            .ok_or_else(|| Error::Data(alloc::format!("station {id} has trips but no registry entry")))?;
        let mut rec = (*reg).clone();
        if !prefer_registry {
            rec.first_active_month = first;
        }
        if rec.last_active_month.is_none() || !prefer_registry {
            rec.last_active_month = Some(last.max(rec.first_active_month));
        }
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Stations with a sample in `month`. A station-month without any trip is a
/// closed station-month and is excluded.
pub fn active_stations(
    stations: &BTreeMap<StationId, StationRecord>,
    samples: &[MonthlySample],
    month: YearMonth,
) -> Vec<StationRecord> {
    let ids: BTreeSet<&StationId> = samples.iter().filter(|s| s.month == month).map(|s| &s.station_id).collect();
    ids.into_iter().filter_map(|id| stations.get(id).cloned()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<MonthlySample>,
    pub validation: Vec<MonthlySample>,
    pub test_existing: Vec<MonthlySample>,
    pub test_new: Vec<MonthlySample>,
    pub train_station_ids: BTreeSet<StationId>,
    /// Samples strictly between the training and test periods.
    pub excluded_gap: usize,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test_existing.len() + self.test_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training-period samples (`month <= train_end`) are shuffled with a seeded
/// RNG and split train/validation; test-period samples (`month >= test_start`)
/// are labeled existing or new by whether their station appears in the
/// training period.
pub fn temporal_split(
    samples: &[MonthlySample],
    train_end: YearMonth,
    test_start: YearMonth,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if train_end >= test_start {
        return Err(Error::InvalidInput(alloc::format!("train_end {train_end} must precede test_start {test_start}")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidInput(alloc::format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let mut period: Vec<MonthlySample> = samples.iter().filter(|s| s.month <= train_end).cloned().collect();
    let test: Vec<&MonthlySample> = samples.iter().filter(|s| s.month >= test_start).collect();
    if period.is_empty() {
        return Err(Error::Data("training period contains no samples".into()));
    }
    if test.is_empty() {
        return Err(Error::Data("test period contains no samples".into()));
    }
    let excluded_gap = samples.len() - period.len() - test.len();

    // Canonical order first so the split does not depend on input order.
    period.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    period.shuffle(&mut rng);
    let n_val = math::round(period.len() as f64 * val_fraction) as usize;
    let validation = period.split_off(period.len() - n_val);
    let train = period;

    let train_station_ids: BTreeSet<StationId> =
        train.iter().chain(validation.iter()).map(|s| s.station_id.clone()).collect();
    let (test_existing, test_new): (Vec<MonthlySample>, Vec<MonthlySample>) =
        test.into_iter().cloned().partition(|s| train_station_ids.contains(&s.station_id));

    Ok(DatasetSplit { train, validation, test_existing, test_new, train_station_ids, excluded_gap })
}
