//! CSV tables: station registry, monthly samples and the tabular exports.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tripgen_core::demand::MonthlySample;
use tripgen_core::explain::Attribution;
use tripgen_core::explain::AttentionEdge;
use tripgen_core::graph::{GraphKind, MonthGraphs};
use tripgen_core::train::{Metrics, RunReport, SplitMetrics};
use tripgen_core::{StationId, StationRecord, YearMonth};

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    id: String,
    lat: f64,
    lon: f64,
    first_active_month: YearMonth,
    last_active_month: Option<YearMonth>,
}

pub fn read_stations<R: Read>(reader: R) -> Result<Vec<StationRecord>> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<StationRow>().enumerate() {
        let row = row.with_context(|| format!("station row {}", i + 2))?;
        let id = StationId::new(row.id)?;
        out.push(StationRecord::new(id, row.lat, row.lon, row.first_active_month, row.last_active_month)?);
    }
    Ok(out)
}

pub fn write_stations<W: Write>(writer: W, stations: &[StationRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in stations {
        csv.serialize(StationRow {
            id: s.id.as_str().to_string(),
            lat: s.lat,
            lon: s.lon,
            first_active_month: s.first_active_month,
            last_active_month: s.last_active_month,
        })?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    station_id: String,
    month: YearMonth,
    y_out: f64,
    y_in: f64,
    active_days: u32,
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<MonthlySample>> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<SampleRow>().enumerate() {
        let row = row.with_context(|| format!("sample row {}", i + 2))?;
        anyhow::ensure!(
            row.active_days >= 1 && row.active_days <= u32::from(row.month.days_in_month()),
            "sample row {}: active_days {} outside 1..={}",
            i + 2,
            row.active_days,
            row.month.days_in_month()
        );
        anyhow::ensure!(row.y_out >= 0.0 && row.y_in >= 0.0, "sample row {}: negative demand", i + 2);
        out.push(MonthlySample {
            station_id: StationId::new(row.station_id)?,
            month: row.month,
            y_out: row.y_out,
            y_in: row.y_in,
            active_days: row.active_days,
        });
    }
    Ok(out)
}

pub fn write_samples<W: Write>(writer: W, samples: &[MonthlySample]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in samples {
        csv.serialize(SampleRow {
            station_id: s.station_id.as_str().to_string(),
            month: s.month,
            y_out: s.y_out,
            y_in: s.y_in,
            active_days: s.active_days,
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// Rows of `station_id, month` followed by one column per feature.
pub fn write_feature_matrix<'a, W: Write>(
    writer: W,
    names: &[String],
    rows: impl IntoIterator<Item = (&'a StationId, YearMonth, &'a [f64])>,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["station_id".to_string(), "month".to_string()];
    header.extend(names.iter().cloned());
    csv.write_record(&header)?;
    for (id, month, x) in rows {
        let mut record = vec![id.as_str().to_string(), month.to_string()];
        record.extend(x.iter().map(|v| v.to_string()));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GraphRow<'a> {
    center_id: &'a str,
    kind: &'static str,
    rank: usize,
    neighbor_id: &'a str,
    distance: f64,
    kernel_weight: f64,
    month: YearMonth,
}

pub fn write_graphs<'a, W: Write>(writer: W, months: impl IntoIterator<Item = &'a MonthGraphs>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for g in months {
        for (kind, graphs) in [(GraphKind::Proximity, &g.proximity), (GraphKind::Similarity, &g.similarity)] {
            for (center, graph) in graphs {
                for (rank, n) in graph.neighbors.iter().enumerate() {
                    csv.serialize(GraphRow {
                        center_id: center.as_str(),
                        kind: kind.as_str(),
                        rank: rank + 1,
                        neighbor_id: n.as_str(),
                        distance: graph.distances[rank],
                        kernel_weight: graph.kernel_weights[rank],
                        month: g.month,
                    })?;
                }
            }
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AttentionRow<'a> {
    center_id: &'a str,
    neighbor_id: &'a str,
    kind: &'static str,
    score: Option<f64>,
    weight: f64,
    month: YearMonth,
}

pub fn write_attention<W: Write>(writer: W, month: YearMonth, edges: &[AttentionEdge]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for e in edges {
        csv.serialize(AttentionRow {
            center_id: e.station_id.as_str(),
            neighbor_id: e.neighbor_id.as_str(),
            kind: e.kind.as_str(),
            score: e.score,
            weight: e.weight,
            month,
        })?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AttributionRow<'a> {
    station_id: &'a str,
    month: YearMonth,
    direction: &'static str,
    feature_name: &'a str,
    shap_value: f64,
    feature_value: f64,
}

pub fn write_attributions<W: Write>(writer: W, attributions: &[Attribution]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for a in attributions {
        csv.serialize(AttributionRow {
            station_id: a.station_id.as_str(),
            month: a.month,
            direction: a.flow_direction.as_str(),
            feature_name: &a.feature_name,
            shap_value: a.shap_value,
            feature_value: a.feature_value,
        })?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunRow<'a> {
    variant: &'a str,
    run: usize,
    seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    split: &'static str,
    direction: &'static str,
    rmse: f64,
    mae: f64,
    r2: Option<f64>,
    n: usize,
}

/// One row per run, evaluated split and direction, for box plots.
pub fn write_runs<W: Write>(writer: W, variant: &str, runs: &[RunReport]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in runs {
        let splits: [(&'static str, &Option<SplitMetrics>); 3] =
            [("validation", &r.validation), ("test_new", &r.test_new), ("test_existing", &r.test_existing)];
        for (split, metrics) in splits {
            let Some(m) = metrics else { continue };
            let dirs: [(&'static str, &Metrics); 3] = [("pooled", &m.pooled), ("out", &m.outflow), ("in", &m.inflow)];
            for (direction, m) in dirs {
                csv.serialize(RunRow {
                    variant,
                    run: r.run,
                    seed: r.seed,
                    best_epoch: r.best_epoch,
                    epochs_run: r.epochs_run,
                    split,
                    direction,
                    rmse: m.rmse,
                    mae: m.mae,
                    r2: m.r2,
                    n: m.n,
                })?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(std::io::BufReader::new(f))
}
