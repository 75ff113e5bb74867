//! Acceptance harness. Each check prints one PASS, FAIL or SKIPPED line with
//! the measured quantity and runtime; the process exits nonzero if any check
//! fails.
//!
//! The real-data check runs only when `TRIPGEN_REAL_DATA` names a data
//! directory holding the 2013-07 to 2019-12 Citi Bike trips and NYC layers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripgen::config::{ExperimentConfig, SplitSection};
use tripgen::dataset::Dataset;
use tripgen::workflow::{model_config, prepare};
use tripgen_core::demand::{aggregate_monthly_demand, TripRecord};
use tripgen_core::explain::{kernel_shap, sample_background, PlayerValues, ShapConfig};
use tripgen_core::geo::{assemble_features, extract_bss_network, extract_radius_counts, LatLon, Poi};
use tripgen_core::graph::{build_localized_graphs, GraphBuilderConfig, MonthGraphs};
use tripgen_core::model::ops::{aggregate_interaction, attention_weights, AttentionParams};
use tripgen_core::model::{
    FeatureTable, LinearModel, LinearSolver, Model, ModelConfig, ModelInput, NeighborSet, NeuralModel, Player, Variant,
    MONTH_DUMMIES,
};
use tripgen_core::nn::{check_gradients, init_bounded, resolution_floor, Tape};
use tripgen_core::pipeline::{ExperimentData, PipelineConfig};
use tripgen_core::scenario::{Candidate, Scenario, ScenarioEngine, ScenarioOptions};
use tripgen_core::synth::{generate_city, SynthConfig, SyntheticCity};
use tripgen_core::train::{compute_metrics, predict_split, run_experiment, train, Experiment, TrainRunConfig};
use tripgen_core::{CivilDate, StationId, StationRecord, YearMonth};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// `|a - b| <= tol * max(1, |b|)`.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

struct City {
    city: SyntheticCity,
    data: ExperimentData,
}

fn city() -> &'static City {
    static CITY: OnceLock<City> = OnceLock::new();
    CITY.get_or_init(|| {
        let city = generate_city(&SynthConfig::default()).expect("default synthetic city");
        let data = synth_data(&city);
        City { city, data }
    })
}

fn synth_data(city: &SyntheticCity) -> ExperimentData {
    let (train_end, test_start) = city.config.suggested_split();
    let config = PipelineConfig { graph: GraphBuilderConfig::default(), train_end, test_start, val_fraction: 0.2, split_seed: 1 };
    ExperimentData::build(&city.stations, &city.samples, &city.layers, config).expect("experiment data")
}

/// Ten-run experiments per variant on the default city, filled in by the
/// spillover check and reused for the attribution check.
static EXPERIMENTS: OnceLock<BTreeMap<&'static str, Experiment>> = OnceLock::new();

fn gradient_check() -> Outcome {
    let config = ModelConfig { k: 2, ..ModelConfig::for_variant(Variant::Mgat) };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let mut model = NeuralModel::new(config.clone(), &mut rng).unwrap();
        let mut table = FeatureTable::new(config.input_dim);
        for _ in 0..5 {
            let row: Vec<f64> = (0..config.input_dim).map(|_| rng.random_range(0.0..1.0)).collect();
            table.push(&row).unwrap();
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for c in 0..5 {
            let mut others: Vec<usize> = (0..5).filter(|&j| j != c).collect();
            let mut neighbors = |rng: &mut ChaCha8Rng| {
                others.shuffle(rng);
                NeighborSet { rows: others[..2].to_vec(), kernel_weights: vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)] }
            };
            let proximity = neighbors(&mut rng);
            let similarity = neighbors(&mut rng);
            inputs.push(ModelInput { center: c, proximity, similarity, month_index: rng.random_range(0..12), age: rng.random_range(0.0..1.0) });
            targets.push([rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
        }
        let batch: Vec<&ModelInput> = inputs.iter().collect();
        let mut tape = Tape::new();
        model.forward_tape(model.params(), &mut tape, &table, &batch).unwrap();
        if tape.min_kink_distance() <= 1e-4 {
            continue;
        }
        model.compute_gradients(&table, &batch, &targets).unwrap();
        let loss = model.batch_loss_with(model.params(), &table, &batch, &targets).unwrap();
        let floor = resolution_floor(loss, 1e-5, 1e-4);
        let mut store = model.params().clone();
        let report = check_gradients(&mut store, 1e-5, floor, |s| model.batch_loss_with(s, &table, &batch, &targets)).unwrap();
        let all = report.checked == model.params().scalar_count();
        return verdict(
            all && report.max_relative_error < 1e-4,
            format!(
                "h 1e-5, max relative error {:.2e} over {} scalars (floor {floor:.1e}), worst at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                report.max_relative_error,
                report.checked,
                report.worst_parameter,
                report.worst_index,
                report.worst_analytic,
                report.worst_numeric
            ),
        );
    }
    Outcome::Fail("no instance kept every activation 1e-4 away from a kink in 50 draws".into())
}

fn attention_invariants() -> Outcome {
    let config = ModelConfig::for_variant(Variant::Mgat);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_sum = 0.0f64;
    let mut agg_mismatch = 0;
    let mut model_mismatch = 0;
    for _ in 0..1000 {
        let model = NeuralModel::new(config.clone(), &mut rng).unwrap();
        let param = |prefix: &str| model.params().iter().find(|p| p.name.starts_with(prefix)).unwrap().value.clone();
        let (w_s1, b_s1, w_s2, b_s2) = (param("W_s1"), param("b_s1"), param("W_s2"), param("b_s2"));
        let w_s1 = init_bounded(&mut rng, w_s1.rows(), w_s1.cols(), 2.0);
        let b_s1 = init_bounded(&mut rng, b_s1.rows(), b_s1.cols(), 2.0);
        let w_s2 = init_bounded(&mut rng, w_s2.rows(), w_s2.cols(), 2.0);
        let b_s2 = init_bounded(&mut rng, b_s2.rows(), b_s2.cols(), 2.0);
        let p = AttentionParams { w_s1: &w_s1, b_s1: &b_s1, w_s2: &w_s2, b_s2: &b_s2, leaky_slope: config.leaky_slope };
        let k = rng.random_range(1..=12);
        let center: Vec<f64> = (0..config.d_h).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut neighbors: Vec<Vec<f64>> = (0..k).map(|_| (0..config.d_h).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let (_, eps) = attention_weights(&center, &neighbors, p);
        worst_sum = worst_sum.max((eps.iter().sum::<f64>() - 1.0).abs());
        let before = aggregate_interaction(&eps, &neighbors).unwrap();
        neighbors.shuffle(&mut rng);
        let (_, eps) = attention_weights(&center, &neighbors, p);
        let after = aggregate_interaction(&eps, &neighbors).unwrap();
        if before.iter().map(|v| v.to_bits()).ne(after.iter().map(|v| v.to_bits())) {
            agg_mismatch += 1;
        }

        let mut table = FeatureTable::new(config.input_dim);
        for _ in 0..=2 * k {
            let row: Vec<f64> = (0..config.input_dim).map(|_| rng.random_range(0.0..1.0)).collect();
            table.push(&row).unwrap();
        }
        let set = |rows: Vec<usize>, rng: &mut ChaCha8Rng| {
            let kernel_weights = rows.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            NeighborSet { rows, kernel_weights }
        };
        let proximity = set((1..=k).collect(), &mut rng);
        let similarity = set((k + 1..=2 * k).collect(), &mut rng);
        let input = ModelInput { center: 0, proximity, similarity, month_index: rng.random_range(0..12), age: rng.random_range(0.0..1.0) };
        let permute = |n: &NeighborSet, rng: &mut ChaCha8Rng| {
            let mut order: Vec<usize> = (0..n.len()).collect();
            order.shuffle(rng);
            NeighborSet { rows: order.iter().map(|&i| n.rows[i]).collect(), kernel_weights: order.iter().map(|&i| n.kernel_weights[i]).collect() }
        };
        let shuffled = ModelInput { proximity: permute(&input.proximity, &mut rng), similarity: permute(&input.similarity, &mut rng), ..input.clone() };
        let model = Model::Neural(model);
        let a = model.predict(&table, &input).unwrap();
        let b = model.predict(&table, &shuffled).unwrap();
        if a.map(f64::to_bits) != b.map(f64::to_bits) {
            model_mismatch += 1;
        }
    }
    verdict(
        worst_sum <= 1e-6 && agg_mismatch == 0 && model_mismatch == 0,
        format!(
            "1000 instances: max |sum(eps) - 1| = {worst_sum:.1e}, {agg_mismatch} aggregation and {model_mismatch} prediction changes under reordering"
        ),
    )
}

fn slx_equivalence() -> Outcome {
    let city = generate_city(&SynthConfig { noise_sd: 0.0, spillover_strength: 0.5, ..SynthConfig::default() }).unwrap();
    let d = synth_data(&city);
    let ols = LinearModel::fit_ols(Variant::Slx, &d.table, &d.train.inputs, &d.train.targets).unwrap();
    let raw = ols.raw_coefficients(&d.scalers.features, &d.scalers.targets);
    let lag = raw.lag.as_ref().expect("slx has lag coefficients");
    let mut beta_err = 0.0f64;
    for dir in 0..2 {
        for (j, b) in city.truth.beta[dir].iter().enumerate() {
            beta_err = beta_err.max((raw.direct[dir][j] - b).abs()).max((lag[dir][j] - 0.5 * b).abs());
        }
    }
    let config = TrainRunConfig { variant: Variant::Slx, linear_solver: LinearSolver::Gd, ..TrainRunConfig::default() };
    let gd = train(&ModelConfig::for_variant(Variant::Slx), &config, &d.table, &d.train, &d.validation).unwrap();
    let converged = gd.gd_reports.as_ref().is_some_and(|r| r.iter().all(|r| r.converged));
    let ols = Model::Linear(ols);
    let mut rmse = 0.0f64;
    for split in [&d.test_new, &d.test_existing] {
        let a = predict_split(&gd.model, &d.table, split, &d.scalers).unwrap();
        let b = predict_split(&ols, &d.table, split, &d.scalers).unwrap();
        let sse: f64 = a.iter().zip(&b).map(|(x, y)| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sum();
        rmse = rmse.max((sse / (2 * a.len()) as f64).sqrt());
    }
    verdict(
        converged && rmse < 1e-4 && beta_err < 1e-6,
        format!("gd vs ols rmse {rmse:.2e}, max coefficient error {beta_err:.2e}, gd converged: {converged}"),
    )
}

fn haversine_oracle(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * h.sqrt().atan2((1.0 - h).sqrt())
}

fn random_point(rng: &mut ChaCha8Rng, half_deg: f64) -> LatLon {
    LatLon::new(40.75 + rng.random_range(-half_deg..half_deg), -73.98 + rng.random_range(-half_deg..half_deg))
}

fn random_stations(rng: &mut ChaCha8Rng, n: usize, half_deg: f64) -> Vec<StationRecord> {
    let month = YearMonth::new(2019, 1).unwrap();
    (0..n)
        .map(|i| {
            let at = random_point(rng, half_deg);
            StationRecord::new(StationId::from(format!("S{i:03}").as_str()), at.lat, at.lon, month, None).unwrap()
        })
        .collect()
}

fn std_oracle(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn knn_mismatches(graphs: &MonthGraphs, stations: &[StationRecord], features: &BTreeMap<StationId, Vec<f64>>, k: usize) -> Vec<String> {
    let mut problems = Vec::new();
    let n = stations.len();
    let geo = |i: usize, j: usize| haversine_oracle(stations[i].location(), stations[j].location());
    let feat = |i: usize, j: usize| {
        let (a, b) = (&features[&stations[i].id], &features[&stations[j].id]);
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let pairs = |f: &dyn Fn(usize, usize) -> f64| (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect::<Vec<_>>();
    let sigma_d = std_oracle(&pairs(&geo));
    let sigma_b = std_oracle(&pairs(&feat));
    if !close(graphs.sigma_d, sigma_d, 1e-9) || !close(graphs.sigma_b, sigma_b, 1e-9) {
        problems.push(format!("bandwidths {} / {} vs {sigma_d} / {sigma_b}", graphs.sigma_d, graphs.sigma_b));
    }
    for (dist, sigma, built) in [(&geo as &dyn Fn(usize, usize) -> f64, sigma_d, &graphs.proximity), (&feat, sigma_b, &graphs.similarity)] {
        for c in 0..n {
            let mut ranked: Vec<(f64, &StationId)> = (0..n).filter(|&j| j != c).map(|j| (dist(c, j), &stations[j].id)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            ranked.truncate(k);
            let g = &built[&stations[c].id];
            let ids: Vec<&StationId> = ranked.iter().map(|r| r.1).collect();
            if g.neighbors.iter().collect::<Vec<_>>() != ids {
                problems.push(format!("{:?} neighbors of {}", g.kind, stations[c].id));
                continue;
            }
            for (e, (d, _)) in ranked.iter().enumerate() {
                let w = (-(d / sigma).powi(2)).exp();
                if !close(g.distances[e], *d, 1e-9) || (g.kernel_weights[e] - w).abs() > 1e-9 {
                    problems.push(format!("{:?} edge {e} of {}", g.kind, stations[c].id));
                }
            }
        }
    }
    problems
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut problems: Vec<String> = Vec::new();
    let mut checked = Vec::new();

    let stations = random_stations(&mut rng, 300, 0.06);
    let features: BTreeMap<StationId, Vec<f64>> =
        stations.iter().map(|s| (s.id.clone(), (0..43).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
    let graphs =
        build_localized_graphs(&stations, &features, &GraphBuilderConfig::default(), YearMonth::new(2019, 1).unwrap()).unwrap();
    problems.extend(knn_mismatches(&graphs, &stations, &features, 5));
    checked.push("knn graphs (300 stations)");

    let pois: Vec<Poi> = (0..500).map(|_| Poi { at: random_point(&mut rng, 0.01), category: rng.random_range(0..10) }).collect();
    for c in 0..50 {
        let center = random_point(&mut rng, 0.008);
        let counts = extract_radius_counts(center, &pois, 10, 500.0).unwrap();
        let mut oracle = vec![0u32; 10];
        for p in pois.iter().filter(|p| haversine_oracle(center, p.at) <= 500.0) {
            oracle[p.category] += 1;
        }
        if counts != oracle {
            problems.push(format!("radius counts at center {c}: {counts:?} vs {oracle:?}"));
        }
    }
    checked.push("radius counts (500 points)");

    let network = random_stations(&mut rng, 400, 0.04);
    for s in &network {
        let bss = extract_bss_network(s, &network);
        let distances: Vec<f64> = network.iter().filter(|o| o.id != s.id).map(|o| haversine_oracle(s.location(), o.location())).collect();
        let band = |lo: f64, hi: f64| distances.iter().filter(|&&d| d >= lo && d < hi).count() as u32;
        let bands = [band(0.0, 500.0), band(500.0, 1000.0), band(1000.0, 5000.0)];
        let mean = distances.iter().sum::<f64>() / distances.len() as f64;
        if bss.bands != bands || !close(bss.mean_distance_m, mean, 1e-9) {
            problems.push(format!("bands of {}: {:?} vs {bands:?}", s.id, bss.bands));
        }
    }
    checked.push("band features (400 stations)");

    let ids: Vec<StationId> = (0..25).map(|i| StationId::from(format!("T{i:02}").as_str())).collect();
    let mut trips = Vec::new();
    for _ in 0..500 {
        let start = CivilDate::new(2019, rng.random_range(2..=4), rng.random_range(1..=28)).unwrap();
        let end = if rng.random_bool(0.1) && start.month < 4 { CivilDate::new(2019, start.month + 1, 1).unwrap() } else { start };
        trips.push(
            TripRecord::new(ids[rng.random_range(0..ids.len())].clone(), ids[rng.random_range(0..ids.len())].clone(), start, end).unwrap(),
        );
    }
    for m in 2..=4u8 {
        let month = YearMonth::new(2019, m).unwrap();
        let samples = aggregate_monthly_demand(&trips, month);
        let mut oracle: BTreeMap<&StationId, (u32, u32, BTreeSet<u8>)> = BTreeMap::new();
        for t in &trips {
            if t.start_date.month == m {
                let e = oracle.entry(&t.start_station_id).or_default();
                e.0 += 1;
                e.2.insert(t.start_date.day);
            }
            if t.end_date.month == m {
                let e = oracle.entry(&t.end_station_id).or_default();
                e.1 += 1;
                e.2.insert(t.end_date.day);
            }
        }
        let total_out: f64 = samples.iter().map(|s| s.y_out * f64::from(s.active_days)).sum();
        let departures = trips.iter().filter(|t| t.start_date.month == m).count() as f64;
        if samples.len() != oracle.len() || !close(total_out, departures, 1e-9) {
            problems.push(format!("{month}: {} samples vs {}", samples.len(), oracle.len()));
            continue;
        }
        for s in &samples {
            let Some((out, inflow, days)) = oracle.get(&s.station_id) else {
                problems.push(format!("{month}: unexpected station {}", s.station_id));
                continue;
            };
            let d = days.len() as f64;
            if s.active_days as usize != days.len() || !close(s.y_out, f64::from(*out) / d, 1e-9) || !close(s.y_in, f64::from(*inflow) / d, 1e-9) {
                problems.push(format!("{month}: station {}", s.station_id));
            }
        }
    }
    checked.push("monthly aggregation (500 trips)");

    for n in [1usize, 7, 500] {
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..40.0)).collect();
        let predictions: Vec<f64> = targets.iter().map(|t| t + rng.random_range(-5.0..5.0)).collect();
        let m = compute_metrics(&predictions, &targets).unwrap();
        let errs: Vec<f64> = predictions.iter().zip(&targets).map(|(p, t)| p - t).collect();
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / n as f64;
        let mean = targets.iter().sum::<f64>() / n as f64;
        let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
        let r2 = (ss_tot > 0.0).then(|| 1.0 - errs.iter().map(|e| e * e).sum::<f64>() / ss_tot);
        let r2_ok = match (m.r2, r2) {
            (Some(a), Some(b)) => close(a, b, 1e-9),
            (None, None) => true,
            _ => false,
        };
        if !close(m.rmse, rmse, 1e-9) || !close(m.mae, mae, 1e-9) || !r2_ok || m.n != n {
            problems.push(format!("metrics over {n} values"));
        }
    }
    checked.push("metrics (1, 7, 500 values)");

    let detail = if problems.is_empty() {
        checked.join(", ")
    } else {
        format!("{} mismatches, first: {}", problems.len(), problems[0])
    };
    verdict(problems.is_empty(), detail)
}

fn spillover_ordering() -> Outcome {
    let c = city();
    if c.city.config.expansions.len() != 3 || c.city.config.n_stations != 200 || c.city.config.n_months != 36 {
        return Outcome::Fail("default synthetic city does not have 200 stations, 36 months and 3 expansions".into());
    }
    let mut experiments = BTreeMap::new();
    for variant in [Variant::Mgat, Variant::Fnn, Variant::Pgat, Variant::Bgat] {
        let config = TrainRunConfig { variant, n_runs: 10, ..TrainRunConfig::default() };
        match run_experiment(&c.data, &ModelConfig::for_variant(variant), &config) {
            Ok(e) => experiments.insert(variant.as_str(), e),
            Err(e) => return Outcome::Fail(format!("{variant} experiment failed: {e}")),
        };
    }
    let rmses = |v: &str| -> Vec<f64> { experiments[v].report.runs.iter().map(|r| r.test_new.unwrap().pooled.rmse).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mgat, fnn, pgat, bgat) = (rmses("mgat"), rmses("fnn"), rmses("pgat"), rmses("bgat"));
    let pgat_wins = pgat.iter().zip(&bgat).filter(|(p, b)| p < b).count();
    let (m_mgat, m_fnn) = (mean(&mgat), mean(&fnn));
    let _ = EXPERIMENTS.set(experiments);
    verdict(
        m_mgat < m_fnn && pgat_wins >= 8,
        format!(
            "mean test-new rmse mgat {m_mgat:.4} vs fnn {m_fnn:.4}; pgat below bgat in {pgat_wins}/10 runs (means {:.4} vs {:.4})",
            mean(&pgat),
            mean(&bgat)
        ),
    )
}

fn zero_feature(model: &Model, j: usize) -> Model {
    let Model::Neural(m) = model else { unreachable!("neural model expected") };
    let mut params = m.params().clone();
    for p in params.iter_mut() {
        if p.name.starts_with("W_h") || p.name == "W_o1" {
            p.value.row_mut(j).fill(0.0);
        }
    }
    Model::Neural(NeuralModel::from_params(m.config().clone(), params).unwrap())
}

fn shap_properties() -> Outcome {
    let c = city();
    let d = &c.data;
    let mgat = match EXPERIMENTS.get() {
        Some(e) => e["mgat"].models[0].clone(),
        None => {
            let run = TrainRunConfig { variant: Variant::Mgat, seed: 2, ..TrainRunConfig::default() };
            train(&ModelConfig::for_variant(Variant::Mgat), &run, &d.table, &d.train, &d.validation).unwrap().model
        }
    };
    let background = sample_background(&d.table, &d.train, 100, 4);
    let shap = ShapConfig::default();
    let rows: Vec<usize> = (0..50).map(|i| i * d.test_new.len() / 50).collect();

    let mut local = 0.0f64;
    for &i in &rows {
        let input = &d.test_new.inputs[i];
        let prepared = mgat.prepare(&d.table, input).unwrap();
        let e = kernel_shap(&mgat, &prepared, &PlayerValues::of(&d.table, input), &background, &d.scalers, &shap).unwrap();
        let direct = d.scalers.denormalize_targets(mgat.predict(&d.table, input).unwrap());
        for dir in 0..2 {
            local = local.max((e.base_value[dir] + e.values[dir].iter().sum::<f64>() - direct[dir]).abs());
        }
    }

    let dummy_model = zero_feature(&mgat, c.city.config.dominant_feature);
    let dummy = Player::Feature(c.city.config.dominant_feature);
    let mut dummy_max = 0.0f64;
    for &i in &rows {
        let input = &d.test_new.inputs[i];
        let prepared = dummy_model.prepare(&d.table, input).unwrap();
        let e = kernel_shap(&dummy_model, &prepared, &PlayerValues::of(&d.table, input), &background, &d.scalers, &shap).unwrap();
        let p = e.players.iter().position(|p| *p == dummy).unwrap();
        dummy_max = dummy_max.max(e.values[0][p].abs()).max(e.values[1][p].abs());
    }

    let lin = LinearModel::fit_ols(Variant::Linreg, &d.table, &d.train.inputs, &d.train.targets).unwrap();
    let model = Model::Linear(lin.clone());
    let dim = lin.input_dim();
    let span = [d.scalers.targets.span(0), d.scalers.targets.span(1)];
    let month_coef = |c: &[f64], m: usize| if m == 0 { 0.0 } else { c[dim + m - 1] };
    let n_bg = background.len() as f64;
    let mut linear = 0.0f64;
    for &i in &rows {
        let input = &d.test_new.inputs[i];
        let inst = PlayerValues::of(&d.table, input);
        let prepared = model.prepare(&d.table, input).unwrap();
        let e = kernel_shap(&model, &prepared, &inst, &background, &d.scalers, &shap).unwrap();
        for dir in 0..2 {
            let c = &lin.coefficients()[dir];
            for (p, player) in e.players.iter().enumerate() {
                let expected = match *player {
                    Player::Feature(j) => c[j] * (inst.x[j] - background.iter().map(|b| b.x[j]).sum::<f64>() / n_bg),
                    Player::Age => c[dim + MONTH_DUMMIES] * (inst.age - background.iter().map(|b| b.age).sum::<f64>() / n_bg),
                    Player::Month => month_coef(c, inst.month_index) - background.iter().map(|b| month_coef(c, b.month_index)).sum::<f64>() / n_bg,
                } * span[dir];
                linear = linear.max((e.values[dir][p] - expected).abs());
            }
        }
    }
    verdict(
        local < 1e-3 && dummy_max < 1e-6 && linear < 1e-3,
        format!("50 samples: local accuracy {local:.1e}, dummy {dummy_max:.1e}, linear closed form {linear:.1e}"),
    )
}

fn real_data() -> Outcome {
    let Some(root) = std::env::var_os("TRIPGEN_REAL_DATA").map(PathBuf::from) else {
        return Outcome::Skipped("set TRIPGEN_REAL_DATA to a Citi Bike 2013-07..2019-12 data directory to run".into());
    };
    let dataset = match Dataset::load(&root) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("loading {}: {e:#}", root.display())),
    };
    let config = ExperimentConfig {
        split: SplitSection {
            train_end: Some(YearMonth::new(2017, 8).unwrap()),
            test_start: Some(YearMonth::new(2017, 9).unwrap()),
            val_fraction: 0.2,
            ..SplitSection::default()
        },
        ..ExperimentConfig::default()
    };
    let data = match prepare(&dataset, &config) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("building features: {e:#}")),
    };
    let within = |got: usize, want: usize| (got as f64 - want as f64).abs() <= 0.02 * want as f64;
    let counts = [
        ("train+val", data.train.len() + data.validation.len(), 21_827),
        ("train", data.train.len(), 17_462),
        ("validation", data.validation.len(), 4_365),
        ("test", data.test_new.len() + data.test_existing.len(), 21_808),
        ("test-new", data.test_new.len(), 5_362),
        ("test-existing", data.test_existing.len(), 16_446),
    ];
    let counts_ok = counts.iter().all(|&(_, got, want)| within(got, want));
    let experiment = match run_experiment(&data, &model_config(&config), &config.train) {
        Ok(e) => e,
        Err(e) => return Outcome::Fail(format!("training: {e}")),
    };
    let r2_new = experiment.report.mean_test_new.and_then(|m| m.r2).unwrap_or(f64::NAN);
    let r2_existing = experiment.report.mean_test_existing.and_then(|m| m.r2).unwrap_or(f64::NAN);
    let listed: Vec<String> = counts.iter().map(|(name, got, want)| format!("{name} {got}/{want}")).collect();
    verdict(
        counts_ok && r2_new >= 0.65 && r2_existing >= 0.78,
        format!("{}; mgat test r2 new {r2_new:.3}, existing {r2_existing:.3}", listed.join(", ")),
    )
}

fn scenario_consistency() -> Outcome {
    let c = city();
    let d = &c.data;
    let slx = LinearModel::fit_ols(Variant::Slx, &d.table, &d.train.inputs, &d.train.targets).unwrap();
    let engine = ScenarioEngine::new(
        Model::Linear(slx),
        d.scalers.clone(),
        d.graph_config.clone(),
        c.city.layers.clone(),
        &c.city.stations,
        &c.city.samples,
    )
    .unwrap();
    let month = c.city.config.last_month();
    let baseline = engine.baseline(month).unwrap();
    let active = engine.active_at(month).unwrap();
    let half = c.city.config.area_extent_km * 500.0;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut feature_err = 0.0f64;
    let mut graph_mismatch = 0;
    for n in 0..20 {
        let additions = (0..rng.random_range(1..=3))
            .map(|j| {
                let at = c.city.offset(rng.random_range(-half..half), rng.random_range(-half..half));
                Candidate { id: StationId::from(format!("C{n}_{j}").as_str()), lat: at.lat, lon: at.lon }
            })
            .collect();
        let mut removals: Vec<StationId> = (0..rng.random_range(0..=3)).map(|_| active[rng.random_range(0..active.len())].id.clone()).collect();
        removals.sort();
        removals.dedup();
        let scenario = Scenario { id: format!("s{n}"), base_month: month, additions, removals };
        let applied = match engine.apply(&baseline, &scenario, &ScenarioOptions::default()) {
            Ok(a) => a,
            Err(e) => return Outcome::Fail(format!("scenario {n}: {e}")),
        };

        let mut modified: Vec<StationRecord> = baseline.view.stations.iter().filter(|s| !scenario.removals.contains(&s.id)).cloned().collect();
        for cand in &scenario.additions {
            modified.push(StationRecord::new(cand.id.clone(), cand.lat, cand.lon, month, None).unwrap());
        }
        let mut raw = BTreeMap::new();
        let mut normalized = BTreeMap::new();
        for s in &modified {
            let (x, _) = assemble_features(s, month, &c.city.layers, &modified).unwrap();
            normalized.insert(s.id.clone(), d.scalers.features.transform(x.as_slice()));
            raw.insert(s.id.clone(), x);
        }
        let graphs = build_localized_graphs(&modified, &normalized, &d.graph_config, month).unwrap();
        if applied.view.graphs != graphs || applied.view.len() != modified.len() {
            graph_mismatch += 1;
        }
        for (i, s) in applied.view.stations.iter().enumerate() {
            let Some(expected) = raw.get(&s.id) else {
                graph_mismatch += 1;
                continue;
            };
            for (a, b) in applied.view.raw[i].as_slice().iter().zip(expected.as_slice()) {
                feature_err = feature_err.max((a - b).abs() / b.abs().max(1.0));
            }
            for (a, b) in applied.view.normalized.row(i).iter().zip(&normalized[&s.id]) {
                feature_err = feature_err.max((a - b).abs());
            }
        }
    }
    let empty = engine.evaluate(&baseline, &Scenario::empty("empty", month), &ScenarioOptions::default()).unwrap();
    let nonzero = empty.stations.iter().filter(|s| (s.delta_out, s.delta_in) != (Some(0.0), Some(0.0))).count();
    let complete = empty.stations.len() == baseline.predictions.len();
    verdict(
        feature_err <= 1e-9 && graph_mismatch == 0 && nonzero == 0 && complete,
        format!(
            "20 scenarios: max feature error {feature_err:.1e}, {graph_mismatch} graph mismatches; empty scenario: {nonzero} nonzero deltas over {} stations",
            empty.stations.len()
        ),
    )
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "gradient correctness", limit: Duration::from_secs(10), run: gradient_check },
        Criterion { name: "attention invariants", limit: Duration::from_secs(10), run: attention_invariants },
        Criterion { name: "slx vs linear network", limit: Duration::from_secs(60), run: slx_equivalence },
        Criterion { name: "oracle equivalences", limit: Duration::from_secs(60), run: oracle_equivalences },
        Criterion { name: "spillover ordering", limit: Duration::from_secs(30 * 60), run: spillover_ordering },
        Criterion { name: "shap properties", limit: Duration::from_secs(5 * 60), run: shap_properties },
        Criterion { name: "real-data pipeline", limit: Duration::from_secs(4 * 3600), run: real_data },
        Criterion { name: "scenario consistency", limit: Duration::from_secs(2 * 60), run: scenario_consistency },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let timing = format!("{:.2} s, limit {} s", elapsed.as_secs_f64(), c.limit.as_secs());
        let line = match outcome {
            Outcome::Pass(detail) if elapsed <= c.limit => format!("PASS    {}: {detail} ({timing})", c.name),
            Outcome::Pass(detail) => format!("FAIL    {}: {detail} (over time: {timing})", c.name),
            Outcome::Fail(detail) => format!("FAIL    {}: {detail} ({timing})", c.name),
            Outcome::Skipped(reason) => format!("SKIPPED {}: {reason}", c.name),
        };
        if line.starts_with("FAIL") {
            failed += 1;
        }
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
