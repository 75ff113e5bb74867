//! Feature attributions by KernelSHAP and attention-edge export.
//!
//! The players of an explanation are the explained station's own features,
//! its age and its month (one categorical player). Neighbor rows and graphs
//! stay fixed at the explained sample's values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphKind;
use crate::linalg::{solve_normal_equations, NormalEquations};
use crate::model::ops::normalize_kernel_weights;
use crate::model::{FeatureTable, Model, ModelInput, Player, Prepared};
use crate::pipeline::{MonthView, Scalers, SplitData};
use crate::station::StationId;
use crate::time::YearMonth;

/// Values of every player for one sample: normalized features, normalized
/// age and month index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerValues {
    pub x: Vec<f64>,
    pub age: f64,
    pub month_index: usize,
}

impl PlayerValues {
    pub fn of(table: &FeatureTable, input: &ModelInput) -> Self {
        Self { x: table.row(input.center).to_vec(), age: input.age, month_index: input.month_index }
    }

    fn same(&self, other: &Self, player: Player) -> bool {
        match player {
            Player::Feature(j) => self.x[j] == other.x[j],
            Player::Age => self.age == other.age,
            Player::Month => self.month_index == other.month_index,
        }
    }

    fn take(&mut self, from: &Self, player: Player) {
        match player {
            Player::Feature(j) => self.x[j] = from.x[j],
            Player::Age => self.age = from.age,
            Player::Month => self.month_index = from.month_index,
        }
    }
}

/// Up to `size` distinct samples of `split`, chosen with a seeded RNG.
pub fn sample_background(table: &FeatureTable, split: &SplitData, size: usize, seed: u64) -> Vec<PlayerValues> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = split.len();
    let mut picked: Vec<usize> = sample_indices(&mut rng, n, size.min(n)).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| PlayerValues::of(table, &split.inputs[i])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    pub n_coalitions: usize,
    pub background_size: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self { n_coalitions: 2048, background_size: 100, seed: 0 }
    }
}

/// Shapley estimates for one sample, in trips per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    pub players: Vec<Player>,
    /// Mean prediction over the background, per direction.
    pub base_value: [f64; 2],
    /// `values[d][p]` is the attribution of `players[p]` for direction `d`.
    pub values: [Vec<f64>; 2],
    pub prediction: [f64; 2],
    /// Coalitions evaluated (excluding the empty and full ones).
    pub coalitions: usize,
    /// True when every coalition was enumerated, making the values exact.
    pub exact: bool,
}

/// Model output in trips per day with the neighbor state frozen.
struct FrozenModel<'a> {
    model: &'a Model,
    prepared: &'a Prepared,
    scalers: &'a Scalers,
}

impl FrozenModel<'_> {
    fn eval(&self, v: &PlayerValues) -> Result<[f64; 2]> {
        let y = self.model.predict_prepared(self.prepared, &v.x, v.month_index, v.age)?;
        Ok(self.scalers.denormalize_targets(y))
    }

    /// Mean output over the background with `coalition` players set to the
    /// instance's values.
    fn coalition_value(&self, instance: &PlayerValues, background: &[PlayerValues], players: &[Player], coalition: &[bool]) -> Result<[f64; 2]> {
        let mut acc = [0.0; 2];
        let mut row = instance.clone();
        for b in background {
            row.clone_from(b);
            for (p, on) in players.iter().zip(coalition) {
                if *on {
                    row.take(instance, *p);
                }
            }
            let y = self.eval(&row)?;
            acc[0] += y[0];
            acc[1] += y[1];
        }
        let n = background.len() as f64;
        Ok([acc[0] / n, acc[1] / n])
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..k {
        s += crate::math::ln((n - i) as f64) - crate::math::ln((i + 1) as f64);
    }
    s
}

/// Shapley kernel weight of one coalition of size `s` among `m` players.
fn kernel_weight(m: usize, s: usize) -> f64 {
    let log = crate::math::ln((m - 1) as f64) - ln_choose(m, s) - crate::math::ln((s * (m - s)) as f64);
    crate::math::exp(log)
}

/// Coalitions with weights: all of them when `2^m - 2 <= budget`, otherwise
/// `budget` sampled ones in complementary pairs, with sizes drawn in
/// proportion to the total kernel weight of each size.
fn coalitions(m: usize, budget: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<bool>>, Vec<f64>, bool) {
    if m < 63 && (1u64 << m) - 2 <= budget as u64 {
        let mut masks = Vec::new();
        let mut weights = Vec::new();
        for bits in 1..((1u64 << m) - 1) {
            let mask: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
            let s = mask.iter().filter(|b| **b).count();
            weights.push(kernel_weight(m, s));
            masks.push(mask);
        }
        return (masks, weights, true);
    }
    let size_weight: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = size_weight.iter().sum();
    let mut masks = Vec::with_capacity(budget);
    while masks.len() + 1 < budget {
        let mut u = rng.random::<f64>() * total;
        let mut s = m - 1;
        for (i, w) in size_weight.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = alloc::vec![false; m];
        for j in sample_indices(rng, m, s) {
            mask[j] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
        masks.push(mask);
        masks.push(complement);
    }
    let n = masks.len();
    (masks, alloc::vec![1.0; n], false)
}

/// KernelSHAP for one sample. Players the model provably ignores, and
/// players whose value equals the instance's in every background row, get
/// exactly zero; the remaining attributions solve the weighted least-squares
/// problem under the constraint that they sum to `prediction - base_value`.
pub fn kernel_shap(
    model: &Model,
    prepared: &Prepared,
    instance: &PlayerValues,
    background: &[PlayerValues],
    scalers: &Scalers,
    config: &ShapConfig,
) -> Result<ShapExplanation> {
    let players = Player::all(instance.x.len());
    if config.n_coalitions < players.len() + 2 {
        return Err(Error::Config(format!(
            "n_coalitions = {} is below players + 2 = {}; the attribution system would be underdetermined",
            config.n_coalitions,
            players.len() + 2
        )));
    }
    if background.is_empty() {
        return Err(Error::InvalidInput("KernelSHAP needs at least one background sample".into()));
    }
    let frozen = FrozenModel { model, prepared, scalers };
    let prediction = frozen.eval(instance)?;
    let mut base_value = [0.0; 2];
    for b in background {
        let y = frozen.eval(b)?;
        base_value[0] += y[0];
        base_value[1] += y[1];
    }
    base_value = base_value.map(|v| v / background.len() as f64);

    let active: Vec<usize> = (0..players.len())
        .filter(|&p| !model.ignores(players[p]) && background.iter().any(|b| !b.same(instance, players[p])))
        .collect();
    let mut values = [alloc::vec![0.0; players.len()], alloc::vec![0.0; players.len()]];
    let gap = [prediction[0] - base_value[0], prediction[1] - base_value[1]];
    let m = active.len();
    let mut result = ShapExplanation { players: players.clone(), base_value, values: values.clone(), prediction, coalitions: 0, exact: true };
    if m == 0 {
        return Ok(result);
    }
    if m == 1 {
        values[0][active[0]] = gap[0];
        values[1][active[0]] = gap[1];
        result.values = values;
        return Ok(result);
    }

    let active_players: Vec<Player> = active.iter().map(|&p| players[p]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (masks, weights, exact) = coalitions(m, config.n_coalitions, &mut rng);
    let mut outputs = Vec::with_capacity(masks.len());
    for mask in &masks {
        outputs.push(frozen.coalition_value(instance, background, &active_players, mask)?);
    }

    // Substituting the last player's value from the sum constraint leaves an
    // unconstrained regression on m - 1 coefficients.
    for d in 0..2 {
        let mut eq = NormalEquations::new(m - 1);
        let mut row = alloc::vec![0.0; m - 1];
        for ((mask, w), out) in masks.iter().zip(&weights).zip(&outputs) {
            let last = if mask[m - 1] { 1.0 } else { 0.0 };
            let sw = crate::math::sqrt(*w);
            for j in 0..m - 1 {
                row[j] = sw * ((if mask[j] { 1.0 } else { 0.0 }) - last);
            }
            eq.add_row(&row, sw * (out[d] - base_value[d] - last * gap[d]));
        }
        let phi = solve_normal_equations(&eq)?.coefficients;
        let mut rest = gap[d];
        for (j, v) in phi.iter().enumerate() {
            values[d][active[j]] = *v;
            rest -= v;
        }
        values[d][active[m - 1]] = rest;
    }
    result.values = values;
    result.coalitions = masks.len();
    result.exact = exact;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowDirection {
    Out,
    In,
}

impl FlowDirection {
    pub const BOTH: [FlowDirection; 2] = [FlowDirection::Out, FlowDirection::In];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowDirection::Out => "out",
            FlowDirection::In => "in",
        }
    }
}

/// One player's contribution to one direction of one station-month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub station_id: StationId,
    pub month: YearMonth,
    pub feature_name: String,
    pub shap_value: f64,
    pub base_value: f64,
    pub flow_direction: FlowDirection,
    /// Raw feature value, age in months, or calendar month 1-12.
    pub feature_value: f64,
}

/// Attribution records of an explanation. `raw_x` holds the station's raw
/// features and `age_months` its raw age.
pub fn attributions(
    explanation: &ShapExplanation,
    station_id: &StationId,
    month: YearMonth,
    feature_names: &[String],
    raw_x: &[f64],
    age_months: u32,
) -> Vec<Attribution> {
    let mut out = Vec::with_capacity(2 * explanation.players.len());
    for (d, dir) in FlowDirection::BOTH.into_iter().enumerate() {
        for (p, player) in explanation.players.iter().enumerate() {
            let feature_value = match player {
                Player::Feature(j) => raw_x.get(*j).copied().unwrap_or(f64::NAN),
                Player::Age => f64::from(age_months),
                Player::Month => f64::from(month.month()),
            };
            out.push(Attribution {
                station_id: station_id.clone(),
                month,
                feature_name: player.name(feature_names),
                shap_value: explanation.values[d][p],
                base_value: explanation.base_value[d],
                flow_direction: dir,
                feature_value,
            });
        }
    }
    out
}

/// KernelSHAP attributions of one station in a month view, both directions.
pub fn explain_station(
    model: &Model,
    view: &MonthView,
    scalers: &Scalers,
    background: &[PlayerValues],
    station: &StationId,
    feature_names: &[String],
    config: &ShapConfig,
) -> Result<(ShapExplanation, Vec<Attribution>)> {
    let pos = view.position(station).ok_or_else(|| Error::NotFound(format!("station {station} is not active in {}", view.month)))?;
    let input = view.input_for(station, scalers, 0)?;
    let prepared = model.prepare(&view.normalized, &input)?;
    let instance = PlayerValues::of(&view.normalized, &input);
    let explanation = kernel_shap(model, &prepared, &instance, background, scalers, config)?;
    let age = view.stations[pos].age_in(view.month);
    let attrs = attributions(&explanation, station, view.month, feature_names, view.raw[pos].as_slice(), age);
    Ok((explanation, attrs))
}

/// One point of a beeswarm plot: attribution, raw value and the value
/// min-max scaled within its feature (0.5 when the feature is constant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub shap_value: f64,
    pub feature_value: f64,
    pub color: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_name: String,
    pub mean_abs_shap: f64,
    pub count: usize,
    pub points: Vec<SummaryPoint>,
}

/// Features ordered by mean absolute attribution (ties by name), optionally
/// restricted to one direction.
pub fn rank_features(attributions: &[Attribution], direction: Option<FlowDirection>) -> Vec<FeatureImportance> {
    let mut groups: BTreeMap<&str, Vec<&Attribution>> = BTreeMap::new();
    for a in attributions.iter().filter(|a| direction.is_none_or(|d| a.flow_direction == d)) {
        groups.entry(a.feature_name.as_str()).or_default().push(a);
    }
    let mut out: Vec<FeatureImportance> = groups
        .into_iter()
        .map(|(name, list)| {
            let lo = list.iter().map(|a| a.feature_value).fold(f64::INFINITY, f64::min);
            let hi = list.iter().map(|a| a.feature_value).fold(f64::NEG_INFINITY, f64::max);
            let points = list
                .iter()
                .map(|a| SummaryPoint {
                    shap_value: a.shap_value,
                    feature_value: a.feature_value,
                    color: if hi > lo { (a.feature_value - lo) / (hi - lo) } else { 0.5 },
                })
                .collect();
            FeatureImportance {
                feature_name: name.into(),
                mean_abs_shap: list.iter().map(|a| crate::math::abs(a.shap_value)).sum::<f64>() / list.len() as f64,
                count: list.len(),
                points,
            }
        })
        .collect();
    out.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap).then_with(|| a.feature_name.cmp(&b.feature_name)));
    out
}

/// A neighbor edge of a station's localized graph with its weight in the
/// model's aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionEdge {
    pub station_id: StationId,
    pub neighbor_id: StationId,
    pub kind: GraphKind,
    /// Unnormalized attention score; absent for fixed kernel weights.
    pub score: Option<f64>,
    /// Softmax attention weight, or the normalized kernel weight for
    /// models without attention.
    pub weight: f64,
    pub distance: f64,
}

/// Edges of `station` in `view` for every graph the model reads. Models
/// without graphs yield no edges.
pub fn export_attention(model: &Model, view: &MonthView, scalers: &Scalers, station: &StationId) -> Result<Vec<AttentionEdge>> {
    let input = view.input_for(station, scalers, 0)?;
    let variant = model.variant();
    let mut out = Vec::new();
    let mut attention: BTreeMap<GraphKind, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    if let Model::Neural(m) = model {
        for e in m.attention(&view.normalized, &input)? {
            attention.insert(e.kind, (e.scores, e.weights));
        }
    }
    for &kind in variant.graph_kinds() {
        let graph = view
            .graphs
            .get(kind, station)
            .ok_or_else(|| Error::NotFound(format!("{} graph of station {station} in {}", kind.as_str(), view.month)))?;
        let (scores, weights) = match attention.remove(&kind) {
            Some((s, w)) => (s.into_iter().map(Some).collect(), w),
            None => (alloc::vec![None; graph.len()], normalize_kernel_weights(&graph.kernel_weights)?),
        };
        for (i, n) in graph.neighbors.iter().enumerate() {
            out.push(AttentionEdge {
                station_id: station.clone(),
                neighbor_id: n.clone(),
                kind,
                score: scores[i],
                weight: weights[i],
                distance: graph.distances[i],
            });
        }
    }
    Ok(out)
}
