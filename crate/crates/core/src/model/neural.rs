use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use super::ops::{self, normalize_kernel_weights};
use super::{FeatureTable, ModelConfig, ModelInput, Player, MONTHS};
use crate::error::{Error, Result};
use crate::graph::GraphKind;
use crate::nn::{affine, init_bounded, matmul_into, leaky_relu, relu, sigmoid, softmax_in_place, ParamId, ParamStore, Tape, Tensor, Var};
use crate::math;

const EMBEDDING_BOUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
struct Attention {
    w_s1: ParamId,
    b_s1: ParamId,
    w_s2: ParamId,
    b_s2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct GraphParams {
    kind: GraphKind,
    w_h: ParamId,
    b_h: ParamId,
    attention: Option<Attention>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    graphs: Vec<GraphParams>,
    w_m: ParamId,
    w_o1: ParamId,
    b_o1: ParamId,
    w_o2: ParamId,
    b_o2: ParamId,
    w_o3: ParamId,
    b_o3: ParamId,
}

/// Name, shape and initialization bound of one parameter.
struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    bound: f64,
}

fn graph_suffix(config: &ModelConfig, kind: GraphKind) -> &'static str {
    if config.share_graph_encoders && config.variant.graph_kinds().len() > 1 {
        ""
    } else {
        match kind {
            GraphKind::Proximity => ".p",
            GraphKind::Similarity => ".b",
        }
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    math::sqrt(1.0 / fan_in.max(1) as f64)
}

/// Every parameter of `config`'s variant, in creation order.
fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let spec = |name: String, rows, cols, bound| ParamSpec { name, rows, cols, bound };
    let mut out = Vec::new();
    let attention = config.variant.uses_attention();
    for &kind in config.variant.graph_kinds() {
        let sfx = graph_suffix(config, kind);
        if out.iter().any(|p: &ParamSpec| p.name == format!("W_h{sfx}")) {
            continue;
        }
        let bh = fan_in_bound(config.input_dim);
        out.push(spec(format!("W_h{sfx}"), config.input_dim, config.d_h, bh));
        out.push(spec(format!("b_h{sfx}"), 1, config.d_h, bh));
        if attention {
            let b1 = fan_in_bound(2 * config.d_h);
            out.push(spec(format!("W_s1{sfx}"), 2 * config.d_h, config.d_z, b1));
            out.push(spec(format!("b_s1{sfx}"), 1, config.d_z, b1));
            let b2 = fan_in_bound(config.d_z);
            out.push(spec(format!("W_s2{sfx}"), config.d_z, 1, b2));
            out.push(spec(format!("b_s2{sfx}"), 1, 1, b2));
        }
    }
    out.push(spec("W_m".into(), MONTHS, config.d_m, EMBEDDING_BOUND));
    let width = config.output_input_width();
    for (w, b, rows, cols) in [("W_o1", "b_o1", width, config.d_o1), ("W_o2", "b_o2", config.d_o1, config.d_o2), ("W_o3", "b_o3", config.d_o2, 2)] {
        let bound = fan_in_bound(rows);
        out.push(spec(w.into(), rows, cols, bound));
        out.push(spec(b.into(), 1, cols, bound));
    }
    out
}

impl Layout {
    fn resolve(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let specs = param_specs(config);
        if store.len() != specs.len() {
            return Err(Error::Config(format!(
                "{} variant expects {} parameters, found {}",
                config.variant,
                specs.len(),
                store.len()
            )));
        }
        for s in &specs {
            let p = store.by_name(&s.name).ok_or_else(|| Error::Config(format!("missing parameter {}", s.name)))?;
            if p.value.shape() != [s.rows, s.cols] {
                return Err(Error::Shape { node: s.name.clone(), detail: format!("expected {}x{}, found {:?}", s.rows, s.cols, p.value.shape()) });
            }
        }
        let id = |name: String| store.id(&name).ok_or_else(|| Error::Config(format!("missing parameter {name}")));
        let mut graphs = Vec::new();
        for &kind in config.variant.graph_kinds() {
            let sfx = graph_suffix(config, kind);
            let attention = if config.variant.uses_attention() {
                Some(Attention {
                    w_s1: id(format!("W_s1{sfx}"))?,
                    b_s1: id(format!("b_s1{sfx}"))?,
                    w_s2: id(format!("W_s2{sfx}"))?,
                    b_s2: id(format!("b_s2{sfx}"))?,
                })
            } else {
                None
            };
            graphs.push(GraphParams { kind, w_h: id(format!("W_h{sfx}"))?, b_h: id(format!("b_h{sfx}"))?, attention });
        }
        Ok(Self {
            graphs,
            w_m: id("W_m".into())?,
            w_o1: id("W_o1".into())?,
            b_o1: id("b_o1".into())?,
            w_o2: id("W_o2".into())?,
            b_o2: id("b_o2".into())?,
            w_o3: id("W_o3".into())?,
            b_o3: id("b_o3".into())?,
        })
    }
}

/// Neighbor encodings of one graph for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    kind: GraphKind,
    h: Vec<Vec<f64>>,
    /// `h_j · W_s1[d_h..] + b_s1`, the neighbor half of the scorer input.
    projected: Vec<Vec<f64>>,
    /// Aggregate for fixed-weight variants, which does not depend on the center.
    fixed: Option<Vec<f64>>,
    /// Center half of the scorer weights, `W_s1[..d_h]`.
    upper: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedNeural {
    graphs: Vec<PreparedGraph>,
}

/// Scores and weights of one center's neighbors under one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEdgeValues {
    pub kind: GraphKind,
    /// Positions in the input's neighbor list.
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Graph-attention network (and its ablations) with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Rows and segments of one graph across a batch.
struct BatchGraph {
    neighbor_rows: Tensor,
    owners: Vec<usize>,
    segments: Vec<Range<usize>>,
    normalized_kernel: Vec<f64>,
}

impl NeuralModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if !config.variant.is_neural() {
            return Err(Error::Config(format!("{} is not a neural variant", config.variant)));
        }
        let mut params = ParamStore::new();
        for s in param_specs(&config) {
            params.add(s.name, init_bounded(rng, s.rows, s.cols, s.bound))?;
        }
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self { config, params, layout })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        self.layout = Layout::resolve(&self.config, &params)?;
        self.params = params;
        Ok(())
    }

    fn batch_graph(&self, table: &FeatureTable, batch: &[&ModelInput], kind: GraphKind) -> Result<BatchGraph> {
        let width = table.width();
        let total: usize = batch.iter().map(|i| i.neighbors(kind).len()).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut owners = Vec::with_capacity(total);
        let mut segments = Vec::with_capacity(batch.len());
        let mut normalized_kernel = Vec::with_capacity(total);
        for (b, input) in batch.iter().enumerate() {
            let nb = input.neighbors(kind);
            if nb.kernel_weights.len() != nb.rows.len() {
                return Err(Error::Shape { node: "neighbors".into(), detail: "kernel weight count differs from neighbor count".into() });
            }
            let start = owners.len();
            for &r in &nb.rows {
                if r >= table.len() {
                    return Err(Error::Shape { node: "neighbors".into(), detail: format!("row {r} outside table of {}", table.len()) });
                }
                data.extend_from_slice(table.row(r));
                owners.push(b);
            }
            segments.push(start..owners.len());
            if !self.config.variant.uses_attention() {
                normalized_kernel.extend(normalize_kernel_weights(&nb.kernel_weights)?);
            }
        }
        Ok(BatchGraph { neighbor_rows: Tensor::from_vec(total, width, data)?, owners, segments, normalized_kernel })
    }

    /// Builds the batched forward pass on `tape` using parameters from
    /// `store`; returns the `B x 2` normalized prediction node.
    pub fn forward_tape(&self, store: &ParamStore, tape: &mut Tape, table: &FeatureTable, batch: &[&ModelInput]) -> Result<Var> {
        let width = table.width();
        if width != self.config.input_dim {
            return Err(Error::Shape { node: "input".into(), detail: format!("table width {width}, model expects {}", self.config.input_dim) });
        }
        let mut centers = Vec::with_capacity(batch.len() * width);
        for input in batch {
            if input.center >= table.len() || input.month_index >= MONTHS {
                return Err(Error::InvalidInput(format!("sample references row {} / month {}", input.center, input.month_index)));
            }
            centers.extend_from_slice(table.row(input.center));
        }
        let xc = tape.constant(Tensor::from_vec(batch.len(), width, centers)?);
        let mut parts = vec![xc];

        for g in &self.layout.graphs {
            let bg = self.batch_graph(table, batch, g.kind)?;
            let w_h = tape.param(store, g.w_h);
            let b_h = tape.param(store, g.b_h);
            let xn = tape.constant(bg.neighbor_rows);
            let hn = tape.matmul(xn, w_h)?;
            let hn = tape.add_bias(hn, b_h)?;
            let s = match &g.attention {
                Some(a) => {
                    let hc = tape.matmul(xc, w_h)?;
                    let hc = tape.add_bias(hc, b_h)?;
                    let hc_rep = tape.gather_rows(hc, bg.owners)?;
                    let pair = tape.concat_cols(&[hc_rep, hn])?;
                    let (w_s1, b_s1) = (tape.param(store, a.w_s1), tape.param(store, a.b_s1));
                    let z = tape.matmul(pair, w_s1)?;
                    let z = tape.add_bias(z, b_s1)?;
                    let z = tape.relu(z);
                    let (w_s2, b_s2) = (tape.param(store, a.w_s2), tape.param(store, a.b_s2));
                    let sc = tape.matmul(z, w_s2)?;
                    let sc = tape.add_bias(sc, b_s2)?;
                    let sc = tape.leaky_relu(sc, self.config.leaky_slope);
                    let eps = tape.segment_softmax(sc, bg.segments.clone())?;
                    tape.segment_weighted_sum(eps, hn, bg.segments)?
                }
                None => {
                    let n = bg.normalized_kernel.len();
                    let w = tape.constant(Tensor::from_vec(n, 1, bg.normalized_kernel)?);
                    tape.segment_weighted_sum(w, hn, bg.segments)?
                }
            };
            parts.push(s);
        }

        let w_m = tape.param(store, self.layout.w_m);
        let month = tape.gather_rows(w_m, batch.iter().map(|i| i.month_index).collect())?;
        let age = tape.constant(Tensor::from_vec(batch.len(), 1, batch.iter().map(|i| i.age).collect())?);
        parts.push(month);
        parts.push(age);
        let input = tape.concat_cols(&parts)?;

        let l = &self.layout;
        let z1 = self.dense(store, tape, input, l.w_o1, l.b_o1)?;
        let z1 = tape.relu(z1);
        let z2 = self.dense(store, tape, z1, l.w_o2, l.b_o2)?;
        let z2 = tape.sigmoid(z2);
        self.dense(store, tape, z2, l.w_o3, l.b_o3)
    }

    fn dense(&self, store: &ParamStore, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (tape.param(store, w), tape.param(store, b));
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn targets_tensor(targets: &[[f64; 2]]) -> Result<Tensor> {
        Tensor::from_vec(targets.len(), 2, targets.iter().flat_map(|t| *t).collect())
    }

    /// Summed squared error of the batch under `store`'s parameters (forward only).
    pub fn batch_loss_with(&self, store: &ParamStore, table: &FeatureTable, batch: &[&ModelInput], targets: &[[f64; 2]]) -> Result<f64> {
        let mut tape = Tape::new();
        let pred = self.forward_tape(store, &mut tape, table, batch)?;
        let loss = tape.sum_squared_error(pred, Self::targets_tensor(targets)?)?;
        Ok(tape.value(loss).values()[0])
    }

    /// Clears gradients, then runs forward and backward for the batch.
    /// Returns the batch loss.
    pub fn compute_gradients(&mut self, table: &FeatureTable, batch: &[&ModelInput], targets: &[[f64; 2]]) -> Result<f64> {
        self.params.zero_grad();
        let mut tape = Tape::new();
        let pred = self.forward_tape(&self.params, &mut tape, table, batch)?;
        let loss = tape.sum_squared_error(pred, Self::targets_tensor(targets)?)?;
        tape.backward(loss, &mut self.params)?;
        Ok(tape.value(loss).values()[0])
    }

    fn value(&self, id: ParamId) -> &Tensor {
        self.params.value(id)
    }

    /// Precomputes neighbor encodings for `input`, which stay valid while the
    /// neighbor rows and parameters are unchanged.
    pub fn prepare(&self, table: &FeatureTable, input: &ModelInput) -> Result<PreparedNeural> {
        let d_h = self.config.d_h;
        let mut graphs = Vec::with_capacity(self.layout.graphs.len());
        for g in &self.layout.graphs {
            let nb = input.neighbors(g.kind);
            let rows: Vec<&[f64]> = nb.rows.iter().map(|&r| table.row(r)).collect();
            let h = ops::encode_neighbors(&rows, self.value(g.w_h), self.value(g.b_h))?;
            let (projected, fixed, upper) = match &g.attention {
                Some(a) => {
                    let w_s1 = self.value(a.w_s1);
                    let split = d_h * w_s1.cols();
                    let upper = Tensor::from_vec(d_h, w_s1.cols(), w_s1.values()[..split].to_vec())?;
                    let lower = Tensor::from_vec(d_h, w_s1.cols(), w_s1.values()[split..].to_vec())?;
                    let b_s1 = self.value(a.b_s1);
                    (h.iter().map(|hj| affine(hj, &lower, b_s1)).collect(), None, Some(upper))
                }
                None => {
                    let agg = if h.is_empty() { vec![0.0; d_h] } else { ops::mgcn_aggregate(&nb.kernel_weights, &h)? };
                    (Vec::new(), Some(agg), None)
                }
            };
            graphs.push(PreparedGraph { kind: g.kind, h, projected, fixed, upper });
        }
        Ok(PreparedNeural { graphs })
    }

    /// Attention scores and weights for a center whose own features are `x`.
    fn attend(&self, g: &GraphParams, pg: &PreparedGraph, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (Some(a), Some(upper)) = (&g.attention, &pg.upper) else { return (Vec::new(), Vec::new()) };
        if pg.h.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let h_i = affine(x, self.value(g.w_h), self.value(g.b_h));
        let mut center_part = vec![0.0; upper.cols()];
        matmul_into(&h_i, upper.values(), &mut center_part, 1, upper.rows(), upper.cols());
        let (w_s2, b_s2) = (self.value(a.w_s2), self.value(a.b_s2));
        let scores: Vec<f64> = pg
            .projected
            .iter()
            .map(|u| {
                let z: Vec<f64> = center_part.iter().zip(u).map(|(c, u)| relu(c + u)).collect();
                leaky_relu(affine(&z, w_s2, b_s2)[0], self.config.leaky_slope)
            })
            .collect();
        let mut weights = scores.clone();
        softmax_in_place(&mut weights);
        (scores, weights)
    }

    pub fn predict_prepared(&self, prepared: &PreparedNeural, x: &[f64], month_index: usize, age: f64) -> Result<[f64; 2]> {
        if x.len() != self.config.input_dim || month_index >= MONTHS {
            return Err(Error::InvalidInput(format!("{} features / month {month_index}", x.len())));
        }
        let mut input = Vec::with_capacity(self.config.output_input_width());
        input.extend_from_slice(x);
        for (g, pg) in self.layout.graphs.iter().zip(&prepared.graphs) {
            match &pg.fixed {
                Some(fixed) => input.extend_from_slice(fixed),
                None if pg.h.is_empty() => input.extend(core::iter::repeat_n(0.0, self.config.d_h)),
                None => {
                    let (_, weights) = self.attend(g, pg, x);
                    input.extend(ops::aggregate_interaction(&weights, &pg.h)?);
                }
            }
        }
        input.extend_from_slice(self.value(self.layout.w_m).row(month_index));
        input.push(age);
        let l = &self.layout;
        let z1: Vec<f64> = affine(&input, self.value(l.w_o1), self.value(l.b_o1)).into_iter().map(relu).collect();
        let z2: Vec<f64> = affine(&z1, self.value(l.w_o2), self.value(l.b_o2)).into_iter().map(sigmoid).collect();
        let y = affine(&z2, self.value(l.w_o3), self.value(l.b_o3));
        Ok([y[0], y[1]])
    }

    /// Attention scores and weights per attention graph of `input`'s center.
    pub fn attention(&self, table: &FeatureTable, input: &ModelInput) -> Result<Vec<AttentionEdgeValues>> {
        let prepared = self.prepare(table, input)?;
        let x = table.row(input.center);
        Ok(self
            .layout
            .graphs
            .iter()
            .zip(&prepared.graphs)
            .filter(|(g, _)| g.attention.is_some())
            .map(|(g, pg)| {
                let (scores, weights) = self.attend(g, pg, x);
                AttentionEdgeValues { kind: pg.kind, scores, weights }
            })
            .collect())
    }

    pub fn ignores(&self, player: Player) -> bool {
        let w_o1 = self.value(self.layout.w_o1);
        let zero_row = |t: &Tensor, r: usize| t.row(r).iter().all(|v| *v == 0.0);
        let width = self.config.output_input_width();
        match player {
            Player::Feature(j) => {
                j < self.config.input_dim
                    && zero_row(w_o1, j)
                    && self.layout.graphs.iter().filter(|g| g.attention.is_some()).all(|g| zero_row(self.value(g.w_h), j))
            }
            Player::Age => zero_row(w_o1, width - 1),
            Player::Month => {
                let w_m = self.value(self.layout.w_m);
                let same_rows = (1..MONTHS).all(|m| w_m.row(m) == w_m.row(0));
                let start = width - 1 - self.config.d_m;
                same_rows || (start..width - 1).all(|r| zero_row(w_o1, r))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NeighborSet, Variant};
    use crate::nn::{check_gradients, resolution_floor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig { variant, k: 2, input_dim: 6, d_h: 3, d_z: 4, d_m: 2, d_o1: 5, d_o2: 4, ..ModelConfig::default() }
    }

    /// Five stations, each sample sees two neighbors per graph.
    fn instance(rng: &mut ChaCha8Rng, width: usize) -> (FeatureTable, Vec<ModelInput>, Vec<[f64; 2]>) {
        let mut table = FeatureTable::new(width);
        for _ in 0..5 {
            let row: Vec<f64> = (0..width).map(|_| rng.random_range(0.0..1.0)).collect();
            table.push(&row).unwrap();
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for c in 0..5 {
            let nb = |off: usize, rng: &mut ChaCha8Rng| NeighborSet {
                rows: vec![(c + off) % 5, (c + off + 1) % 5],
                kernel_weights: vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)],
            };
            inputs.push(ModelInput {
                center: c,
                proximity: nb(1, rng),
                similarity: nb(2, rng),
                month_index: rng.random_range(0..12),
                age: rng.random_range(0.0..1.0),
            });
            targets.push([rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
        }
        (table, inputs, targets)
    }

    #[test]
    fn every_variant_passes_gradient_check() {
        for variant in [Variant::Mgat, Variant::Mgcn, Variant::Pgat, Variant::Bgat, Variant::Fnn] {
            for share in [false, true] {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let config = ModelConfig { share_graph_encoders: share, ..small_config(variant) };
                let (mut model, table, inputs, targets) = loop {
                    let model = NeuralModel::new(config.clone(), &mut rng).unwrap();
                    let (table, inputs, targets) = instance(&mut rng, 6);
                    let batch: Vec<&ModelInput> = inputs.iter().collect();
                    let mut tape = Tape::new();
                    model.forward_tape(model.params(), &mut tape, &table, &batch).unwrap();
                    if tape.min_kink_distance() > 1e-4 {
                        break (model, table, inputs, targets);
                    }
                };
                let batch: Vec<&ModelInput> = inputs.iter().collect();
                model.compute_gradients(&table, &batch, &targets).unwrap();
                let loss = model.batch_loss_with(model.params(), &table, &batch, &targets).unwrap();
                let mut store = model.params().clone();
                let floor = resolution_floor(loss, 1e-5, 1e-4);
                let report = check_gradients(&mut store, 1e-5, floor, |s| model.batch_loss_with(s, &table, &batch, &targets)).unwrap();
                assert_eq!(report.checked, model.params().scalar_count());
                assert!(report.max_relative_error < 1e-4, "{variant} share={share}: {report:?}");
            }
        }
    }

    #[test]
    fn fast_path_matches_tape() {
        for variant in [Variant::Mgat, Variant::Mgcn, Variant::Pgat, Variant::Bgat, Variant::Fnn] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let model = NeuralModel::new(small_config(variant), &mut rng).unwrap();
            let (table, inputs, _) = instance(&mut rng, 6);
            let batch: Vec<&ModelInput> = inputs.iter().collect();
            let mut tape = Tape::new();
            let out = model.forward_tape(model.params(), &mut tape, &table, &batch).unwrap();
            for (b, input) in inputs.iter().enumerate() {
                let p = model.prepare(&table, input).unwrap();
                let y = model.predict_prepared(&p, table.row(input.center), input.month_index, input.age).unwrap();
                for d in 0..2 {
                    assert!((y[d] - tape.value(out).get(b, d)).abs() < 1e-12, "{variant}");
                }
            }
        }
    }

    #[test]
    fn parameter_sets_follow_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let names = |v: Variant, rng: &mut ChaCha8Rng| -> Vec<String> {
            NeuralModel::new(ModelConfig::for_variant(v), rng).unwrap().params().iter().map(|p| p.name.clone()).collect()
        };
        let mgat = names(Variant::Mgat, &mut rng);
        assert!(mgat.contains(&"W_s1.p".into()) && mgat.contains(&"W_s2.b".into()));
        let pgat = names(Variant::Pgat, &mut rng);
        assert!(pgat.iter().all(|n| !n.ends_with(".b")) && pgat.contains(&"W_h.p".into()));
        let bgat = names(Variant::Bgat, &mut rng);
        assert!(bgat.iter().all(|n| !n.ends_with(".p")) && bgat.contains(&"W_h.b".into()));
        let fnn = names(Variant::Fnn, &mut rng);
        assert!(fnn.iter().all(|n| !n.contains("_h") && !n.contains("_s")));
        let mgcn = names(Variant::Mgcn, &mut rng);
        assert!(mgcn.iter().all(|n| !n.contains("_s")) && mgcn.contains(&"W_h.b".into()));

        let m = NeuralModel::new(ModelConfig::for_variant(Variant::Mgat), &mut rng).unwrap();
        let w_o1 = m.params().by_name("W_o1").unwrap();
        assert_eq!(w_o1.value.shape(), [43 + 2 * 8 + 12 + 1, 32]);
        assert_eq!(m.params().by_name("W_o3").unwrap().value.shape(), [16, 2]);
        let fnn = NeuralModel::new(ModelConfig::for_variant(Variant::Fnn), &mut rng).unwrap();
        assert_eq!(fnn.params().by_name("W_o1").unwrap().value.shape(), [43 + 12 + 1, 32]);
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = NeuralModel::new(small_config(Variant::Mgat), &mut rng).unwrap();
        model.params_mut().iter_mut().for_each(|p| p.value.fill(0.0));
        let (table, inputs, _) = instance(&mut rng, 6);
        assert_eq!(super::super::Model::Neural(model).predict(&table, &inputs[0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn prediction_matches_layer_by_layer_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = NeuralModel::new(small_config(Variant::Pgat), &mut rng).unwrap();
        let (table, inputs, _) = instance(&mut rng, 6);
        let input = &inputs[2];
        let p = |n: &str| model.params().by_name(n).unwrap().value.clone();
        let x = table.row(input.center);
        let encode = |v: &[f64]| affine(v, &p("W_h.p"), &p("b_h.p"));
        let hi = encode(x);
        let hs: Vec<Vec<f64>> = input.proximity.rows.iter().map(|&r| encode(table.row(r))).collect();
        let params = ops::AttentionParams { w_s1: &p("W_s1.p"), b_s1: &p("b_s1.p"), w_s2: &p("W_s2.p"), b_s2: &p("b_s2.p"), leaky_slope: 0.2 };
        let (_, eps) = ops::attention_weights(&hi, &hs, params);
        let s = ops::aggregate_interaction(&eps, &hs).unwrap();
        let mut v = x.to_vec();
        v.extend(s);
        v.extend_from_slice(p("W_m").row(input.month_index));
        v.push(input.age);
        let z1: Vec<f64> = affine(&v, &p("W_o1"), &p("b_o1")).into_iter().map(|a| a.max(0.0)).collect();
        let z2: Vec<f64> = affine(&z1, &p("W_o2"), &p("b_o2")).into_iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect();
        let y = affine(&z2, &p("W_o3"), &p("b_o3"));
        let got = super::super::Model::Neural(model.clone()).predict(&table, input).unwrap();
        assert!((got[0] - y[0]).abs() < 1e-10 && (got[1] - y[1]).abs() < 1e-10);
    }

    #[test]
    fn zero_neighbors_use_zero_interaction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = NeuralModel::new(small_config(Variant::Mgat), &mut rng).unwrap();
        let (table, mut inputs, targets) = instance(&mut rng, 6);
        inputs[0].proximity = NeighborSet::default();
        inputs[0].similarity = NeighborSet::default();
        let batch: Vec<&ModelInput> = inputs.iter().collect();
        let mut tape = Tape::new();
        let out = model.forward_tape(model.params(), &mut tape, &table, &batch).unwrap();
        let p = model.prepare(&table, &inputs[0]).unwrap();
        let y = model.predict_prepared(&p, table.row(0), inputs[0].month_index, inputs[0].age).unwrap();
        assert!((y[0] - tape.value(out).get(0, 0)).abs() < 1e-12);
        assert!(model.batch_loss_with(model.params(), &table, &batch, &targets).unwrap().is_finite());
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = NeuralModel::new(small_config(Variant::Mgat), &mut rng).unwrap();
        let mut other = small_config(Variant::Mgat);
        other.d_h = 4;
        assert!(NeuralModel::from_params(other, model.params().clone()).is_err());
        assert!(NeuralModel::from_params(small_config(Variant::Pgat), model.params().clone()).is_err());
        assert!(NeuralModel::from_params(small_config(Variant::Mgat), model.params().clone()).is_ok());
    }
}
