//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes in reverse, propagating adjoints and finally accumulating
//! them into the parameter store for nodes created by [`Tape::param`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    GatherRows(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    SegmentSoftmax(usize, Vec<Range<usize>>),
    SegmentWeightedSum { weights: usize, values: usize, segments: Vec<Range<usize>> },
    SumSquaredError(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(node: &str, detail: alloc::string::String) -> Error {
    Error::Shape { node: node.into(), detail }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// `max(x, 0)` that keeps NaN, unlike `f64::max`.
#[inline]
pub fn relu(x: f64) -> f64 {
    if x < 0.0 { 0.0 } else { x }
}

/// Keeps NaN like [`relu`].
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x < 0.0 { slope * x } else { x }
}

/// Sum whose result does not depend on the order of `values`: terms are
/// added in ascending total order.
pub fn order_independent_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted.iter().sum()
}

/// Softmax of `scores` in place, shifted by the maximum for stability.
/// The normalizer is summed in a canonical order, so permuting the input
/// permutes the output exactly.
pub fn softmax_in_place(scores: &mut [f64]) {
    if scores.is_empty() {
        return;
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for s in scores.iter_mut() {
        *s = math::exp(*s - max);
    }
    let sum = order_independent_sum(scores);
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Ordering of `(weight, row)` pairs used to make weighted sums independent
/// of neighbor order.
pub(crate) fn weighted_term_cmp(wa: f64, ra: &[f64], wb: f64, rb: &[f64]) -> core::cmp::Ordering {
    wa.total_cmp(&wb).then_with(|| {
        ra.iter().zip(rb).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    })
}

/// `sum_e weights[e] * rows[e]` accumulated in canonical term order into `out`.
pub fn canonical_weighted_sum(weights: &[f64], rows: &[&[f64]], out: &mut [f64]) {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_unstable_by(|&a, &b| weighted_term_cmp(weights[a], rows[a], weights[b], rows[b]));
    for e in order {
        let w = weights[e];
        for (o, v) in out.iter_mut().zip(rows[e]) {
            *o += w * v;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Smallest distance from zero among inputs to ReLU-type nodes. Finite
    /// differences are only meaningful when this exceeds the step size.
    pub fn min_kink_distance(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x].value.values().iter().map(|v| math::abs(*v)))
            .fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    /// Adds a `1 x p` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.values()) {
                *o += b;
            }
        }
        let rg = self.rg(x.0) || self.rg(bias.0);
        Ok(self.push(out, Op::AddBias(x.0, bias.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::Add(a.0, b.0), rg))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let mut out = self.value(x).clone();
        out.values_mut().iter_mut().for_each(|v| *v = f(*v));
        let rg = self.rg(x.0);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x.0), relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, Op::LeakyRelu(x.0, slope), |v| leaky_relu(v, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x.0), sigmoid)
    }

    /// Row `i` of the output is row `indices[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = Tensor::zeros(indices.len(), cols);
        for (i, &src) in indices.iter().enumerate() {
            if src >= xv.rows() {
                return Err(shape_err("gather_rows", format!("row {src} of {}", xv.rows())));
            }
            out.row_mut(i).copy_from_slice(xv.row(src));
        }
        let rg = self.rg(x.0);
        Ok(self.push(out, Op::GatherRows(x.0, indices), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.value(*p).rows()).unwrap_or(0);
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// Softmax of a column vector within each contiguous segment of rows.
    pub fn segment_softmax(&mut self, scores: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let sv = self.value(scores);
        if sv.cols() != 1 {
            return Err(shape_err("segment_softmax", format!("expected column, got {:?}", sv.shape())));
        }
        let mut out = sv.clone();
        for seg in &segments {
            if seg.end > out.rows() {
                return Err(shape_err("segment_softmax", format!("segment {seg:?} past {}", out.rows())));
            }
            softmax_in_place(&mut out.values_mut()[seg.clone()]);
        }
        let rg = self.rg(scores.0);
        Ok(self.push(out, Op::SegmentSoftmax(scores.0, segments), rg))
    }

    /// Output row `s` is `sum_{e in segments[s]} weights[e] * values[e]`.
    /// Empty segments produce zero rows.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let (wv, vv) = (self.value(weights), self.value(values));
        if wv.cols() != 1 || wv.rows() != vv.rows() {
            return Err(shape_err("segment_weighted_sum", format!("{:?} weights for {:?}", wv.shape(), vv.shape())));
        }
        let d = vv.cols();
        let mut out = Tensor::zeros(segments.len(), d);
        for (s, seg) in segments.iter().enumerate() {
            if seg.end > vv.rows() {
                return Err(shape_err("segment_weighted_sum", format!("segment {seg:?} past {}", vv.rows())));
            }
            let rows: Vec<&[f64]> = seg.clone().map(|e| vv.row(e)).collect();
            canonical_weighted_sum(&wv.values()[seg.clone()], &rows, out.row_mut(s));
        }
        let rg = self.rg(weights.0) || self.rg(values.0);
        Ok(self.push(out, Op::SegmentWeightedSum { weights: weights.0, values: values.0, segments }, rg))
    }

    /// Scalar `sum (pred - target)^2`.
    pub fn sum_squared_error(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err("sum_squared_error", format!("{:?} vs {:?}", pv.shape(), target.shape())));
        }
        let loss: f64 = pv.values().iter().zip(target.values()).map(|(p, t)| (p - t) * (p - t)).sum();
        let rg = self.rg(pred.0);
        Ok(self.push(Tensor::scalar(loss), Op::SumSquaredError(pred.0, target), rg))
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let [m, n] = av.shape();
                    let p = bv.cols();
                    if self.rg(*a) {
                        // dA = G · Bᵀ
                        let mut da = Tensor::zeros(m, n);
                        let bt = bv.transpose();
                        matmul_into(g.values(), bt.values(), da.values_mut(), m, p, n);
                        add_grad(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        // dB = Aᵀ · G
                        let mut db = Tensor::zeros(n, p);
                        let at = av.transpose();
                        matmul_into(at.values(), g.values(), db.values_mut(), n, m, p);
                        add_grad(&mut grads, *b, db);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, v) in db.values_mut().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        add_grad(&mut grads, *b, db);
                    }
                    if self.rg(*x) {
                        add_grad(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_grad(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        add_grad(&mut grads, *b, g);
                    }
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, y) in dx.values_mut().iter_mut().zip(node.value.values()) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut dx = g;
                    for (d, xin) in dx.values_mut().iter_mut().zip(self.nodes[*x].value.values()) {
                        if *xin <= 0.0 {
                            *d *= slope;
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, y) in dx.values_mut().iter_mut().zip(node.value.values()) {
                        *d *= y * (1.0 - y);
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::GatherRows(x, indices) => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (i, &src) in indices.iter().enumerate() {
                        for (d, v) in dx.row_mut(src).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &self.nodes[p].value;
                        let c = pv.cols();
                        if self.rg(p) {
                            let mut dp = Tensor::zeros(pv.rows(), c);
                            for r in 0..pv.rows() {
                                dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + c]);
                            }
                            add_grad(&mut grads, p, dp);
                        }
                        offset += c;
                    }
                }
                Op::SegmentSoftmax(x, segments) => {
                    let y = node.value.values();
                    let mut dx = Tensor::zeros(node.value.rows(), 1);
                    for seg in segments {
                        let dot: f64 = seg.clone().map(|e| y[e] * g.values()[e]).sum();
                        for e in seg.clone() {
                            dx.values_mut()[e] = y[e] * (g.values()[e] - dot);
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::SegmentWeightedSum { weights, values, segments } => {
                    let (wv, vv) = (&self.nodes[*weights].value, &self.nodes[*values].value);
                    let (need_w, need_v) = (self.rg(*weights), self.rg(*values));
                    let mut dw = Tensor::zeros(wv.rows(), 1);
                    let mut dv = Tensor::zeros(vv.rows(), vv.cols());
                    for (s, seg) in segments.iter().enumerate() {
                        let gs = g.row(s);
                        for e in seg.clone() {
                            if need_w {
                                dw.values_mut()[e] += gs.iter().zip(vv.row(e)).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if need_v {
                                let w = wv.values()[e];
                                for (d, gv) in dv.row_mut(e).iter_mut().zip(gs) {
                                    *d += w * gv;
                                }
                            }
                        }
                    }
                    if need_w {
                        add_grad(&mut grads, *weights, dw);
                    }
                    if need_v {
                        add_grad(&mut grads, *values, dv);
                    }
                }
                Op::SumSquaredError(pred, target) => {
                    let scale = g.values()[0];
                    let pv = &self.nodes[*pred].value;
                    let mut dp = Tensor::zeros(pv.rows(), pv.cols());
                    for ((d, p), t) in dp.values_mut().iter_mut().zip(pv.values()).zip(target.values()) {
                        *d = 2.0 * (p - t) * scale;
                    }
                    add_grad(&mut grads, *pred, dp);
                }
            }
        }
        Ok(())
    }
}

fn add_grad(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_minus_two_xt_y() {
        let x = Tensor::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]).unwrap();
        let y = Tensor::from_vec(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let mut store = ParamStore::new();
        let w = store.add("W", Tensor::zeros(2, 1)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(&store, w);
        let pred = tape.matmul(xv, wv).unwrap();
        let loss = tape.sum_squared_error(pred, y.clone()).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let grad = store.get(w).grad.clone().unwrap();
        // -2 Xᵀy computed by hand
        let expected = [-2.0 * (0.5 + 1.0 + 6.0), -2.0 * (1.0 - 0.5 - 4.0)];
        for (g, e) in grad.values().iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn softmax_known_values() {
        let mut s = [0.0, 0.0];
        softmax_in_place(&mut s);
        assert_eq!(s, [0.5, 0.5]);
        let mut s = [1.0, 2.0, 3.0];
        softmax_in_place(&mut s);
        let denom = 1.0 + core::f64::consts::E + core::f64::consts::E.powi(2);
        assert!((s[0] - 1.0 / denom).abs() < 1e-15);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut big = [1000.0, 1000.0];
        softmax_in_place(&mut big);
        assert_eq!(big, [0.5, 0.5]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_segment_yields_zero_row() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::from_vec(1, 1, vec![1.0]).unwrap());
        let v = tape.constant(Tensor::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
        #[allow(clippy::single_range_in_vec_init)]
        let out = tape.segment_weighted_sum(w, v, vec![0..0, 0..1]).unwrap();
        assert_eq!(tape.value(out).values(), &[0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        match tape.matmul(a, b) {
            Err(Error::Shape { node, .. }) => assert_eq!(node, "matmul"),
            other => panic!("{other:?}"),
        }
    }
}
