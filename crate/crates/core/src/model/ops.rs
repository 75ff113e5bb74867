//! Single-sample building blocks of the attention model, written directly
//! against parameter tensors. Weight matrices use the row-vector convention
//! `h = x · W + b`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{affine, canonical_weighted_sum, leaky_relu, relu, order_independent_sum, softmax_in_place, Tensor};

/// `h_j = x_j · W_h + b_h` for every row.
pub fn encode_neighbors(features: &[&[f64]], w_h: &Tensor, b_h: &Tensor) -> Result<Vec<Vec<f64>>> {
    features
        .iter()
        .map(|x| {
            if x.len() != w_h.rows() {
                return Err(Error::Shape { node: "encode_neighbors".into(), detail: alloc::format!("{} inputs for W_h with {} rows", x.len(), w_h.rows()) });
            }
            if x.iter().any(|v| !(-1.0..=2.0).contains(v)) {
                log::warn!("encoder input outside [-1, 2]; features may not be normalized");
            }
            Ok(affine(x, w_h, b_h))
        })
        .collect()
}

/// Softmax over a non-empty score list.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty list".into()));
    }
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Attention parameters of one graph.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    pub w_s1: &'a Tensor,
    pub b_s1: &'a Tensor,
    pub w_s2: &'a Tensor,
    pub b_s2: &'a Tensor,
    pub leaky_slope: f64,
}

/// Raw scores `s_ij` and softmax weights `ε_ij` of the center's neighbors.
/// Returns empty vectors when there are no neighbors.
pub fn attention_weights(h_center: &[f64], h_neighbors: &[Vec<f64>], p: AttentionParams<'_>) -> (Vec<f64>, Vec<f64>) {
    if h_neighbors.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut scores = Vec::with_capacity(h_neighbors.len());
    let mut pair = Vec::with_capacity(2 * h_center.len());
    for h_j in h_neighbors {
        pair.clear();
        pair.extend_from_slice(h_center);
        pair.extend_from_slice(h_j);
        let z: Vec<f64> = affine(&pair, p.w_s1, p.b_s1).into_iter().map(relu).collect();
        let s = affine(&z, p.w_s2, p.b_s2)[0];
        scores.push(leaky_relu(s, p.leaky_slope));
    }
    let mut weights = scores.clone();
    softmax_in_place(&mut weights);
    (scores, weights)
}

/// `s_i = Σ_j ε_j h_j` over neighbors only.
pub fn aggregate_interaction(weights: &[f64], h_neighbors: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != h_neighbors.len() {
        return Err(Error::Shape {
            node: "aggregate_interaction".into(),
            detail: alloc::format!("{} weights for {} neighbors", weights.len(), h_neighbors.len()),
        });
    }
    let Some(first) = h_neighbors.first() else { return Ok(Vec::new()) };
    let mut out = vec![0.0; first.len()];
    let rows: Vec<&[f64]> = h_neighbors.iter().map(Vec::as_slice).collect();
    canonical_weighted_sum(weights, &rows, &mut out);
    Ok(out)
}

/// Kernel weights rescaled to sum to one.
pub fn normalize_kernel_weights(kernel_weights: &[f64]) -> Result<Vec<f64>> {
    let total = order_independent_sum(kernel_weights);
    if kernel_weights.is_empty() {
        return Ok(Vec::new());
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Data("kernel weights of a localized graph sum to zero".into()));
    }
    Ok(kernel_weights.iter().map(|w| w / total).collect())
}

/// Fixed-weight aggregation with kernel weights normalized over the neighbor set.
pub fn mgcn_aggregate(kernel_weights: &[f64], h_neighbors: &[Vec<f64>]) -> Result<Vec<f64>> {
    aggregate_interaction(&normalize_kernel_weights(kernel_weights)?, h_neighbors)
}

/// Sum of squared errors over samples and both flow directions.
pub fn loss(predictions: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape { node: "loss".into(), detail: alloc::format!("{} predictions for {} targets", predictions.len(), targets.len()) });
    }
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p[0] - t[0]) * (p[0] - t[0]) + (p[1] - t[1]) * (p[1] - t[1])).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_spec_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax(&[core::f64::consts::LN_2, 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12 && (s[1] - 1.0 / 3.0).abs() < 1e-12);
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!(s[0] > 1.0 - 1e-12 && s[1] >= 0.0 && s[1] < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn encoder_identity_and_bias_only() {
        let mut w = Tensor::zeros(3, 2);
        w.set(0, 0, 1.0);
        w.set(1, 1, 1.0);
        let b = Tensor::zeros(1, 2);
        let x = [1.0, 0.0, 0.0];
        assert_eq!(encode_neighbors(&[&x], &w, &b).unwrap()[0], vec![1.0, 0.0]);
        let b = Tensor::row_vector(vec![0.3, -0.7]);
        let h = encode_neighbors(&[&[0.2, 0.4, 0.9], &[1.0, 1.0, 1.0]], &Tensor::zeros(3, 2), &b).unwrap();
        assert!(h.iter().all(|r| r == &vec![0.3, -0.7]));
    }

    #[test]
    fn zeroed_scorer_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w_s1 = init_uniform(&mut rng, 4, 3, 4);
        let b_s1 = init_uniform(&mut rng, 1, 3, 4);
        let (w_s2, b_s2) = (Tensor::zeros(3, 1), Tensor::zeros(1, 1));
        let p = AttentionParams { w_s1: &w_s1, b_s1: &b_s1, w_s2: &w_s2, b_s2: &b_s2, leaky_slope: 0.2 };
        let hs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
        let (scores, eps) = attention_weights(&[0.5, 0.5], &hs, p);
        assert!(scores.iter().all(|s| *s == 0.0));
        assert!(eps.iter().all(|e| (e - 0.2).abs() < 1e-15));
    }

    #[test]
    fn attention_matches_hand_chain() {
        // d_h = 1, d_z = 2
        let w_s1 = Tensor::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let b_s1 = Tensor::row_vector(vec![0.1, 0.0]);
        let w_s2 = Tensor::from_vec(2, 1, vec![1.5, -0.5]).unwrap();
        let b_s2 = Tensor::scalar(-0.2);
        let p = AttentionParams { w_s1: &w_s1, b_s1: &b_s1, w_s2: &w_s2, b_s2: &b_s2, leaky_slope: 0.2 };
        let hi = 0.4;
        let hs = [vec![1.0], vec![-2.0]];
        let score = |hj: f64| {
            let z0 = (hi * 1.0 + hj * 0.5 + 0.1f64).max(0.0);
            let z1 = (hi * -1.0 + hj * 2.0 + 0.0f64).max(0.0);
            let s = 1.5 * z0 - 0.5 * z1 - 0.2;
            if s > 0.0 { s } else { 0.2 * s }
        };
        let (s0, s1) = (score(1.0), score(-2.0));
        let e0 = s0.exp() / (s0.exp() + s1.exp());
        let (scores, eps) = attention_weights(&[hi], &hs, p);
        assert!((scores[0] - s0).abs() < 1e-12 && (scores[1] - s1).abs() < 1e-12);
        assert!((eps[0] - e0).abs() < 1e-12 && (eps[1] - (1.0 - e0)).abs() < 1e-12);
    }

    #[test]
    fn aggregation_cases() {
        let hs = [vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(aggregate_interaction(&[1.0, 0.0], &hs).unwrap(), vec![1.0, 2.0]);
        let same = [vec![0.7, -0.1], vec![0.7, -0.1], vec![0.7, -0.1]];
        let s = aggregate_interaction(&[0.2, 0.5, 0.3], &same).unwrap();
        assert!((s[0] - 0.7).abs() < 1e-15 && (s[1] + 0.1).abs() < 1e-15);
        assert!(aggregate_interaction(&[1.0], &hs).is_err());
        assert_eq!(mgcn_aggregate(&[0.3, 0.3], &hs).unwrap(), vec![2.0, 3.0]);
        assert_eq!(mgcn_aggregate(&[0.01], &hs[..1]).unwrap(), vec![1.0, 2.0]);
        assert!(mgcn_aggregate(&[0.0, 0.0], &hs).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[[1.0, 2.0]], &[[1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(loss(&[[1.0, 2.0]], &[[0.0, 0.0]]).unwrap(), 5.0);
        assert!(loss(&[[1.0, 2.0]], &[]).is_err());
    }
}
