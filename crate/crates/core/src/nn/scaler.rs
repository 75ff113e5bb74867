use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-wise min-max scaling to `[0, 1]`, fitted once and then frozen.
///
/// Columns that are constant in the fitting data map to 0. Values outside
/// the fitted range are not clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter();
        let first = iter.next().ok_or_else(|| Error::InvalidInput("cannot fit scaler on zero rows".into()))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::InvalidInput(alloc::format!("row width {} != {}", row.len(), min.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(alloc::format!("non-finite value in column {j}")));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.max[j] <= self.min[j]
    }

    pub fn constant_mask(&self) -> Vec<bool> {
        (0..self.width()).map(|j| self.is_constant(j)).collect()
    }

    #[inline]
    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        if self.is_constant(j) { 0.0 } else { (v - self.min[j]) / (self.max[j] - self.min[j]) }
    }

    #[inline]
    pub fn inverse_value(&self, j: usize, v: f64) -> f64 {
        if self.is_constant(j) { self.min[j] } else { self.min[j] + v * (self.max[j] - self.min[j]) }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.transform_value(j, v)).collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.inverse_value(j, v)).collect()
    }

    /// Multiplicative factor mapping a change in scaled space back to raw units.
    pub fn span(&self, j: usize) -> f64 {
        if self.is_constant(j) { 0.0 } else { self.max[j] - self.min[j] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_column_maps_to_zero() {
        let rows: [&[f64]; 3] = [&[1.0, 5.0], &[3.0, 5.0], &[2.0, 5.0]];
        let s = MinMaxScaler::fit(rows).unwrap();
        assert_eq!(s.transform(&[2.0, 5.0]), vec![0.5, 0.0]);
        assert_eq!(s.constant_mask(), vec![false, true]);
        assert_eq!(s.inverse(&[0.5, 0.0]), vec![2.0, 5.0]);
    }

    #[test]
    fn empty_fit_is_an_error() {
        let rows: [&[f64]; 0] = [];
        assert!(MinMaxScaler::fit(rows).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in prop::collection::vec(-1e6f64..1e6, 2..40)) {
            let rows: Vec<[f64; 1]> = values.iter().map(|v| [*v]).collect();
            let s = MinMaxScaler::fit(rows.iter().map(|r| &r[..])).unwrap();
            for v in &values {
                let t = s.transform_value(0, *v);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&t));
                if !s.is_constant(0) {
                    prop_assert!((s.inverse_value(0, t) - v).abs() <= 1e-9 * (1.0 + v.abs()));
                }
            }
        }
    }
}
