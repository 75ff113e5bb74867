use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ops::normalize_kernel_weights;
use super::{FeatureTable, ModelInput, NeighborSet, Player, Variant, MONTHS};
use crate::error::{Error, Result};
use crate::linalg::{largest_eigenvalue, solve_normal_equations, NormalEquations, SymMatrix};
use crate::math;
use crate::nn::MinMaxScaler;

/// Month indicators in the linear design. January is the reference level,
/// so the indicators stay linearly independent of the intercept.
pub const MONTH_DUMMIES: usize = MONTHS - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    #[default]
    Ols,
    Gd,
}

/// Stopping rule and safeguards of the gradient-descent solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Consecutive loss increases tolerated before declaring divergence.
    pub divergence_patience: usize,
}

impl Default for GdOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 5_000_000, divergence_patience: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub loss: f64,
    pub converged: bool,
}

/// Coefficients mapped back to raw feature and target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCoefficients {
    /// Per direction (out, in), one value per feature.
    pub direct: [Vec<f64>; 2],
    /// Spatial-lag coefficients for SLX.
    pub lag: Option<[Vec<f64>; 2]>,
}

/// Linear regression (`linreg`) or spatial lag of X (`slx`) on the
/// normalized design `[x; lag(x); month indicators; age; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    variant: Variant,
    input_dim: usize,
    coefficients: [Vec<f64>; 2],
    jitter: f64,
}

/// Kernel-normalized weighted mean of neighbor rows; zeros without neighbors.
pub fn spatial_lag_of(table: &FeatureTable, neighbors: &NeighborSet) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.width()];
    let weights = normalize_kernel_weights(&neighbors.kernel_weights)?;
    for (&r, w) in neighbors.rows.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(table.row(r)) {
            *o += w * v;
        }
    }
    Ok(out)
}

fn check_variant(variant: Variant) -> Result<()> {
    if variant.is_neural() {
        return Err(Error::Config(format!("{variant} is not a linear variant")));
    }
    Ok(())
}

impl LinearModel {
    pub fn design_width(variant: Variant, input_dim: usize) -> usize {
        let lag = if variant == Variant::Slx { input_dim } else { 0 };
        input_dim + lag + MONTH_DUMMIES + 2
    }

    pub fn from_coefficients(variant: Variant, input_dim: usize, coefficients: [Vec<f64>; 2]) -> Result<Self> {
        check_variant(variant)?;
        let w = Self::design_width(variant, input_dim);
        if coefficients.iter().any(|c| c.len() != w) {
            return Err(Error::Shape { node: "linear coefficients".into(), detail: format!("expected {w} per direction") });
        }
        Ok(Self { variant, input_dim, coefficients, jitter: 0.0 })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn coefficients(&self) -> &[Vec<f64>; 2] {
        &self.coefficients
    }

    /// Ridge used by the last OLS solve (zero when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Names of design columns given the feature names.
    pub fn term_names(&self, feature_names: &[String]) -> Vec<String> {
        let name = |j: usize| feature_names.get(j).cloned().unwrap_or_else(|| format!("feature_{j}"));
        let mut out: Vec<String> = (0..self.input_dim).map(name).collect();
        if self.variant == Variant::Slx {
            out.extend((0..self.input_dim).map(|j| format!("lag_{}", name(j))));
        }
        out.extend((2..=MONTHS).map(|m| format!("month_{m:02}")));
        out.push("station_age".into());
        out.push("intercept".into());
        out
    }

    fn design_row_for(variant: Variant, x: &[f64], lag: Option<&[f64]>, month_index: usize, age: f64) -> Result<Vec<f64>> {
        if month_index >= MONTHS {
            return Err(Error::InvalidInput(format!("month index {month_index}")));
        }
        let mut row = Vec::with_capacity(Self::design_width(variant, x.len()));
        row.extend_from_slice(x);
        if variant == Variant::Slx {
            let lag = lag.ok_or_else(|| Error::InvalidInput("spatial lag required for slx".into()))?;
            if lag.len() != x.len() {
                return Err(Error::Shape { node: "spatial_lag".into(), detail: format!("{} vs {}", lag.len(), x.len()) });
            }
            row.extend_from_slice(lag);
        }
        row.extend((1..MONTHS).map(|m| if m == month_index { 1.0 } else { 0.0 }));
        row.push(age);
        row.push(1.0);
        Ok(row)
    }

    fn design_rows(variant: Variant, table: &FeatureTable, inputs: &[ModelInput]) -> Result<Vec<Vec<f64>>> {
        inputs
            .iter()
            .map(|i| {
                let lag = if variant == Variant::Slx { Some(spatial_lag_of(table, &i.proximity)?) } else { None };
                Self::design_row_for(variant, table.row(i.center), lag.as_deref(), i.month_index, i.age)
            })
            .collect()
    }

    fn normal_equations(variant: Variant, table: &FeatureTable, inputs: &[ModelInput], targets: &[[f64; 2]]) -> Result<[NormalEquations; 2]> {
        check_variant(variant)?;
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::InvalidInput(format!("{} inputs for {} targets", inputs.len(), targets.len())));
        }
        let p = Self::design_width(variant, table.width());
        let mut out = NormalEquations::new(p);
        let mut moment_in = vec![0.0; p];
        for (row, t) in Self::design_rows(variant, table, inputs)?.iter().zip(targets) {
            out.add_row(row, t[0]);
            for (m, v) in moment_in.iter_mut().zip(row) {
                *m += v * t[1];
            }
        }
        let inflow = NormalEquations { gram: out.gram.clone(), moment: moment_in, rows: out.rows };
        Ok([out, inflow])
    }

    /// Least-squares fit through the normal equations.
    pub fn fit_ols(variant: Variant, table: &FeatureTable, inputs: &[ModelInput], targets: &[[f64; 2]]) -> Result<Self> {
        let [eq_out, eq_in] = Self::normal_equations(variant, table, inputs, targets)?;
        let s_out = solve_normal_equations(&eq_out)?;
        let s_in = solve_normal_equations(&eq_in)?;
        Ok(Self {
            variant,
            input_dim: table.width(),
            jitter: s_out.jitter.max(s_in.jitter),
            coefficients: [s_out.coefficients, s_in.coefficients],
        })
    }

    /// Minimizes the summed squared error by full-batch gradient descent from
    /// zero, using Nesterov momentum with adaptive restart and step `1/L`.
    pub fn fit_gd(
        variant: Variant,
        table: &FeatureTable,
        inputs: &[ModelInput],
        targets: &[[f64; 2]],
        options: GdOptions,
    ) -> Result<(Self, [GdReport; 2])> {
        let eqs = Self::normal_equations(variant, table, inputs, targets)?;
        let y_sq: [f64; 2] = [0, 1].map(|d| targets.iter().map(|t| t[d] * t[d]).sum());
        let mut coefficients: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut reports = Vec::with_capacity(2);
        for d in 0..2 {
            let (beta, report) = descend(&eqs[d].gram, &eqs[d].moment, y_sq[d], options)?;
            if !report.converged {
                log::warn!("gradient descent stopped after {} iterations with gradient norm {:e}", report.iterations, report.gradient_norm);
            }
            coefficients[d] = beta;
            reports.push(report);
        }
        let reports: [GdReport; 2] = [reports[0].clone(), reports[1].clone()];
        Ok((Self { variant, input_dim: table.width(), coefficients, jitter: 0.0 }, reports))
    }

    pub fn spatial_lag(&self, table: &FeatureTable, input: &ModelInput) -> Option<Vec<f64>> {
        (self.variant == Variant::Slx).then(|| spatial_lag_of(table, &input.proximity).unwrap_or_else(|_| vec![0.0; table.width()]))
    }

    pub fn predict_parts(&self, x: &[f64], lag: Option<&[f64]>, month_index: usize, age: f64) -> Result<[f64; 2]> {
        if x.len() != self.input_dim {
            return Err(Error::Shape { node: "linear input".into(), detail: format!("{} features, expected {}", x.len(), self.input_dim) });
        }
        let row = Self::design_row_for(self.variant, x, lag, month_index, age)?;
        Ok([0, 1].map(|d| row.iter().zip(&self.coefficients[d]).map(|(a, b)| a * b).sum()))
    }

    pub fn ignores(&self, player: Player) -> bool {
        let zero = |j: usize| self.coefficients.iter().all(|c| c[j] == 0.0);
        let lag = if self.variant == Variant::Slx { self.input_dim } else { 0 };
        let month_start = self.input_dim + lag;
        match player {
            Player::Feature(j) => j < self.input_dim && zero(j),
            Player::Month => (month_start..month_start + MONTH_DUMMIES).all(zero),
            Player::Age => zero(month_start + MONTH_DUMMIES),
        }
    }

    /// Converts coefficients fitted on min-max scaled data into raw units:
    /// `raw_j = span(target) * beta_j / span(feature_j)`, zero for constant features.
    pub fn raw_coefficients(&self, features: &MinMaxScaler, targets: &MinMaxScaler) -> RawCoefficients {
        let convert = |offset: usize| -> [Vec<f64>; 2] {
            [0, 1].map(|d| {
                (0..self.input_dim)
                    .map(|j| {
                        let span = features.span(j);
                        if span == 0.0 { 0.0 } else { targets.span(d) * self.coefficients[d][offset + j] / span }
                    })
                    .collect()
            })
        };
        RawCoefficients {
            direct: convert(0),
            lag: (self.variant == Variant::Slx).then(|| convert(self.input_dim)),
        }
    }
}

fn quadratic_loss(gram: &SymMatrix, moment: &[f64], y_sq: f64, beta: &[f64]) -> f64 {
    let g_beta = gram.mul_vec(beta);
    let quad: f64 = beta.iter().zip(&g_beta).map(|(a, b)| a * b).sum();
    let lin: f64 = beta.iter().zip(moment).map(|(a, b)| a * b).sum();
    quad - 2.0 * lin + y_sq
}

fn gradient(gram: &SymMatrix, moment: &[f64], beta: &[f64]) -> Vec<f64> {
    gram.mul_vec(beta).iter().zip(moment).map(|(g, m)| 2.0 * (g - m)).collect()
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

fn descend(gram: &SymMatrix, moment: &[f64], y_sq: f64, options: GdOptions) -> Result<(Vec<f64>, GdReport)> {
    let p = gram.n;
    let lipschitz = 2.0 * largest_eigenvalue(gram, 10_000) * (1.0 + 1e-6);
    let mut x = vec![0.0; p];
    let mut g = gradient(gram, moment, &x);
    if lipschitz <= 0.0 {
        let report = GdReport { iterations: 0, gradient_norm: norm(&g), loss: y_sq, converged: norm(&g) < options.tolerance };
        return Ok((x, report));
    }
    let step = 1.0 / lipschitz;
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let mut loss = quadratic_loss(gram, moment, y_sq, &x);
    let mut increases = 0usize;
    for it in 1..=options.max_iterations {
        let t_next = (1.0 + math::sqrt(1.0 + 4.0 * t * t)) / 2.0;
        let mu = (t - 1.0) / t_next;
        let y: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a + mu * (a - b)).collect();
        let gy = gradient(gram, moment, &y);
        let x_next: Vec<f64> = y.iter().zip(&gy).map(|(a, b)| a - step * b).collect();
        // Restart momentum whenever it points uphill.
        let uphill: f64 = gy.iter().zip(x_next.iter().zip(&x)).map(|(g, (n, o))| g * (n - o)).sum();
        t = if uphill > 0.0 { 1.0 } else { t_next };
        x_prev = core::mem::replace(&mut x, x_next);
        g = gradient(gram, moment, &x);
        let new_loss = quadratic_loss(gram, moment, y_sq, &x);
        if !new_loss.is_finite() {
            return Err(Error::Diverged(format!("loss became non-finite at iteration {it}")));
        }
        increases = if new_loss > loss { increases + 1 } else { 0 };
        if increases >= options.divergence_patience {
            return Err(Error::Diverged(format!(
                "loss increased for {increases} consecutive steps (iteration {it}, loss {new_loss:e}, step {step:e})"
            )));
        }
        loss = new_loss;
        let gn = norm(&g);
        if gn < options.tolerance {
            return Ok((x, GdReport { iterations: it, gradient_norm: gn, loss, converged: true }));
        }
    }
    let gn = norm(&g);
    Ok((x, GdReport { iterations: options.max_iterations, gradient_norm: gn, loss, converged: false }))
}
