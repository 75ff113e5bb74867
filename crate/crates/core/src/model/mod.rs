//! Demand models: the graph-attention network, its ablations and the linear
//! baselines, all consuming the same [`ModelInput`] representation.

mod linear;
mod neural;
pub mod ops;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::FEATURE_DIM;
use crate::graph::GraphKind;

pub use linear::{spatial_lag_of, GdOptions, GdReport, LinearModel, LinearSolver, RawCoefficients, MONTH_DUMMIES};
pub use neural::{AttentionEdgeValues, NeuralModel};

/// Number of calendar months addressed by the month embedding.
pub const MONTHS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mgat,
    Mgcn,
    Pgat,
    Bgat,
    Fnn,
    Linreg,
    Slx,
}

impl Variant {
    pub const ALL: [Variant; 7] =
        [Variant::Mgat, Variant::Mgcn, Variant::Pgat, Variant::Bgat, Variant::Fnn, Variant::Linreg, Variant::Slx];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mgat => "mgat",
            Variant::Mgcn => "mgcn",
            Variant::Pgat => "pgat",
            Variant::Bgat => "bgat",
            Variant::Fnn => "fnn",
            Variant::Linreg => "linreg",
            Variant::Slx => "slx",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, Variant::Linreg | Variant::Slx)
    }

    /// Graph kinds whose neighbors feed the model, in input order.
    pub fn graph_kinds(self) -> &'static [GraphKind] {
        match self {
            Variant::Mgat | Variant::Mgcn => &[GraphKind::Proximity, GraphKind::Similarity],
            Variant::Pgat | Variant::Slx => &[GraphKind::Proximity],
            Variant::Bgat => &[GraphKind::Similarity],
            Variant::Fnn | Variant::Linreg => &[],
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Mgat | Variant::Pgat | Variant::Bgat)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub k: usize,
    pub d_h: usize,
    pub d_z: usize,
    pub d_m: usize,
    pub d_o1: usize,
    pub d_o2: usize,
    pub share_graph_encoders: bool,
    pub leaky_slope: f64,
    pub input_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mgat,
            k: 5,
            d_h: 8,
            d_z: 16,
            d_m: 12,
            d_o1: 32,
            d_o2: 16,
            share_graph_encoders: false,
            leaky_slope: 0.2,
            input_dim: FEATURE_DIM,
        }
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.k, self.d_h, self.d_z, self.d_m, self.d_o1, self.d_o2, self.input_dim];
        if dims.contains(&0) {
            return Err(Error::Config(alloc::format!("model dimensions must be positive: {self:?}")));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::Config("leaky_slope must be a non-negative number".into()));
        }
        Ok(())
    }

    /// Width of the prediction layer's input: `[x; s_p; s_b; month embedding; age]`.
    pub fn output_input_width(&self) -> usize {
        self.input_dim + self.variant.graph_kinds().len() * self.d_h + self.d_m + 1
    }
}

/// Neighbors of one center under one graph, as rows of a [`FeatureTable`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub rows: Vec<usize>,
    pub kernel_weights: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Everything a model sees for one station-month. Feature rows are already
/// normalized; `age` is the normalized station age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub center: usize,
    pub proximity: NeighborSet,
    pub similarity: NeighborSet,
    pub month_index: usize,
    pub age: f64,
}

impl ModelInput {
    pub fn neighbors(&self, kind: GraphKind) -> &NeighborSet {
        match kind {
            GraphKind::Proximity => &self.proximity,
            GraphKind::Similarity => &self.similarity,
        }
    }
}

/// Row-major table of normalized feature vectors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureTable {
    width: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn new(width: usize) -> Self {
        Self { width, data: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64]) -> Result<usize> {
        if row.len() != self.width {
            return Err(Error::Shape { node: "feature_table".into(), detail: alloc::format!("row of {} values, expected {}", row.len(), self.width) });
        }
        self.data.extend_from_slice(row);
        Ok(self.len() - 1)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Inputs of the explained station that attribution methods may perturb:
/// its own features, its age and its month.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Feature(usize),
    Age,
    Month,
}

impl Player {
    pub fn all(input_dim: usize) -> Vec<Player> {
        let mut out: Vec<Player> = (0..input_dim).map(Player::Feature).collect();
        out.push(Player::Age);
        out.push(Player::Month);
        out
    }

    pub fn name(self, feature_names: &[String]) -> String {
        match self {
            Player::Feature(j) => feature_names.get(j).cloned().unwrap_or_else(|| alloc::format!("feature_{j}")),
            Player::Age => "station_age".into(),
            Player::Month => "month".into(),
        }
    }
}

/// Sample-specific state that does not depend on the center's own inputs:
/// neighbor encodings for neural models, the spatial lag for SLX.
#[derive(Debug, Clone, PartialEq)]
pub enum Prepared {
    Neural(neural::PreparedNeural),
    Linear(Option<Vec<f64>>),
}

/// A trained model of any variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Neural(NeuralModel),
    Linear(LinearModel),
}

impl Model {
    pub fn variant(&self) -> Variant {
        match self {
            Model::Neural(m) => m.config().variant,
            Model::Linear(m) => m.variant(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Neural(m) => m.config().input_dim,
            Model::Linear(m) => m.input_dim(),
        }
    }

    pub fn prepare(&self, table: &FeatureTable, input: &ModelInput) -> Result<Prepared> {
        match self {
            Model::Neural(m) => m.prepare(table, input).map(Prepared::Neural),
            Model::Linear(m) => Ok(Prepared::Linear(m.spatial_lag(table, input))),
        }
    }

    /// Normalized `(out, in)` prediction with the center's inputs supplied explicitly.
    pub fn predict_prepared(&self, prepared: &Prepared, x: &[f64], month_index: usize, age: f64) -> Result<[f64; 2]> {
        match (self, prepared) {
            (Model::Neural(m), Prepared::Neural(p)) => m.predict_prepared(p, x, month_index, age),
            (Model::Linear(m), Prepared::Linear(lag)) => m.predict_parts(x, lag.as_deref(), month_index, age),
            _ => Err(Error::InvalidInput("prepared state does not belong to this model".into())),
        }
    }

    pub fn predict(&self, table: &FeatureTable, input: &ModelInput) -> Result<[f64; 2]> {
        let p = self.prepare(table, input)?;
        self.predict_prepared(&p, table.row(input.center), input.month_index, input.age)
    }

    pub fn predict_all(&self, table: &FeatureTable, inputs: &[ModelInput]) -> Result<Vec<[f64; 2]>> {
        inputs.iter().map(|i| self.predict(table, i)).collect()
    }

    /// True when the model output provably cannot depend on `player`.
    pub fn ignores(&self, player: Player) -> bool {
        match self {
            Model::Neural(m) => m.ignores(player),
            Model::Linear(m) => m.ignores(player),
        }
    }
}
