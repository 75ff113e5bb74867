//! Station identity and lifecycle.

use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::time::YearMonth;

/// Opaque station identifier. Ordering is lexicographic and is used as the
/// deterministic tie-break wherever stations are ranked.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StationId(String);

impl TryFrom<String> for StationId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        StationId::new(s)
    }
}

impl From<StationId> for String {
    fn from(id: StationId) -> String {
        id.0
    }
}

impl StationId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let trimmed = id.trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidInput("empty station id".into()));
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    /// Panics on an empty id; intended for literals in tests and fixtures.
    fn from(s: &str) -> Self {
        StationId::new(s).expect("non-empty station id")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: StationId,
    pub lat: f64,
    pub lon: f64,
    pub first_active_month: YearMonth,
    pub last_active_month: Option<YearMonth>,
}

impl StationRecord {
    pub fn new(
        id: StationId,
        lat: f64,
        lon: f64,
        first_active_month: YearMonth,
        last_active_month: Option<YearMonth>,
    ) -> Result<Self> {
        let record = Self { id, lat, lon, first_active_month, last_active_month };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::InvalidInput(alloc::format!(
                "station {} has invalid coordinates ({}, {})",
                self.id,
                self.lat,
                self.lon
            )));
        }
        if let Some(last) = self.last_active_month {
            if last < self.first_active_month {
                return Err(Error::InvalidInput(alloc::format!(
                    "station {} closes ({last}) before it opens ({})",
                    self.id,
                    self.first_active_month
                )));
            }
        }
        Ok(())
    }

    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }

    /// Months since opening; zero in the first active month and clamped at
    /// zero before it.
    pub fn age_in(&self, month: YearMonth) -> u32 {
        month.months_since(self.first_active_month).max(0) as u32
    }
}
