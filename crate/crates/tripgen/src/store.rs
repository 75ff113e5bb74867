//! Persistent scenario store: one JSON document holding every evaluated
//! scenario, rewritten atomically on each change.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tripgen_core::scenario::{Scenario, ScenarioOptions, ScenarioResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredScenario {
    pub scenario: Scenario,
    #[serde(default)]
    pub options: ScenarioOptions,
    pub result: ScenarioResult,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Contents {
    next_id: u64,
    scenarios: BTreeMap<String, StoredScenario>,
}

/// Scenario records keyed by id. Writes are serialized by an internal lock;
/// without a path the store lives in memory only.
#[derive(Debug)]
pub struct ScenarioStore {
    path: Option<PathBuf>,
    inner: Mutex<Contents>,
}

impl ScenarioStore {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::new(Contents::default()) }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let contents = if path.exists() {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing scenario store {}", path.display()))?
        } else {
            Contents::default()
        };
        Ok(Self { path: Some(path.to_path_buf()), inner: Mutex::new(contents) })
    }

    /// Id for a new scenario that is not yet taken.
    pub fn next_id(&self) -> String {
        let mut inner = self.inner.lock().expect("store lock");
        loop {
            inner.next_id += 1;
            let id = format!("s{:06}", inner.next_id);
            if !inner.scenarios.contains_key(&id) {
                return id;
            }
        }
    }

    /// Inserts or replaces the record under `record.scenario.id`.
    pub fn put(&self, record: StoredScenario) -> Result<()> {
        let mut inner = self.inner.lock().expect("store lock");
        let id = record.scenario.id.clone();
        let previous = inner.scenarios.insert(id.clone(), record);
        if let Err(e) = self.persist(&inner) {
            match previous {
                Some(p) => inner.scenarios.insert(id, p),
                None => inner.scenarios.remove(&id),
            };
            return Err(e);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<StoredScenario> {
        self.inner.lock().expect("store lock").scenarios.get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.inner.lock().expect("store lock").scenarios.keys().cloned().collect()
    }

    fn persist(&self, contents: &Contents) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(contents)?).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tripgen_core::model::Variant;
    use tripgen_core::scenario::SigmaReport;

    fn record(id: &str) -> StoredScenario {
        let month = "2021-03".parse().unwrap();
        let sigma = SigmaReport { sigma_d: 1.0, sigma_b: 2.0, baseline_sigma_d: 1.0, baseline_sigma_b: 2.0, frozen: false, changed: false };
        StoredScenario {
            scenario: Scenario::empty(id, month),
            options: ScenarioOptions::default(),
            result: ScenarioResult {
                scenario_id: id.into(),
                base_month: month,
                variant: Variant::Slx,
                stations: Vec::new(),
                removed: Vec::new(),
                candidate_edges: BTreeMap::new(),
                sigma,
                recompute_ms: Some(1.5),
            },
        }
    }

    #[test]
    fn records_survive_reopening() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/scenarios.json");
        let store = ScenarioStore::open(&path).unwrap();
        let id = store.next_id();
        assert_eq!(id, "s000001");
        store.put(record(&id)).unwrap();
        let reopened = ScenarioStore::open(&path).unwrap();
        assert_eq!(reopened.get(&id), Some(record(&id)));
        assert_eq!(reopened.next_id(), "s000002");
    }

    #[test]
    fn generated_ids_skip_user_chosen_ones() {
        let store = ScenarioStore::in_memory();
        store.put(record("s000001")).unwrap();
        assert_eq!(store.next_id(), "s000002");
        assert_eq!(store.ids(), vec!["s000001".to_string()]);
    }
}
