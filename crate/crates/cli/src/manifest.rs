use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use icl_forge::experiments::ExperimentPlan;
use icl_forge::fsio::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLAN_FILE: &str = "plan.cfg";

/// Written at the start of every run; enough to re-execute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub started_unix: u64,
    pub plan: String,
    pub outputs: Vec<String>,
}

/// SHA-256 of the canonical plan text, hex encoded.
pub fn config_hash(plan: &ExperimentPlan) -> String {
    let digest = Sha256::digest(plan.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, plan: &ExperimentPlan, outputs: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash(plan),
            seeds: plan.seeds.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            plan: plan.to_text(),
            outputs,
        }
    }

    /// Writes the manifest and the canonical plan next to it.
    pub fn write(&self, out_dir: &Path) -> icl_forge::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(out_dir.join(PLAN_FILE), self.plan.as_bytes())?;
        write_atomic(out_dir.join(MANIFEST_FILE), json.as_bytes())
    }

    /// Whether the stored hash matches the stored plan text.
    pub fn is_consistent(&self) -> bool {
        ExperimentPlan::parse(&self.plan).is_ok_and(|p| config_hash(&p) == self.config_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_plan_changes() {
        let a = ExperimentPlan::preset("severe").unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.n_eval += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn manifest_is_consistent() {
        let p = ExperimentPlan::preset("memorization").unwrap();
        let m = RunManifest::new("suite", &p, vec!["report.csv".into()]);
        assert!(m.is_consistent());
        let back: RunManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
