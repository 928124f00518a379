//! Run configuration: the committed defaults, merged with an optional user
//! file, then with command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use glioma_core::{CohortConfig, DoseConfig, IntegratorConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULTS: &str = include_str!("../../../config/defaults.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSection {
    pub protocols: Vec<String>,
    /// CAR-T totals; protocols without injections run once.
    pub total_carts: Vec<f64>,
    pub control: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub tmz_cycles: Vec<u32>,
    pub r2_ratios: Vec<f64>,
    pub cart_totals: Vec<f64>,
    pub cart_splits: Vec<u32>,
    pub cart_gaps: Vec<f64>,
    pub rho4_maxima: Vec<f64>,
    pub injections: u32,
    /// Protocol for the rho4-max sweep.
    pub protocol: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub margin: f64,
    pub min_set: usize,
    pub max_set: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub target: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: CohortConfig,
    pub dose: DoseConfig,
    pub integrator: IntegratorConfig,
    pub trial: TrialSection,
    pub sweep: SweepSection,
    pub analyze: AnalyzeSection,
    pub calibrate: CalibrateSection,
}

/// Tables merge key by key; anything else in `over` replaces `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl RunConfig {
    pub fn load(user: Option<&Path>) -> Result<RunConfig> {
        let mut table: toml::Table = DEFAULTS.parse().context("parsing built-in defaults")?;
        if let Some(path) = user {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let over: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut table, over);
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        let cfg = RunConfig::load(None).unwrap();
        assert_eq!(cfg.cohort, CohortConfig::default());
        assert_eq!(cfg.dose, DoseConfig::default());
        assert_eq!(cfg.integrator, IntegratorConfig::default());
    }

    #[test]
    fn user_file_merges_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[cohort]\nseed = 9\n[cohort.overrides]\nrho4 = 0.05\n[dose]\ncart_gap = 14.0\n").unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.cohort.seed, 9);
        assert_eq!(cfg.cohort.n_patients, 10_000);
        assert_eq!(cfg.cohort.overrides["rho4"], 0.05);
        assert_eq!(cfg.dose.cart_gap, 14.0);
        std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        assert_eq!(RunConfig::load(Some(&path)).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[cohort]\nseeed = 9\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }
}
