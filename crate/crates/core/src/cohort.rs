//! Seeded virtual-patient cohorts.
//!
//! Every sampled parameter of every patient reads its own ChaCha8 substream:
//! the stream id is the patient index and the word offset is the parameter
//! slot, so a draw depends only on `(seed, patient, parameter)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PatientParams;
use crate::stats::ks::{ks_two_sample, KsResult};

pub const K: f64 = 5e12;
pub const G1: f64 = 1e10;
pub const G3: f64 = 2e9;
pub const MU: f64 = 8.32;
pub const ALPHA2: f64 = 2.5e-10;

/// T0 range after calibrating the untreated cohort median to 268 days
/// (`glioma calibrate`, seed 1, 10^4 patients). Log-uniform.
pub const CALIBRATED_T0_RANGE: (f64, f64) = (1.26e10, 1.26e11);

pub const R2_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

impl Scale {
    fn map(self, u: f64, (lo, hi): (f64, f64)) -> f64 {
        match self {
            Scale::Linear => lo + u * (hi - lo),
            Scale::Log => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        }
    }

    fn median(self, (lo, hi): (f64, f64)) -> f64 {
        match self {
            Scale::Linear => 0.5 * (lo + hi),
            Scale::Log => (lo * hi).sqrt(),
        }
    }
}

/// The sampled parameters, in substream-slot order. Never reorder: the slot
/// index is part of the reproducibility contract.
pub const SAMPLED: [&str; 10] =
    ["r1", "alpha1", "eps1", "rho1", "rho2", "rho3", "rho4", "delta1", "delta2", "T0"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub r2_ratio: f64,
    pub rho4_max: f64,
    pub t0_range: (f64, f64),
    pub t0_scale: Scale,
    pub delta2_scale: Scale,
    /// Parameters pinned to a value for every patient.
    pub overrides: BTreeMap<String, f64>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 10_000,
            seed: 1,
            r2_ratio: 0.5,
            rho4_max: 0.1,
            t0_range: CALIBRATED_T0_RANGE,
            t0_scale: Scale::Log,
            delta2_scale: Scale::Linear,
            overrides: BTreeMap::new(),
        }
    }
}

impl CohortConfig {
    /// Sampling range and scale of a sampled parameter.
    pub fn range(&self, name: &str) -> Option<((f64, f64), Scale)> {
        use Scale::*;
        Some(match name {
            "r1" => ((0.001, 0.025), Linear),
            "alpha1" => ((0.1, 1.0), Linear),
            "eps1" => ((0.1, 0.6), Linear),
            "rho1" => ((1.0 / 30.0, 1.0 / 7.0), Linear),
            "rho2" | "rho3" => ((0.2, 0.9), Linear),
            "rho4" => ((0.01, self.rho4_max), Linear),
            "delta1" => ((0.1, 0.5), Linear),
            "delta2" => ((1e-4, 0.1), self.delta2_scale),
            "T0" => (self.t0_range, self.t0_scale),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: String| {
            Err(Error::InvalidParameter { name: name.to_string(), reason })
        };
        if self.n_patients == 0 {
            return bad("n_patients", "must be at least 1".into());
        }
        if !R2_RATIOS.contains(&self.r2_ratio) {
            return bad("r2_ratio", format!("must be one of 0.5, 1, 2 (got {})", self.r2_ratio));
        }
        for name in SAMPLED {
            let ((lo, hi), scale) = self.range(name).expect("sampled parameter has a range");
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(name, format!("empty range [{lo}, {hi}]"));
            }
            if scale == Scale::Log && lo <= 0.0 {
                return bad(name, "log-scale range must be positive".into());
            }
        }
        if self.t0_range.1 >= K / 5.0 {
            return bad("T0", "range must stay below the fatal size".into());
        }
        for (name, &value) in &self.overrides {
            if name == "alpha3" || name == "r2" {
                return bad(name, "linked parameter; set alpha1 or r2_ratio instead".into());
            }
            if !PatientParams::NAMES.contains(&name.as_str()) {
                return bad(name, "unknown parameter".into());
            }
            if !value.is_finite() {
                return bad(name, "override must be finite".into());
            }
        }
        Ok(())
    }

    /// True if `name` varies across patients.
    pub fn is_sampled(&self, name: &str) -> bool {
        SAMPLED.contains(&name) && !self.overrides.contains_key(name)
    }

    fn base(&self) -> PatientParams {
        PatientParams {
            r1: f64::NAN,
            r2: f64::NAN,
            k: K,
            alpha1: f64::NAN,
            alpha2: ALPHA2,
            alpha3: f64::NAN,
            eps1: f64::NAN,
            rho1: f64::NAN,
            rho2: f64::NAN,
            rho3: f64::NAN,
            rho4: f64::NAN,
            g1: G1,
            g2: G1,
            g3: G3,
            mu: MU,
            delta1: f64::NAN,
            delta2: f64::NAN,
            t0: f64::NAN,
        }
    }

    fn finish(&self, mut p: PatientParams) -> Result<PatientParams> {
        for (name, &value) in &self.overrides {
            p.set(name, value)?;
        }
        p.alpha3 = p.alpha1;
        p.r2 = self.r2_ratio * p.r1;
        p.validate()?;
        Ok(p)
    }

    /// Patient `id`'s parameters; a pure function of `(seed, id)` and the config.
    pub fn patient(&self, id: usize) -> Result<PatientParams> {
        let mut p = self.base();
        for (slot, name) in SAMPLED.iter().enumerate() {
            let (range, scale) = self.range(name).expect("sampled parameter has a range");
            p.set(name, scale.map(uniform(self.seed, id, slot), range))?;
        }
        self.finish(p)
    }
}

/// The `slot`-th uniform draw in [0, 1) for patient `id`.
fn uniform(seed: u64, id: usize, slot: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng.set_word_pos(slot as u128 * 16);
    rng.gen::<f64>()
}

pub fn sample_cohort(config: &CohortConfig) -> Result<Vec<PatientParams>> {
    config.validate()?;
    (0..config.n_patients).into_par_iter().map(|i| config.patient(i)).collect()
}

/// A sampled cohort together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub patients: Vec<PatientParams>,
}

impl Cohort {
    pub fn sample(config: &CohortConfig) -> Result<Self> {
        Ok(Cohort { config: config.clone(), patients: sample_cohort(config)? })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Parameters that vary across this cohort, in slot order.
    pub fn sampled_parameters(&self) -> Vec<&'static str> {
        SAMPLED.iter().copied().filter(|n| self.config.is_sampled(n)).collect()
    }
}

/// Every sampled parameter at the median of its sampling distribution: the
/// midpoint for uniform ranges, the geometric midpoint for log-uniform ones.
pub fn median_patient(config: &CohortConfig) -> Result<PatientParams> {
    config.validate()?;
    let mut p = config.base();
    for name in SAMPLED {
        let (range, scale) = config.range(name).expect("sampled parameter has a range");
        p.set(name, scale.median(range))?;
    }
    config.finish(p)
}

/// The median patient moved to the range ends that make eradication hardest:
/// fastest growth with the fastest resistant scenario (`r2 = 2 r1`), and the
/// strongest CAR-T losses (`alpha3 = alpha1` at its maximum, largest `rho1`).
pub fn worst_case_patient(config: &CohortConfig) -> Result<PatientParams> {
    let worst = CohortConfig { r2_ratio: 2.0, ..config.clone() };
    let mut p = median_patient(&worst)?;
    for name in ["r1", "alpha1", "rho1"] {
        if worst.overrides.contains_key(name) {
            continue;
        }
        let ((_, hi), _) = worst.range(name).expect("sampled parameter has a range");
        p.set(name, hi)?;
    }
    worst.finish(p)
}

/// Values of one parameter across a cohort.
pub fn column(cohort: &[PatientParams], name: &str) -> Vec<f64> {
    cohort.iter().map(|p| p.get(name).expect("known parameter")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsRow {
    pub parameter: &'static str,
    pub result: KsResult,
    pub indistinguishable: bool,
}

/// Compares the cohorts drawn under `config.seed` and `other_seed` parameter
/// by parameter with a two-sample KS test at level `alpha`.
pub fn ks_self_test(config: &CohortConfig, other_seed: u64, alpha: f64) -> Result<Vec<KsRow>> {
    let a = sample_cohort(config)?;
    let b = sample_cohort(&CohortConfig { seed: other_seed, ..config.clone() })?;
    Ok(SAMPLED
        .iter()
        .filter(|name| config.is_sampled(name))
        .map(|&name| {
            let result = ks_two_sample(&column(&a, name), &column(&b, name));
            KsRow { parameter: name, indistinguishable: result.p_value >= alpha, result }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> CohortConfig {
        CohortConfig { n_patients: n, ..Default::default() }
    }

    #[test]
    fn draws_lie_in_their_ranges() {
        let cfg = small(2000);
        for p in sample_cohort(&cfg).unwrap() {
            for name in SAMPLED {
                let ((lo, hi), _) = cfg.range(name).unwrap();
                let v = p.get(name).unwrap();
                assert!(v >= lo && v <= hi, "{name} = {v}");
            }
            assert_eq!(p.alpha3, p.alpha1);
            assert_eq!(p.r2, 0.5 * p.r1);
            assert_eq!((p.k, p.g1, p.g2, p.g3, p.mu, p.alpha2), (K, G1, G1, G3, MU, ALPHA2));
        }
    }

    #[test]
    fn patients_are_reproducible_and_order_free() {
        let cfg = small(50);
        let a = sample_cohort(&cfg).unwrap();
        let b: Vec<_> = (0..50).rev().map(|i| cfg.patient(i).unwrap()).collect();
        for (i, p) in a.iter().enumerate() {
            assert_eq!(p.values().map(f64::to_bits), b[49 - i].values().map(f64::to_bits));
        }
        let bigger = sample_cohort(&small(80)).unwrap();
        assert_eq!(a[..], bigger[..50]);
        let other = sample_cohort(&CohortConfig { seed: 2, ..small(50) }).unwrap();
        assert_ne!(a[0], other[0]);
    }

    #[test]
    fn r1_mean_is_within_three_standard_errors() {
        let cohort = sample_cohort(&small(10_000)).unwrap();
        let r1 = column(&cohort, "r1");
        let n = r1.len() as f64;
        let mean = r1.iter().sum::<f64>() / n;
        let se = (0.024 / 12f64.sqrt()) / n.sqrt();
        assert!((mean - 0.013).abs() < 3.0 * se, "mean {mean}");
        let (mn, mx) = r1.iter().fold((1.0f64, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(mn >= 0.001 && mx <= 0.025);
    }

    #[test]
    fn overrides_leave_other_draws_alone() {
        let base = sample_cohort(&small(100)).unwrap();
        let mut cfg = small(100);
        cfg.overrides.insert("rho4".into(), 0.05);
        let pinned = sample_cohort(&cfg).unwrap();
        for (a, b) in base.iter().zip(&pinned) {
            assert_eq!(b.rho4, 0.05);
            let mut a2 = *a;
            a2.rho4 = 0.05;
            assert_eq!(a2, *b);
        }
        assert!(!cfg.is_sampled("rho4") && cfg.is_sampled("rho3"));
    }

    #[test]
    fn scenario_ratio_only_moves_r2() {
        let a = sample_cohort(&small(20)).unwrap();
        let b = sample_cohort(&CohortConfig { r2_ratio: 2.0, ..small(20) }).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert_eq!(a.r1, b.r1);
            assert_eq!(b.r2, 2.0 * b.r1);
        }
    }

    #[test]
    fn median_patient_values() {
        let p = median_patient(&CohortConfig::default()).unwrap();
        assert!((p.r1 - 0.013).abs() < 1e-15);
        assert!((p.rho4 - 0.055).abs() < 1e-15);
        assert!((p.alpha1 - 0.55).abs() < 1e-15);
        assert!((p.delta1 - 0.3).abs() < 1e-15);
        assert_eq!(p.alpha3, p.alpha1);
        assert_eq!(p.r2, 0.5 * p.r1);
        let (lo, hi) = CALIBRATED_T0_RANGE;
        assert!((p.t0 - (lo * hi).sqrt()).abs() < 1e-3 * p.t0);
    }

    #[test]
    fn worst_case_values() {
        let p = worst_case_patient(&CohortConfig::default()).unwrap();
        assert_eq!((p.r1, p.r2, p.alpha1, p.alpha3), (0.025, 0.05, 1.0, 1.0));
        assert_eq!(p.rho1, 1.0 / 7.0);
        // v_crit = r2 (alpha3 + rho1 mu) / (mu alpha2) with E0 = 1.
        let v = 0.05 * (1.0 + MU / 7.0) / (MU * ALPHA2);
        let rep = crate::model::eradication_analysis(&p, 0.0, 1.0).unwrap();
        assert!((rep.v_critical - v).abs() < 1e-9 * v);
        assert!((rep.chemo_threshold - 0.025 * MU).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(sample_cohort(&small(0)).is_err());
        assert!(sample_cohort(&CohortConfig { r2_ratio: 0.7, ..small(1) }).is_err());
        assert!(sample_cohort(&CohortConfig { rho4_max: 0.01, ..small(1) }).is_err());
        assert!(sample_cohort(&CohortConfig { t0_range: (1e11, 1e10), ..small(1) }).is_err());
        let mut cfg = small(1);
        cfg.overrides.insert("alpha3".into(), 0.2);
        assert!(sample_cohort(&cfg).is_err());
        cfg.overrides.clear();
        cfg.overrides.insert("bogus".into(), 0.2);
        assert!(sample_cohort(&cfg).is_err());
    }

    #[test]
    fn seeds_are_statistically_indistinguishable() {
        let rows = ks_self_test(&small(2000), 99, 0.01).unwrap();
        assert_eq!(rows.len(), SAMPLED.len());
        assert!(rows.iter().all(|r| r.indistinguishable), "{rows:?}");
    }
}
