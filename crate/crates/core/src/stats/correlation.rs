//! Pearson correlation with t-test p-values, correlation reports and
//! median shifts.

use serde::Serialize;

use super::special::{floor_p, student_t_two_sided};
use super::summary::quantile;
use crate::error::{Error, Result};
use crate::model::PatientParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pearson {
    pub r: f64,
    pub p_value: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("pearson: lengths differ ({} vs {})", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("pearson: need at least 3 pairs, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) || sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson: constant input".into()));
    }
    let mut r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    // Exact linear relations land a few ulps short of ±1.
    if 1.0 - r.abs() <= 4.0 * f64::EPSILON {
        r = r.signum();
    }
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(Pearson { r, p_value: floor_p(p) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub parameter: String,
    pub r: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    pub min_abs_r: f64,
    pub max_p: f64,
}

impl CorrelationReport {
    pub fn get(&self, parameter: &str) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }
}

pub const MIN_ABS_R: f64 = 0.1;
pub const MAX_P: f64 = 0.05;

/// Every correlation of `target` with the listed parameters, unfiltered, in
/// the order given. Parameters (or targets) without variance are skipped.
pub fn correlations(target: &[f64], cohort: &[PatientParams], parameters: &[&str]) -> Result<Vec<CorrelationRow>> {
    if target.len() != cohort.len() {
        return Err(Error::SnapshotMismatch(format!(
            "{} target values for {} patients",
            target.len(),
            cohort.len()
        )));
    }
    let mut rows = Vec::new();
    for &name in parameters {
        let x: Vec<f64> = cohort
            .iter()
            .map(|p| p.get(name).ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}"))))
            .collect::<Result<_>>()?;
        match pearson(&x, target) {
            Ok(c) => rows.push(CorrelationRow { parameter: name.to_string(), r: c.r, p_value: c.p_value }),
            Err(Error::Undefined(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// Correlations that pass |r| ≥ 0.1 and p < 0.05, strongest first.
pub fn correlation_report(target: &[f64], cohort: &[PatientParams], parameters: &[&str]) -> Result<CorrelationReport> {
    let mut rows: Vec<_> = correlations(target, cohort, parameters)?
        .into_iter()
        .filter(|r| r.r.abs() >= MIN_ABS_R && r.p_value < MAX_P)
        .collect();
    rows.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()));
    Ok(CorrelationReport { rows, min_abs_r: MIN_ABS_R, max_p: MAX_P })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianShift {
    pub parameter: String,
    pub subgroup_median: f64,
    pub population_median: f64,
    pub shift_percent: f64,
}

/// Percent shift of each parameter's median in `subgroup` relative to
/// `population`.
pub fn median_shift(subgroup: &[PatientParams], population: &[PatientParams], parameters: &[&str]) -> Result<Vec<MedianShift>> {
    if subgroup.is_empty() || population.is_empty() {
        return Err(Error::InvalidInput("median_shift: empty group".into()));
    }
    parameters
        .iter()
        .map(|&name| {
            let col = |g: &[PatientParams]| -> Result<Vec<f64>> {
                g.iter().map(|p| p.get(name).ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))).collect()
            };
            let sub = quantile(&col(subgroup)?, 0.5)?;
            let pop = quantile(&col(population)?, 0.5)?;
            Ok(MedianShift {
                parameter: name.to_string(),
                subgroup_median: sub,
                population_median: pop,
                shift_percent: 100.0 * (sub - pop) / pop,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{sample_cohort, CohortConfig, SAMPLED};
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        let c = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((c.r - 0.5).abs() < 1e-15);
        // t = 0.5·sqrt(1/0.75), df = 1: p = 1 − (2/π)·atan(t).
        let t: f64 = 0.5 / 0.75f64.sqrt();
        let p = 1.0 - 2.0 / std::f64::consts::PI * t.atan();
        assert!((c.p_value - p).abs() < 1e-12, "{} vs {p}", c.p_value);
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = x.map(|v| 2.0 * v);
        assert_eq!(pearson(&x, &y).unwrap(), Pearson { r: 1.0, p_value: 0.0 });
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn p_value_agrees_with_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..50).map(|i| i as f64 * 0.01 + (i as f64 * 1.3).cos()).collect();
        let c = pearson(&x, &y).unwrap();
        let t = c.r * (48.0 / (1.0 - c.r * c.r)).sqrt();
        let p = 2.0 * StudentsT::new(0.0, 1.0, 48.0).unwrap().sf(t.abs());
        assert!((c.p_value - p).abs() < 1e-10 * p.max(1e-10));
    }

    #[test]
    fn report_filters_and_sorts() {
        let cfg = CohortConfig { n_patients: 500, ..Default::default() };
        let cohort = sample_cohort(&cfg).unwrap();
        let target: Vec<f64> = cohort.iter().map(|p| -100.0 * p.r1 + p.alpha1 + 0.01 * p.t0 / 1e11).collect();
        let rep = correlation_report(&target, &cohort, &SAMPLED).unwrap();
        assert_eq!(rep.rows[0].parameter, "r1");
        assert!(rep.rows[0].r < -0.5);
        assert!(rep.rows.windows(2).all(|w| w[0].r.abs() >= w[1].r.abs()));
        assert!(rep.rows.iter().all(|r| r.r.abs() >= 0.1 && r.p_value < 0.05));
    }

    #[test]
    fn fixed_parameters_and_constant_targets_are_dropped() {
        let mut cfg = CohortConfig { n_patients: 200, ..Default::default() };
        cfg.overrides.insert("rho4".into(), 0.05);
        let cohort = sample_cohort(&cfg).unwrap();
        let target: Vec<f64> = cohort.iter().map(|p| p.rho4 + p.r1).collect();
        let rows = correlations(&target, &cohort, &SAMPLED).unwrap();
        assert!(rows.iter().all(|r| r.parameter != "rho4"));
        let ones = vec![1.0; cohort.len()];
        assert!(correlation_report(&ones, &cohort, &SAMPLED).unwrap().rows.is_empty());
        assert!(matches!(correlations(&ones[1..], &cohort, &SAMPLED), Err(Error::SnapshotMismatch(_))));
    }

    #[test]
    fn median_shift_of_population_is_zero() {
        let cohort = sample_cohort(&CohortConfig { n_patients: 101, ..Default::default() }).unwrap();
        let shifts = median_shift(&cohort, &cohort, &SAMPLED).unwrap();
        assert!(shifts.iter().all(|s| s.shift_percent == 0.0));
        assert!(median_shift(&[], &cohort, &SAMPLED).is_err());
    }

    #[test]
    fn median_shift_of_fast_growers() {
        let cohort = sample_cohort(&CohortConfig { n_patients: 1000, ..Default::default() }).unwrap();
        let mut sorted = cohort.clone();
        sorted.sort_by(|a, b| a.r1.total_cmp(&b.r1));
        let top = &sorted[500..];
        let shift = &median_shift(top, &cohort, &["r1"]).unwrap()[0];
        let expect = {
            let mut r: Vec<f64> = top.iter().map(|p| p.r1).collect();
            r.sort_by(f64::total_cmp);
            let sub = 0.5 * (r[249] + r[250]);
            let mut all: Vec<f64> = cohort.iter().map(|p| p.r1).collect();
            all.sort_by(f64::total_cmp);
            let pop = 0.5 * (all[499] + all[500]);
            100.0 * (sub - pop) / pop
        };
        assert!((shift.shift_percent - expect).abs() < 1e-9);
        // Upper half of U(0.001, 0.025) has median near 0.019, about +46%.
        assert!(shift.shift_percent > 35.0 && shift.shift_percent < 57.0);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40),
            a in 0.1f64..10.0, b in -100.0f64..100.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(base) = pearson(&x, &y) {
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let pos = pearson(&xs, &y).unwrap();
                prop_assert!((pos.r - base.r).abs() < 1e-9);
                let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
                let neg = pearson(&xn, &y).unwrap();
                prop_assert!((neg.r + base.r).abs() < 1e-9);
            }
        }
    }
}
