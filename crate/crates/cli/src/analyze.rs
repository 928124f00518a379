//! `glioma analyze`: statistics over outcome files written by `trial`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use glioma_core::cohort::SAMPLED;
use glioma_core::stats::{correlation_report, correlations, log_rank, median_shift, pearson, CorrelationRow};
use glioma_core::trial::{protocol_equivalence_sets, survival_ratios, TrialSnapshot};
use glioma_core::{Cohort, CohortConfig, Error, PatientParams, TrialResult};
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::{self, num, opt_num, OutDir};
use crate::{AnalyzeArgs, AnalyzeMode, Usage};

/// One outcome file, labelled by its arm tag.
struct Arm {
    label: String,
    result: TrialResult,
    /// Cohort configuration from the sibling manifest, if there was one.
    cohort: Option<CohortConfig>,
}

fn label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_prefix("outcomes_").map(str::to_string).unwrap_or(stem)
}

fn load_arm(path: &Path, cfg: &RunConfig) -> Result<Arm> {
    let outcomes = io::read_outcomes(path)?;
    let protocol = outcomes[0].protocol.clone();
    if outcomes.iter().any(|o| o.protocol != protocol) {
        bail!("{}: mixes several protocols", path.display());
    }
    let cohort = io::sibling_manifest(path)?.map(|m| io::manifest_cohort(&m)).transpose()?;
    let snapshot_cohort = cohort.clone().unwrap_or_else(|| CohortConfig { n_patients: outcomes.len(), ..cfg.cohort.clone() });
    if snapshot_cohort.n_patients != outcomes.len() {
        return Err(Error::SnapshotMismatch(format!(
            "{} has {} outcomes but its manifest describes {} patients",
            path.display(),
            outcomes.len(),
            snapshot_cohort.n_patients
        ))
        .into());
    }
    let snapshot = TrialSnapshot { cohort: snapshot_cohort, protocol, dose: cfg.dose, integrator: cfg.integrator };
    Ok(Arm { label: label(path), result: TrialResult { snapshot, outcomes }, cohort })
}

fn check_same_cohort(arms: &[Arm]) -> Result<()> {
    let first = &arms[0];
    for a in &arms[1..] {
        if !a.result.same_cohort(&first.result) {
            return Err(Error::SnapshotMismatch(format!("{} and {} come from different cohorts", first.label, a.label)).into());
        }
    }
    Ok(())
}

/// Patient parameters for the analyzed outcomes: the cohort file when given
/// (checked against the manifest), otherwise the cohort regenerated from the
/// manifest configuration.
fn load_patients(cohort_file: Option<&PathBuf>, arm: &Arm) -> Result<(Vec<PatientParams>, Vec<&'static str>)> {
    let n = arm.result.outcomes.len();
    let (patients, names) = match (cohort_file, &arm.cohort) {
        (Some(path), cfg) => {
            let (patients, seeds) = io::read_cohort(path)?;
            if let Some(cfg) = cfg {
                let regenerated = cfg.patient(0)?;
                if seeds.iter().any(|&s| s != cfg.seed) || patients[0] != regenerated {
                    return Err(Error::SnapshotMismatch(format!(
                        "{} was not drawn with the configuration in {}'s manifest",
                        path.display(),
                        arm.label
                    ))
                    .into());
                }
            }
            let names = match cfg {
                Some(cfg) => SAMPLED.iter().copied().filter(|p| cfg.is_sampled(p)).collect(),
                None => SAMPLED.to_vec(),
            };
            (patients, names)
        }
        (None, Some(cfg)) => {
            let c = Cohort::sample(cfg)?;
            let names = c.sampled_parameters();
            (c.patients, names)
        }
        (None, None) => bail!(Usage(format!("no manifest beside {}; pass --cohort", arm.label))),
    };
    if patients.len() != n {
        return Err(Error::SnapshotMismatch(format!("{} patients for {n} outcomes", patients.len())).into());
    }
    Ok((patients, names))
}

fn corr_rows(rows: &[CorrelationRow]) -> Vec<Vec<String>> {
    rows.iter().map(|r| vec![r.parameter.clone(), num(r.r), num(r.p_value)]).collect()
}

const CORR_HEADER: [&str; 3] = ["parameter", "r", "p_value"];

fn correlation_table(target: &[f64], patients: &[PatientParams], names: &[&str], all: bool) -> Result<Vec<CorrelationRow>> {
    Ok(if all { correlations(target, patients, names)? } else { correlation_report(target, patients, names)?.rows })
}

fn need(arms: &[Arm], lo: usize, hi: usize, mode: &str) -> Result<()> {
    if arms.len() < lo || arms.len() > hi {
        let want = if lo == hi { format!("exactly {lo}") } else if hi == usize::MAX { format!("at least {lo}") } else { format!("{lo} to {hi}") };
        bail!(Usage(format!("{mode} takes {want} outcome files, got {}", arms.len())));
    }
    Ok(())
}

pub fn run(a: &AnalyzeArgs, args: &[String]) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(m) = a.margin {
        cfg.analyze.margin = m;
    }
    if let Some(m) = a.min_set {
        cfg.analyze.min_set = m;
    }
    if let Some(m) = a.max_set {
        cfg.analyze.max_set = m;
    }
    let arms: Vec<Arm> = a
        .outcomes
        .iter()
        .map(|p| load_arm(p, &cfg).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    check_same_cohort(&arms)?;
    let mut out = OutDir::create(&a.common.out_dir())?;

    match a.mode {
        AnalyzeMode::Correlate => {
            need(&arms, 1, 2, "correlate")?;
            let (patients, names) = load_patients(a.cohort.as_ref(), &arms[0])?;
            let target = match &arms[..] {
                [one] => one.result.survival_times(),
                [x, y] => survival_ratios(&x.result, &y.result)?,
                _ => unreachable!(),
            };
            let rows = correlation_table(&target, &patients, &names, a.all)?;
            out.csv("correlations.csv", &CORR_HEADER, corr_rows(&rows))?;
            for r in &rows {
                println!("{:<8} r = {:+.3}  p = {:.3e}", r.parameter, r.r, r.p_value);
            }
        }
        AnalyzeMode::Compare => {
            need(&arms, 2, 2, "compare")?;
            let (x, y) = (&arms[0], &arms[1]);
            let (patients, names) = load_patients(a.cohort.as_ref(), x)?;
            let (tx, ty) = (x.result.survival_times(), y.result.survival_times());
            let ratios = survival_ratios(&x.result, &y.result)?;
            let rows = (0..tx.len()).map(|i| vec![i.to_string(), num(tx[i]), num(ty[i]), num(ratios[i])]);
            out.csv("ratios.csv", &["patient_id", &x.label, &y.label, "ratio"], rows)?;
            let ratio_corr = correlation_table(&ratios, &patients, &names, a.all)?;
            out.csv("correlations_ratio.csv", &CORR_HEADER, corr_rows(&ratio_corr))?;
            for arm in [x, y] {
                let rows = correlation_table(&arm.result.survival_times(), &patients, &names, a.all)?;
                out.csv(&format!("correlations_{}.csv", arm.label), &CORR_HEADER, corr_rows(&rows))?;
            }
            let pair = pearson(&tx, &ty)?;
            #[derive(Serialize)]
            struct Compare<'a> {
                a: &'a str,
                b: &'a str,
                survival_r: f64,
                survival_p: f64,
                median_a: Option<f64>,
                median_b: Option<f64>,
                log_rank: glioma_core::stats::LogRank,
            }
            out.json(
                "compare.json",
                &Compare {
                    a: &x.label,
                    b: &y.label,
                    survival_r: pair.r,
                    survival_p: pair.p_value,
                    median_a: x.result.median(),
                    median_b: y.result.median(),
                    log_rank: log_rank(&x.result.observations(), &y.result.observations()),
                },
            )?;
            println!("r({}, {}) = {:.4} (p = {:.3e})", x.label, y.label, pair.r, pair.p_value);
        }
        AnalyzeMode::Equivalence | AnalyzeMode::MedianShift => {
            need(&arms, 2, usize::MAX, "equivalence")?;
            let results: Vec<TrialResult> = arms.iter().map(|a| a.result.clone()).collect();
            let rep = protocol_equivalence_sets(&results, cfg.analyze.margin)?;
            let labels: Vec<&str> = arms.iter().map(|a| a.label.as_str()).collect();
            if a.mode == AnalyzeMode::Equivalence {
                let rows = rep.sets.iter().enumerate().map(|(i, set)| {
                    let names: Vec<&str> = set.iter().map(|&j| labels[j]).collect();
                    vec![i.to_string(), set.len().to_string(), names[0].to_string(), names.join(";")]
                });
                out.csv("equivalence.csv", &["patient_id", "set_size", "best", "protocols"], rows)?;
                let mut sizes = vec![0usize; labels.len() + 1];
                for s in &rep.sets {
                    sizes[s.len()] += 1;
                }
                #[derive(Serialize)]
                struct Equivalence<'a> {
                    margin: f64,
                    protocols: &'a [&'a str],
                    eligible: &'a [usize],
                    patients_by_set_size: &'a [usize],
                    all_protocols: usize,
                    all_fraction: f64,
                }
                out.json(
                    "equivalence.json",
                    &Equivalence {
                        margin: rep.margin,
                        protocols: &labels,
                        eligible: &rep.eligible,
                        patients_by_set_size: &sizes,
                        all_protocols: rep.all_protocols,
                        all_fraction: rep.all_fraction(),
                    },
                )?;
                println!(
                    "margin {}: {} of {} patients ({:.1}%) have every protocol within the margin",
                    rep.margin,
                    rep.all_protocols,
                    rep.sets.len(),
                    100.0 * rep.all_fraction()
                );
            } else {
                let (patients, names) = load_patients(a.cohort.as_ref(), &arms[0])?;
                let (lo, hi) = (cfg.analyze.min_set, cfg.analyze.max_set);
                let ids = rep.patients_with_set_size(lo, hi);
                if ids.is_empty() {
                    return Err(Error::Undefined(format!("no patient has {lo} to {hi} equivalent protocols")).into());
                }
                let subgroup: Vec<PatientParams> = ids.iter().map(|&i| patients[i]).collect();
                let shifts = median_shift(&subgroup, &patients, &names)?;
                let rows = shifts.iter().map(|s| {
                    vec![s.parameter.clone(), num(s.subgroup_median), num(s.population_median), num(s.shift_percent)]
                });
                out.csv(
                    "median_shift.csv",
                    &["parameter", "subgroup_median", "population_median", "shift_percent"],
                    rows,
                )?;
                println!("subgroup: {} patients with {lo} to {hi} protocols within {}", ids.len(), rep.margin);
                for s in &shifts {
                    println!("{:<8} {:+.1}%", s.parameter, s.shift_percent);
                }
            }
        }
        AnalyzeMode::Logrank => {
            need(&arms, 2, 2, "logrank")?;
            let (x, y) = (&arms[0], &arms[1]);
            let lr = log_rank(&x.result.observations(), &y.result.observations());
            let row = vec![
                x.label.clone(),
                y.label.clone(),
                opt_num(x.result.median()),
                opt_num(y.result.median()),
                num(lr.statistic),
                num(lr.p_value),
                num(lr.observed_a),
                num(lr.expected_a),
            ];
            out.csv(
                "logrank.csv",
                &["group_a", "group_b", "median_a", "median_b", "statistic", "p_value", "observed_a", "expected_a"],
                [row],
            )?;
            println!("{} vs {}: chi2 = {:.4}, p = {:.3e}", x.label, y.label, lr.statistic, lr.p_value);
        }
    }
    out.manifest("analyze", args, &cfg)?;
    Ok(())
}
