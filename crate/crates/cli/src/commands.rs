use std::path::Path;

use anyhow::{bail, Context, Result};
use glioma_core::cohort::{median_patient, worst_case_patient};
use glioma_core::integrator::{dense_sample, integrate, integrate_constant_treatment, SolverStats};
use glioma_core::model::eradication_analysis;
use glioma_core::stats::survival::default_ticks;
use glioma_core::stats::{log_rank, LogRank};
use glioma_core::trial::{
    calibrate_t0, sweep_cart_dose, sweep_cart_gap, sweep_cart_split, sweep_rho4_max, sweep_tmz_cycles, SweepPoint,
};
use glioma_core::{run_trial, Cohort, DoseConfig, DoseKind, PatientParams, ProtocolSpec, StopKind, SystemState, TrialResult};
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::{self, num, opt_num, OutDir};
use crate::{CalibrateArgs, CohortArgs, EradicationArgs, SimulateArgs, SweepArgs, SweepKindArg, TrialArgs, Usage};

/// "mvp", "worst-case", or a TOML table of parameter values applied over
/// the MVP. `r2` and `alpha3` follow `r1` and `alpha1` unless given.
pub fn load_patient(source: &str, cfg: &RunConfig) -> Result<PatientParams> {
    match source {
        "mvp" => Ok(median_patient(&cfg.cohort)?),
        "worst-case" => Ok(worst_case_patient(&cfg.cohort)?),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading patient file {path}"))?;
            let table: toml::Table = text.parse().with_context(|| format!("parsing {path}"))?;
            let mut p = median_patient(&cfg.cohort)?;
            let value = |v: &toml::Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
            for (name, v) in &table {
                let x = value(v).with_context(|| format!("{path}: {name} must be a number"))?;
                p.set(name, x)?;
            }
            if !table.contains_key("r2") {
                p.r2 = cfg.cohort.r2_ratio * p.r1;
            }
            if !table.contains_key("alpha3") {
                p.alpha3 = p.alpha1;
            }
            p.validate()?;
            Ok(p)
        }
    }
}

fn stop_name(kind: StopKind) -> &'static str {
    match kind {
        StopKind::FatalSize => "fatal-size",
        StopKind::HorizonReached => "horizon",
        StopKind::Eradicated => "eradicated",
    }
}

fn state_row(s: &SystemState) -> Vec<String> {
    let mut row = vec![num(s.t)];
    row.extend(s.components().iter().map(|&v| num(v)));
    row.push(num(s.tumor_burden()));
    row
}

pub fn simulate(a: &SimulateArgs, args: &[String]) -> Result<()> {
    let cfg = a.common.resolve()?;
    let p = load_patient(&a.patient, &cfg)?;
    let spec = ProtocolSpec::parse(&a.protocol)?;
    let events = cfg.dose.events(&spec);
    let (traj, stop) = integrate(&p.initial_state(), &p, &events, &cfg.integrator)?;

    let mut times: Vec<f64> = (0..).map(f64::from).take_while(|&t| t <= stop.time).collect();
    if times.last() != Some(&stop.time) {
        times.push(stop.time);
    }
    let samples = dense_sample(&traj, &times)?;

    let mut out = OutDir::create(&a.common.out_dir())?;
    out.csv("trajectory.csv", &["time_days", "S", "RC", "RE", "C", "E", "total"], samples.iter().map(state_row))?;
    let impulses = traj.impulses.iter().map(|imp| {
        let (kind, amount) = match imp.kind {
            DoseKind::Tmz { e0 } => ("TMZ", e0),
            DoseKind::CarT { v } => ("CAR-T", v),
        };
        vec![
            num(imp.time),
            kind.into(),
            num(amount),
            num(imp.before.c),
            num(imp.after.c),
            num(imp.before.e),
            num(imp.after.e),
        ]
    });
    out.csv("impulses.csv", &["time_days", "kind", "amount", "C_before", "C_after", "E_before", "E_after"], impulses)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        protocol: String,
        patient: &'a PatientParams,
        stop: &'static str,
        stop_time_days: f64,
        final_state: SystemState,
        doses: usize,
        solver: SolverStats,
    }
    out.json(
        "summary.json",
        &Summary {
            protocol: spec.to_string(),
            patient: &p,
            stop: stop_name(stop.kind),
            stop_time_days: stop.time,
            final_state: stop.state,
            doses: traj.impulses.len(),
            solver: traj.stats,
        },
    )?;
    out.manifest("simulate", args, &cfg)?;
    println!("{}: {} at day {:.3}", spec, stop_name(stop.kind), stop.time);
    Ok(())
}

fn canonical(protocol: &str) -> Result<String> {
    Ok(ProtocolSpec::parse(protocol.trim())?.to_string())
}

fn tag(protocol: &str, total: Option<f64>) -> String {
    match total {
        Some(t) => format!("{protocol}_v{t:e}"),
        None => protocol.to_string(),
    }
}

#[derive(Serialize)]
struct ArmSummary {
    tag: String,
    protocol: String,
    total_cart: Option<f64>,
    n: usize,
    median_days: Option<f64>,
    censored: usize,
    gain_vs_control: Option<f64>,
    log_rank_vs_control: LogRank,
}

pub fn trial(a: &TrialArgs, args: &[String]) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    let mut protocols = a.protocols.clone().unwrap_or_else(|| cfg.trial.protocols.clone());
    if let Some(l1) = a.common.cycles {
        protocols.push(if l1 == 0 { "NT".into() } else { format!("{l1}T") });
    }
    if let Some(l2) = a.common.injections {
        protocols.push(if l2 == 0 { "NT".into() } else { format!("{l2}C") });
    }
    protocols.retain(|p| !p.trim().is_empty());
    if protocols.is_empty() {
        bail!(Usage("no protocols given".into()));
    }
    let mut names = Vec::new();
    for p in &protocols {
        let c = canonical(p)?;
        if !names.contains(&c) {
            names.push(c);
        }
    }
    let control = canonical(a.control.as_deref().unwrap_or(&cfg.trial.control))?;
    if cfg.trial.total_carts.is_empty() {
        bail!(Usage("no CAR-T dose arms given".into()));
    }
    cfg.trial.protocols = names.clone();
    cfg.trial.control = control.clone();

    let cohort = Cohort::sample(&cfg.cohort)?;
    let mut arms: Vec<(String, String, Option<f64>)> = Vec::new();
    let mut order = names.clone();
    if !order.contains(&control) {
        order.insert(0, control.clone());
    }
    for p in &order {
        if ProtocolSpec::parse(p)?.car_t_injections() == 0 {
            arms.push((tag(p, None), p.clone(), None));
        } else {
            for &t in &cfg.trial.total_carts {
                arms.push((tag(p, Some(t)), p.clone(), Some(t)));
            }
        }
    }
    let mut results: Vec<TrialResult> = Vec::new();
    for (_, p, total) in &arms {
        let dose = DoseConfig { total_cart: total.unwrap_or(cfg.dose.total_cart), ..cfg.dose };
        results.push(run_trial(&cohort, p, &dose, &cfg.integrator)?);
    }
    let ci = arms.iter().position(|arm| arm.1 == control).expect("control arm present");
    let control_obs = results[ci].observations();
    let control_median = results[ci].median();

    let mut out = OutDir::create(&a.common.out_dir())?;
    out.csv("cohort.csv", &io::cohort_header(), io::cohort_rows(&cohort.patients, cfg.cohort.seed))?;
    let mut summary = Vec::new();
    for ((tag, p, total), r) in arms.iter().zip(&results) {
        let curve = r.curve();
        out.csv(&format!("outcomes_{tag}.csv"), &io::OUTCOMES_HEADER, io::outcome_rows(&r.outcomes))?;
        out.csv(&format!("km_{tag}.csv"), &io::KM_HEADER, io::km_rows(&curve))?;
        let ticks = default_ticks(cfg.integrator.horizon);
        let risk = curve.risk_table(&ticks).into_iter().map(|(t, n)| vec![num(t), n.to_string()]);
        out.csv(&format!("risk_{tag}.csv"), &["time_days", "at_risk"], risk)?;
        let median = r.median();
        summary.push(ArmSummary {
            tag: tag.clone(),
            protocol: p.clone(),
            total_cart: *total,
            n: r.outcomes.len(),
            median_days: median,
            censored: r.outcomes.iter().filter(|o| o.censored).count(),
            gain_vs_control: median.zip(control_median).map(|(m, c)| m / c),
            log_rank_vs_control: log_rank(&r.observations(), &control_obs),
        });
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        n_patients: usize,
        seed: u64,
        r2_ratio: f64,
        control: &'a str,
        arms: &'a [ArmSummary],
    }
    out.json(
        "summary.json",
        &Summary {
            n_patients: cfg.cohort.n_patients,
            seed: cfg.cohort.seed,
            r2_ratio: cfg.cohort.r2_ratio,
            control: &control,
            arms: &summary,
        },
    )?;
    out.text("config.toml", &cfg.to_toml()?)?;
    out.manifest("trial", args, &cfg)?;

    println!("{:<16} {:>10} {:>9} {:>8}", "arm", "median", "censored", "gain");
    for s in &summary {
        println!(
            "{:<16} {:>10} {:>9} {:>8}",
            s.tag,
            s.median_days.map_or("NR".into(), |m| format!("{m:.1}")),
            s.censored,
            s.gain_vs_control.map_or("-".into(), |g| format!("{g:.3}"))
        );
    }
    Ok(())
}

fn whole(grid: &[f64], what: &str) -> Result<Vec<u32>> {
    grid.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x <= f64::from(u32::MAX) {
                Ok(x as u32)
            } else {
                Err(Usage(format!("{what} must be non-negative integers, got {x}")).into())
            }
        })
        .collect()
}

fn sweep_rows(points: &[SweepPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                p.kind.name().to_string(),
                num(p.r2_ratio),
                num(p.value),
                p.protocol.clone(),
                opt_num(p.median),
                p.censored.to_string(),
            ]
        })
        .collect()
}

pub fn sweep(a: &SweepArgs, args: &[String]) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    let grid = a.grid.clone();
    let points = match a.kind {
        SweepKindArg::TmzCycles => {
            if let Some(g) = &grid {
                cfg.sweep.tmz_cycles = whole(g, "TMZ cycle counts")?;
            }
            if let Some(r) = &a.ratios {
                cfg.sweep.r2_ratios = r.clone();
            }
            let s = &cfg.sweep;
            sweep_tmz_cycles(&cfg.cohort, &s.tmz_cycles, &s.r2_ratios, &cfg.dose, &cfg.integrator)?
        }
        SweepKindArg::CartDose => {
            if let Some(g) = grid {
                cfg.sweep.cart_totals = g;
            }
            let cohort = Cohort::sample(&cfg.cohort)?;
            sweep_cart_dose(&cohort, &cfg.sweep.cart_totals, cfg.sweep.injections, &cfg.dose, &cfg.integrator)?
        }
        SweepKindArg::CartSplit => {
            if let Some(g) = &grid {
                cfg.sweep.cart_splits = whole(g, "injection counts")?;
            }
            let cohort = Cohort::sample(&cfg.cohort)?;
            sweep_cart_split(&cohort, &cfg.sweep.cart_splits, &cfg.dose, &cfg.integrator)?
        }
        SweepKindArg::CartGap => {
            if let Some(g) = grid {
                cfg.sweep.cart_gaps = g;
            }
            let cohort = Cohort::sample(&cfg.cohort)?;
            sweep_cart_gap(&cohort, &cfg.sweep.cart_gaps, cfg.sweep.injections, &cfg.dose, &cfg.integrator)?
        }
        SweepKindArg::Rho4Max => {
            if let Some(g) = grid {
                cfg.sweep.rho4_maxima = g;
            }
            if let Some(p) = &a.protocol {
                cfg.sweep.protocol = canonical(p)?;
            }
            let s = &cfg.sweep;
            sweep_rho4_max(&cfg.cohort, &s.rho4_maxima, &s.protocol, &cfg.dose, &cfg.integrator)?
        }
    };
    let mut out = OutDir::create(&a.common.out_dir())?;
    out.csv(
        "sweep.csv",
        &["kind", "r2_ratio", "value", "protocol", "median_days", "censored"],
        sweep_rows(&points),
    )?;
    out.text("config.toml", &cfg.to_toml()?)?;
    out.manifest("sweep", args, &cfg)?;
    for p in &points {
        println!("{} r2/r1={} value={} {}: median {}", p.kind.name(), p.r2_ratio, p.value, p.protocol, opt_num(p.median));
    }
    Ok(())
}

#[derive(Serialize)]
struct EradicationRow {
    v: f64,
    v_critical: f64,
    chemo_threshold: f64,
    chemo_efficacy: f64,
    stable: bool,
    lambda: [f64; 5],
    outcome: Option<&'static str>,
    time_days: Option<f64>,
}

pub fn check_eradication(a: &EradicationArgs, args: &[String]) -> Result<()> {
    let cfg = a.common.resolve()?;
    let mut p = load_patient(&a.patient, &cfg)?;
    if let Some(f) = a.chemo_factor {
        if !(f > 0.0 && a.e0 > 0.0) {
            bail!(Usage("--chemo-factor needs a positive factor and E0 > 0".into()));
        }
        let s = f * p.r1 * p.mu / a.e0 / (p.alpha1 + p.eps1);
        p.alpha1 *= s;
        p.eps1 *= s;
        p.alpha3 = p.alpha1;
    }
    let base = eradication_analysis(&p, 0.0, a.e0)?;
    let mut rates = a.v.clone();
    rates.extend(a.v_factor.iter().map(|f| f * base.v_critical));
    if rates.is_empty() {
        rates.push(0.0);
    }
    println!("v_critical = {:e} cells/day", base.v_critical);
    println!("chemo_threshold = {} (alpha1 + eps1 = {})", base.chemo_threshold, p.alpha1 + p.eps1);
    let mut rows = Vec::new();
    for &v in &rates {
        let rep = eradication_analysis(&p, v, a.e0)?;
        let (outcome, time) = if a.simulate {
            let (_, stop) = integrate_constant_treatment(&p.initial_state(), &p, v, a.e0, &cfg.integrator)?;
            (Some(stop_name(stop.kind)), Some(stop.time))
        } else {
            (None, None)
        };
        let l = rep.lambda.map(|x| format!("{x:.6e}")).join(", ");
        print!("V = {v:e}: stable = {}, eigenvalues = [{l}]", rep.stable);
        match (outcome, time) {
            (Some(o), Some(t)) => println!(", simulated: {o} at day {t:.3}"),
            _ => println!(),
        }
        rows.push(EradicationRow {
            v,
            v_critical: rep.v_critical,
            chemo_threshold: rep.chemo_threshold,
            chemo_efficacy: p.alpha1 + p.eps1,
            stable: rep.stable,
            lambda: rep.lambda,
            outcome,
            time_days: time,
        });
    }
    if let Some(dir) = &a.common.out {
        let mut out = OutDir::create(dir)?;
        let header = [
            "v", "v_critical", "chemo_threshold", "chemo_efficacy", "stable", "lambda1", "lambda2", "lambda3", "lambda4",
            "lambda5", "outcome", "time_days",
        ];
        let csv_rows = rows.iter().map(|r| {
            let mut row = vec![num(r.v), num(r.v_critical), num(r.chemo_threshold), num(r.chemo_efficacy), r.stable.to_string()];
            row.extend(r.lambda.iter().map(|&x| num(x)));
            row.push(r.outcome.unwrap_or("").to_string());
            row.push(r.time_days.map_or(String::new(), num));
            row
        });
        out.csv("eradication.csv", &header, csv_rows)?;
        out.json("eradication.json", &rows)?;
        out.manifest("check-eradication", args, &cfg)?;
    }
    Ok(())
}

pub fn cohort(a: &CohortArgs, args: &[String]) -> Result<()> {
    let cfg = a.common.resolve()?;
    let cohort = Cohort::sample(&cfg.cohort)?;
    let mut out = OutDir::create(&a.common.out_dir())?;
    out.csv("cohort.csv", &io::cohort_header(), io::cohort_rows(&cohort.patients, cfg.cohort.seed))?;
    out.manifest("cohort", args, &cfg)?;
    println!("{} patients written to {}", cohort.len(), Path::new(&out.path).join("cohort.csv").display());
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs, args: &[String]) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(t) = a.target {
        cfg.calibrate.target = t;
    }
    if let Some(t) = a.tol {
        cfg.calibrate.tol = t;
    }
    let cal = calibrate_t0(&cfg.cohort, cfg.calibrate.target, cfg.calibrate.tol, &cfg.integrator)?;
    let mut out = OutDir::create(&a.common.out_dir())?;
    out.json("calibration.json", &cal)?;
    out.manifest("calibrate", args, &cfg)?;
    println!(
        "scale {:.6} -> t0_range = [{:e}, {:e}], untreated median {:.2} days after {} trials",
        cal.scale, cal.t0_range.0, cal.t0_range.1, cal.median, cal.evaluations
    );
    Ok(())
}
