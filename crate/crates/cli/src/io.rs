//! CSV and JSON files. Everything is written after the numbers are final,
//! with LF line endings and shortest round-trip float formatting, so equal
//! inputs give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use glioma_core::stats::SurvivalCurve;
use glioma_core::{CohortConfig, PatientParams, TrialOutcome};
use serde::Serialize;

pub const OUTCOMES_HEADER: [&str; 4] = ["patient_id", "protocol", "survival_days", "censored"];
pub const KM_HEADER: [&str; 5] = ["time_days", "survival", "at_risk", "events", "censored"];

/// An output directory plus the files written to it so far.
pub struct OutDir {
    pub path: PathBuf,
    pub files: Vec<String>,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<OutDir> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(OutDir { path: path.to_path_buf(), files: vec![] })
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path.join(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest: the command line, the resolved configuration and
    /// the files produced. Call last.
    pub fn manifest<C: Serialize>(&mut self, command: &str, args: &[String], config: &C) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            args: &'a [String],
            config: &'a C,
            files: &'a [String],
        }
        let files = self.files.clone();
        let m = Manifest { tool: "glioma", version: env!("CARGO_PKG_VERSION"), command, args, config, files: &files };
        self.json("manifest.json", &m)
    }
}

/// Shortest round-trip form; exponent notation outside [1e-4, 1e15).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "NR".to_string(), num)
}

pub fn cohort_header() -> Vec<&'static str> {
    let mut h = vec!["patient_id", "seed"];
    h.extend(PatientParams::NAMES);
    h
}

pub fn cohort_rows(patients: &[PatientParams], seed: u64) -> Vec<Vec<String>> {
    patients
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = vec![i.to_string(), seed.to_string()];
            row.extend(p.values().iter().map(|&v| num(v)));
            row
        })
        .collect()
}

pub fn outcome_rows(outcomes: &[TrialOutcome]) -> Vec<Vec<String>> {
    outcomes
        .iter()
        .map(|o| vec![o.patient_id.to_string(), o.protocol.clone(), num(o.survival_time), o.censored.to_string()])
        .collect()
}

/// KM curve rows, starting from (0, 1) so the file plots as a step function.
pub fn km_rows(curve: &SurvivalCurve) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    if curve.times.first().is_none_or(|&t| t > 0.0) {
        rows.push(vec!["0".into(), "1".into(), curve.n.to_string(), "0".into(), "0".into()]);
    }
    for i in 0..curve.times.len() {
        rows.push(vec![
            num(curve.times[i]),
            num(curve.survival[i]),
            curve.at_risk[i].to_string(),
            curve.events[i].to_string(),
            curve.censored[i].to_string(),
        ]);
    }
    rows
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))
}

fn check_header(path: &Path, r: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = r.headers()?;
    ensure!(
        header.iter().eq(expected.iter().copied()),
        "{}: header must be {}",
        path.display(),
        expected.join(",")
    );
    Ok(())
}

/// Reads an outcomes CSV. Patient ids must run 0..n in order.
pub fn read_outcomes(path: &Path) -> Result<Vec<TrialOutcome>> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &OUTCOMES_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = || format!("{} row {}", path.display(), i + 2);
        let patient_id: usize = rec[0].parse().with_context(at)?;
        ensure!(patient_id == i, "{}: expected patient_id {i}, found {patient_id}", at());
        out.push(TrialOutcome {
            patient_id,
            protocol: rec[1].to_string(),
            survival_time: rec[2].parse().with_context(at)?,
            censored: rec[3].parse().with_context(at)?,
        });
    }
    ensure!(!out.is_empty(), "{}: no outcomes", path.display());
    Ok(out)
}

/// Reads a cohort CSV; returns the patients and the seed column.
pub fn read_cohort(path: &Path) -> Result<(Vec<PatientParams>, Vec<u64>)> {
    let mut r = reader(path)?;
    let header = cohort_header();
    check_header(path, &mut r, &header)?;
    let (mut patients, mut seeds) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = || format!("{} row {}", path.display(), i + 2);
        let id: usize = rec[0].parse().with_context(at)?;
        ensure!(id == i, "{}: expected patient_id {i}, found {id}", at());
        seeds.push(rec[1].parse().with_context(at)?);
        let mut p = PatientParams {
            r1: 0.0,
            r2: 0.0,
            k: 0.0,
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            eps1: 0.0,
            rho1: 0.0,
            rho2: 0.0,
            rho3: 0.0,
            rho4: 0.0,
            g1: 0.0,
            g2: 0.0,
            g3: 0.0,
            mu: 0.0,
            delta1: 0.0,
            delta2: 0.0,
            t0: 0.0,
        };
        for (j, name) in PatientParams::NAMES.iter().enumerate() {
            let v: f64 = rec[j + 2].parse().with_context(at)?;
            p.set(name, v).with_context(at)?;
        }
        patients.push(p);
    }
    ensure!(!patients.is_empty(), "{}: no patients", path.display());
    Ok((patients, seeds))
}

/// The run configuration recorded in `manifest.json` beside `file`, if any.
pub fn sibling_manifest(file: &Path) -> Result<Option<serde_json::Value>> {
    let path = file.parent().unwrap_or(Path::new(".")).join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(v))
}

pub fn manifest_cohort(manifest: &serde_json::Value) -> Result<CohortConfig> {
    let Some(c) = manifest.get("config").and_then(|c| c.get("cohort")) else {
        bail!("manifest has no cohort configuration");
    };
    Ok(serde_json::from_value(c.clone())?)
}
