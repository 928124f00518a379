//! In-silico trials: one protocol over a cohort, parameter sweeps, protocol
//! equivalence sets and the baseline T0 calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortConfig};
use crate::error::{Error, Result};
use crate::integrator::{integrate_to_stop, IntegratorConfig, StopKind};
use crate::model::PatientParams;
use crate::protocol::{DoseEvent, ProtocolSpec, Schedule};
use crate::stats::{kaplan_meier, Observation, SurvivalCurve};

/// The six combined protocols (10 TMZ cycles, 2 CAR-T injections).
pub const COMBINED_PROTOCOLS: [&str; 6] = ["5T2C5T", "2C10T", "1C5T1C5T", "5T1C5T1C", "10T2C", "1C10T1C"];

/// Patient-independent dosing. The CAR-T total is split evenly over the
/// protocol's injections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoseConfig {
    /// Total CAR-T cells over the whole protocol.
    pub total_cart: f64,
    pub e0: f64,
    pub cycle_len: f64,
    pub dosing_days: u32,
    pub cart_gap: f64,
}

impl Default for DoseConfig {
    fn default() -> Self {
        DoseConfig { total_cart: 1e9, e0: 1.0, cycle_len: 28.0, dosing_days: 5, cart_gap: 7.0 }
    }
}

impl DoseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("dose config: {m}")));
        if !(self.total_cart >= 0.0 && self.total_cart.is_finite()) {
            return bad("total_cart must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.e0) {
            return bad("e0 must lie in [0, 1]");
        }
        if !(self.cycle_len > 0.0 && self.cart_gap >= 0.0) {
            return bad("cycle_len must be positive and cart_gap non-negative");
        }
        if f64::from(self.dosing_days) > self.cycle_len {
            return bad("dosing_days exceeds the cycle length");
        }
        Ok(())
    }

    pub fn schedule(&self, protocol: &ProtocolSpec) -> Schedule {
        let n = protocol.car_t_injections();
        Schedule {
            e0: self.e0,
            cycle_len: self.cycle_len,
            dosing_days: self.dosing_days,
            cart_gap: self.cart_gap,
            dose_per_injection: if n == 0 { 0.0 } else { self.total_cart / f64::from(n) },
        }
    }

    pub fn events(&self, protocol: &ProtocolSpec) -> Vec<DoseEvent> {
        protocol.expand(&self.schedule(protocol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub patient_id: usize,
    pub protocol: String,
    pub survival_time: f64,
    /// True when the horizon was reached without fatal size.
    pub censored: bool,
}

impl TrialOutcome {
    pub fn observation(&self) -> Observation {
        Observation { time: self.survival_time, censored: self.censored }
    }
}

/// Everything a trial result is a pure function of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSnapshot {
    pub cohort: CohortConfig,
    pub protocol: String,
    pub dose: DoseConfig,
    pub integrator: IntegratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub snapshot: TrialSnapshot,
    pub outcomes: Vec<TrialOutcome>,
}

impl TrialResult {
    pub fn observations(&self) -> Vec<Observation> {
        self.outcomes.iter().map(TrialOutcome::observation).collect()
    }

    pub fn survival_times(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.survival_time).collect()
    }

    pub fn curve(&self) -> SurvivalCurve {
        kaplan_meier(&self.observations())
    }

    /// Kaplan–Meier median; `None` if not reached.
    pub fn median(&self) -> Option<f64> {
        self.curve().median()
    }

    /// Whether two results were produced from the same virtual patients.
    pub fn same_cohort(&self, other: &TrialResult) -> bool {
        self.snapshot.cohort == other.snapshot.cohort && self.outcomes.len() == other.outcomes.len()
    }
}

/// Survival of one patient under a dose schedule.
pub fn simulate_patient(
    params: &PatientParams,
    events: &[DoseEvent],
    integrator: &IntegratorConfig,
) -> Result<(f64, bool)> {
    let stop = integrate_to_stop(&params.initial_state(), params, events, integrator)?;
    Ok(match stop.kind {
        StopKind::FatalSize => (stop.time, false),
        // A cleared tumor never reaches fatal size: censor at the horizon.
        StopKind::HorizonReached | StopKind::Eradicated => (integrator.horizon, true),
    })
}

pub fn run_trial(
    cohort: &Cohort,
    protocol: &str,
    dose: &DoseConfig,
    integrator: &IntegratorConfig,
) -> Result<TrialResult> {
    if cohort.is_empty() {
        return Err(Error::InvalidInput("empty cohort".into()));
    }
    let spec = ProtocolSpec::parse(protocol)?;
    dose.validate()?;
    integrator.validate()?;
    let events = dose.events(&spec);
    let name = spec.to_string();
    let outcomes = cohort
        .patients
        .par_iter()
        .enumerate()
        .map(|(patient_id, p)| {
            let (survival_time, censored) = simulate_patient(p, &events, integrator)
                .map_err(|e| Error::Patient { patient_id, source: Box::new(e) })?;
            Ok(TrialOutcome { patient_id, protocol: name.clone(), survival_time, censored })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialResult {
        snapshot: TrialSnapshot {
            cohort: cohort.config.clone(),
            protocol: name,
            dose: *dose,
            integrator: *integrator,
        },
        outcomes,
    })
}

/// Per-patient ratio of survival times, `a / b`.
pub fn survival_ratios(a: &TrialResult, b: &TrialResult) -> Result<Vec<f64>> {
    if !a.same_cohort(b) {
        return Err(Error::SnapshotMismatch(format!(
            "{} and {} were run on different cohorts",
            a.snapshot.protocol, b.snapshot.protocol
        )));
    }
    Ok(a.outcomes.iter().zip(&b.outcomes).map(|(x, y)| x.survival_time / y.survival_time).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    TmzCycles,
    CartDose,
    CartSplit,
    CartGap,
    Rho4Max,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::TmzCycles => "tmz-cycles",
            SweepKind::CartDose => "cart-dose",
            SweepKind::CartSplit => "cart-split",
            SweepKind::CartGap => "cart-gap",
            SweepKind::Rho4Max => "rho4-max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub kind: SweepKind,
    pub r2_ratio: f64,
    pub value: f64,
    pub protocol: String,
    pub median: Option<f64>,
    pub censored: usize,
}

fn point(kind: SweepKind, value: f64, r: &TrialResult) -> SweepPoint {
    SweepPoint {
        kind,
        r2_ratio: r.snapshot.cohort.r2_ratio,
        value,
        protocol: r.snapshot.protocol.clone(),
        median: r.median(),
        censored: r.outcomes.iter().filter(|o| o.censored).count(),
    }
}

fn nonempty<T>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        Err(Error::InvalidInput("empty sweep grid".into()))
    } else {
        Ok(())
    }
}

fn tmz_protocol(cycles: u32) -> String {
    if cycles == 0 {
        "NT".into()
    } else {
        format!("{cycles}T")
    }
}

fn cart_protocol(injections: u32) -> String {
    if injections == 0 {
        "NT".into()
    } else {
        format!("{injections}C")
    }
}

/// Median survival for `L1` TMZ cycles (protocol "L1 T"), for each r2 ratio.
pub fn sweep_tmz_cycles(
    cohort: &CohortConfig,
    cycles: &[u32],
    ratios: &[f64],
    dose: &DoseConfig,
    integrator: &IntegratorConfig,
) -> Result<Vec<SweepPoint>> {
    nonempty(cycles)?;
    nonempty(ratios)?;
    let mut out = Vec::new();
    for &ratio in ratios {
        let c = Cohort::sample(&CohortConfig { r2_ratio: ratio, ..cohort.clone() })?;
        for &l1 in cycles {
            let r = run_trial(&c, &tmz_protocol(l1), dose, integrator)?;
            out.push(point(SweepKind::TmzCycles, f64::from(l1), &r));
        }
    }
    Ok(out)
}

/// Median survival against the total CAR-T dose, split over `injections`.
pub fn sweep_cart_dose(
    cohort: &Cohort,
    totals: &[f64],
    injections: u32,
    dose: &DoseConfig,
    integrator: &IntegratorConfig,
) -> Result<Vec<SweepPoint>> {
    nonempty(totals)?;
    totals
        .iter()
        .map(|&total| {
            let r = run_trial(cohort, &cart_protocol(injections), &DoseConfig { total_cart: total, ..*dose }, integrator)?;
            Ok(point(SweepKind::CartDose, total, &r))
        })
        .collect()
}

/// Median survival against the number of injections sharing `dose.total_cart`.
pub fn sweep_cart_split(
    cohort: &Cohort,
    splits: &[u32],
    dose: &DoseConfig,
    integrator: &IntegratorConfig,
) -> Result<Vec<SweepPoint>> {
    nonempty(splits)?;
    splits
        .iter()
        .map(|&l2| {
            let r = run_trial(cohort, &cart_protocol(l2), dose, integrator)?;
            Ok(point(SweepKind::CartSplit, f64::from(l2), &r))
        })
        .collect()
}

/// Median survival against the gap (days) between CAR-T injections.
pub fn sweep_cart_gap(
    cohort: &Cohort,
    gaps: &[f64],
    injections: u32,
    dose: &DoseConfig,
    integrator: &IntegratorConfig,
) -> Result<Vec<SweepPoint>> {
    nonempty(gaps)?;
    gaps.iter()
        .map(|&gap| {
            let r = run_trial(cohort, &cart_protocol(injections), &DoseConfig { cart_gap: gap, ..*dose }, integrator)?;
            Ok(point(SweepKind::CartGap, gap, &r))
        })
        .collect()
}

/// Median survival under `protocol` as the upper bound of the ρ4 range grows.
pub fn sweep_rho4_max(
    cohort: &CohortConfig,
    maxima: &[f64],
    protocol: &str,
    dose: &DoseConfig,
    integrator: &IntegratorConfig,
) -> Result<Vec<SweepPoint>> {
    nonempty(maxima)?;
    maxima
        .iter()
        .map(|&m| {
            let c = Cohort::sample(&CohortConfig { rho4_max: m, ..cohort.clone() })?;
            let r = run_trial(&c, protocol, dose, integrator)?;
            Ok(point(SweepKind::Rho4Max, m, &r))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub margin: f64,
    pub protocols: Vec<String>,
    /// Per patient: indices into `protocols` within the margin of the best,
    /// the best first.
    pub sets: Vec<Vec<usize>>,
    /// Patients for whom each protocol is within the margin.
    pub eligible: Vec<usize>,
    /// Patients for whom every protocol is within the margin.
    pub all_protocols: usize,
}

impl EquivalenceReport {
    pub fn all_fraction(&self) -> f64 {
        self.all_protocols as f64 / self.sets.len() as f64
    }

    /// Patient ids whose set has between `lo` and `hi` protocols.
    pub fn patients_with_set_size(&self, lo: usize, hi: usize) -> Vec<usize> {
        (0..self.sets.len()).filter(|&i| (lo..=hi).contains(&self.sets[i].len())).collect()
    }
}

/// For each patient, the best protocol plus every protocol whose survival is
/// no more than `margin` (a fraction) shorter.
pub fn protocol_equivalence_sets(results: &[TrialResult], margin: f64) -> Result<EquivalenceReport> {
    let first = results.first().ok_or_else(|| Error::InvalidInput("no protocol results".into()))?;
    if results.iter().any(|r| !r.same_cohort(first)) {
        return Err(Error::SnapshotMismatch("protocol results come from different cohorts".into()));
    }
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidInput(format!("margin {margin} outside [0, 1)")));
    }
    let n = first.outcomes.len();
    let mut sets = Vec::with_capacity(n);
    let mut eligible = vec![0; results.len()];
    let mut all_protocols = 0;
    for i in 0..n {
        let times: Vec<f64> = results.iter().map(|r| r.outcomes[i].survival_time).collect();
        let best = (0..times.len()).fold(0, |b, j| if times[j] > times[b] { j } else { b });
        let cut = (1.0 - margin) * times[best];
        let mut set = vec![best];
        set.extend((0..times.len()).filter(|&j| j != best && times[j] >= cut));
        for &j in &set {
            eligible[j] += 1;
        }
        if set.len() == results.len() {
            all_protocols += 1;
        }
        sets.push(set);
    }
    Ok(EquivalenceReport {
        margin,
        protocols: results.iter().map(|r| r.snapshot.protocol.clone()).collect(),
        sets,
        eligible,
        all_protocols,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub target: f64,
    pub scale: f64,
    pub t0_range: (f64, f64),
    pub median: f64,
    pub evaluations: usize,
}

/// Untreated median of `cohort` with its T0 range multiplied by `scale`.
fn untreated_median(cohort: &CohortConfig, scale: f64, integrator: &IntegratorConfig) -> Result<f64> {
    let (lo, hi) = cohort.t0_range;
    let c = Cohort::sample(&CohortConfig { t0_range: (lo * scale, hi * scale), ..cohort.clone() })?;
    let r = run_trial(&c, "NT", &DoseConfig::default(), integrator)?;
    r.median().ok_or_else(|| Error::Undefined("untreated median not reached".into()))
}

/// Scales the T0 range (keeping its width in decades) until the untreated
/// median equals `target` days to within `tol`. The median falls as T0 grows,
/// so bisection on log(scale) over [1/100, 100] suffices.
pub fn calibrate_t0(
    cohort: &CohortConfig,
    target: f64,
    tol: f64,
    integrator: &IntegratorConfig,
) -> Result<Calibration> {
    let (mut lo, mut hi) = (-(100f64.ln()), 100f64.ln());
    let max_scale = (crate::cohort::K / 5.0) / cohort.t0_range.1;
    hi = hi.min(max_scale.ln() - 1e-9);
    let mut evaluations = 0;
    let mut eval = |ls: f64| {
        evaluations += 1;
        untreated_median(cohort, ls.exp(), integrator)
    };
    let (m_lo, m_hi) = (eval(lo)?, eval(hi)?);
    if !(m_lo >= target && target >= m_hi) {
        return Err(Error::InvalidInput(format!(
            "target median {target} outside the reachable range [{m_hi}, {m_lo}]"
        )));
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let m = eval(mid)?;
        if (m - target).abs() < best.0 {
            best = ((m - target).abs(), mid, m);
        }
        if (m - target).abs() <= tol {
            break;
        }
        if m > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = best.1.exp();
    let (a, b) = cohort.t0_range;
    Ok(Calibration { target, scale, t0_range: (a * scale, b * scale), median: best.2, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::median_patient;

    fn small(n: usize) -> Cohort {
        Cohort::sample(&CohortConfig { n_patients: n, ..Default::default() }).unwrap()
    }

    #[test]
    fn dose_is_split_over_injections() {
        let d = DoseConfig { total_cart: 1e9, ..Default::default() };
        let spec = ProtocolSpec::parse("1C5T1C5T").unwrap();
        assert_eq!(d.schedule(&spec).dose_per_injection, 5e8);
        assert_eq!(d.schedule(&ProtocolSpec::parse("10T").unwrap()).dose_per_injection, 0.0);
        assert!(DoseConfig { e0: 2.0, ..d }.validate().is_err());
    }

    #[test]
    fn outcomes_respect_the_horizon() {
        let cohort = small(30);
        let integ = IntegratorConfig { horizon: 300.0, ..Default::default() };
        let r = run_trial(&cohort, "10T", &DoseConfig::default(), &integ).unwrap();
        assert_eq!(r.outcomes.len(), 30);
        for (i, o) in r.outcomes.iter().enumerate() {
            assert_eq!(o.patient_id, i);
            assert!(o.survival_time <= 300.0);
            if o.censored {
                assert_eq!(o.survival_time, 300.0);
            }
        }
        assert!(r.outcomes.iter().any(|o| o.censored));
    }

    #[test]
    fn deterministic_given_snapshot() {
        let cohort = small(40);
        let a = run_trial(&cohort, "2C", &DoseConfig::default(), &IntegratorConfig::default()).unwrap();
        let b = run_trial(&cohort, "2C", &DoseConfig::default(), &IntegratorConfig::default()).unwrap();
        let bits = |r: &TrialResult| r.outcomes.iter().map(|o| o.survival_time.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn patient_errors_name_the_patient() {
        let mut cohort = small(3);
        cohort.patients[2].r1 = f64::NAN;
        let err = run_trial(&cohort, "NT", &DoseConfig::default(), &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Patient { patient_id: 2, .. }), "{err}");
        assert!(err.is_numerical());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let cohort = small(3);
        assert!(run_trial(&cohort, "5X", &DoseConfig::default(), &IntegratorConfig::default()).is_err());
        let empty = Cohort { config: cohort.config.clone(), patients: vec![] };
        assert!(run_trial(&empty, "NT", &DoseConfig::default(), &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn equivalence_sets_contain_the_best() {
        let cohort = small(50);
        let integ = IntegratorConfig::default();
        let results: Vec<_> = ["NT", "2C", "10T"]
            .iter()
            .map(|p| run_trial(&cohort, p, &DoseConfig::default(), &integ).unwrap())
            .collect();
        let rep = protocol_equivalence_sets(&results, 0.0).unwrap();
        for (i, set) in rep.sets.iter().enumerate() {
            let best = set[0];
            for r in &results {
                assert!(r.outcomes[i].survival_time <= results[best].outcomes[i].survival_time);
            }
        }
        let wide = protocol_equivalence_sets(&results, 0.99).unwrap();
        assert!(wide.all_protocols >= rep.all_protocols);
        let other = small(49);
        let mismatched = run_trial(&other, "NT", &DoseConfig::default(), &integ).unwrap();
        assert!(protocol_equivalence_sets(&[results[0].clone(), mismatched], 0.05).is_err());
    }

    #[test]
    fn sweeps_reject_empty_grids() {
        let cohort = small(2);
        let d = DoseConfig::default();
        let i = IntegratorConfig::default();
        assert!(sweep_cart_dose(&cohort, &[], 2, &d, &i).is_err());
        assert!(sweep_cart_gap(&cohort, &[], 2, &d, &i).is_err());
        assert!(sweep_cart_split(&cohort, &[], &d, &i).is_err());
        assert!(sweep_tmz_cycles(&cohort.config, &[], &[0.5], &d, &i).is_err());
        assert!(sweep_rho4_max(&cohort.config, &[], "2C", &d, &i).is_err());
    }

    #[test]
    fn zero_cycles_is_untreated() {
        let cfg = CohortConfig { n_patients: 40, ..Default::default() };
        let d = DoseConfig::default();
        let i = IntegratorConfig::default();
        let s = sweep_tmz_cycles(&cfg, &[0], &[0.5], &d, &i).unwrap();
        let nt = run_trial(&Cohort::sample(&cfg).unwrap(), "NT", &d, &i).unwrap();
        assert_eq!(s[0].median, nt.median());
        assert_eq!(s[0].protocol, "NT");
    }

    #[test]
    fn tmz_helps_the_median_patient() {
        let p = median_patient(&CohortConfig::default()).unwrap();
        let i = IntegratorConfig::default();
        let d = DoseConfig::default();
        let (nt, _) = simulate_patient(&p, &[], &i).unwrap();
        let (t10, _) = simulate_patient(&p, &d.events(&ProtocolSpec::parse("10T").unwrap()), &i).unwrap();
        assert!(t10 > nt, "{t10} vs {nt}");
    }
}
