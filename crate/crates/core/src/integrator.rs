//! Dormand–Prince 5(4) integration of the scaled model with impulsive doses
//! and terminal events.
//!
//! Integration is halted exactly at every dose time, the impulse is applied
//! (`C += v` or `E += E0`, everything else continuous) and stepping resumes
//! from the updated state. No step ever spans a dose time. Fatal tumor size
//! and eradication are located by bisection on the dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    nondimensionalize, redimensionalize, PatientParams, ScaledState, ScaledSystem, SystemState,
};
use crate::protocol::{DoseEvent, DoseKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    /// Absolute tolerance in scaled (`/K`) units.
    pub abs_tol: f64,
    /// Largest step (days).
    pub max_step: f64,
    /// Accuracy of located stop times (days).
    pub event_time_tol: f64,
    /// End of the simulation window (days).
    pub horizon: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_step: 1.0,
            event_time_tol: 1e-3,
            horizon: 3650.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("integrator config: {what}")));
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.event_time_tol > 0.0 && self.event_time_tol <= 1e-3) {
            return bad("event_time_tol must lie in (0, 1e-3] days");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    /// Tumor burden reached the fatal size.
    FatalSize,
    HorizonReached,
    /// Tumor burden fell below one cell.
    Eradicated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub kind: StopKind,
    pub time: f64,
    pub state: SystemState,
}

/// One accepted step with its dense-output coefficients (scaled units).
#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    y0: [f64; 5],
    y1: [f64; 5],
    r3: [f64; 5],
    r4: [f64; 5],
    r5: [f64; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> [f64; 5] {
        if t == self.t0 {
            return self.y0;
        }
        if t == self.t1 {
            return self.y1;
        }
        let theta = (t - self.t0) / (self.t1 - self.t0);
        let theta1 = 1.0 - theta;
        std::array::from_fn(|i| {
            self.y0[i]
                + theta
                    * ((self.y1[i] - self.y0[i])
                        + theta1 * (self.r3[i] + theta * (self.r4[i] + theta1 * self.r5[i])))
        })
    }
}

/// An applied impulse with cell-unit states on both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedImpulse {
    pub time: f64,
    pub kind: DoseKind,
    pub before: SystemState,
    pub after: SystemState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Sparse trajectory: the step endpoints plus dense-output coefficients.
#[derive(Debug, Clone)]
pub struct Trajectory {
    k: f64,
    start: f64,
    end: f64,
    /// State at `start` after any impulse scheduled there.
    first: [f64; 5],
    last: [f64; 5],
    segments: Vec<Segment>,
    pub impulses: Vec<AppliedImpulse>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn span(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Step endpoint times (days) from the start to the stop time. The
    /// last step may overshoot a terminal event; its end is replaced by it.
    pub fn step_times(&self) -> Vec<f64> {
        let mut t = vec![self.start];
        t.extend(self.segments.iter().map(|s| s.t1).filter(|&x| x < self.end));
        if *t.last().unwrap() < self.end {
            t.push(self.end);
        }
        t
    }

    fn at(&self, t: f64) -> Result<[f64; 5]> {
        if !(t >= self.start && t <= self.end) {
            return Err(Error::OutOfSpan { t, start: self.start, end: self.end });
        }
        if self.segments.is_empty() {
            return Ok(self.first);
        }
        if t == self.end {
            return Ok(self.last);
        }
        // Last segment starting at or before t: at a dose time this picks
        // the post-impulse segment.
        let idx = self.segments.partition_point(|s| s.t0 <= t);
        Ok(self.segments[idx.saturating_sub(1)].eval(t))
    }
}

/// Interpolated cell-unit states at `times`; right-continuous at dose times.
pub fn dense_sample(trajectory: &Trajectory, times: &[f64]) -> Result<Vec<SystemState>> {
    times
        .iter()
        .map(|&t| {
            let y = trajectory.at(t)?;
            Ok(redimensionalize(&scaled(t, y), trajectory.k))
        })
        .collect()
}

fn scaled(t: f64, [x, y, z, w, e]: [f64; 5]) -> ScaledState {
    ScaledState { t, x, y, z, w, e }
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Step-size controller (PI, Hairer & Wanner defaults).
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;

struct Stepper<'a> {
    system: &'a ScaledSystem,
    cfg: &'a IntegratorConfig,
    stats: SolverStats,
    fac_old: f64,
}

struct StepOutcome {
    segment: Segment,
    f1: [f64; 5],
}

impl<'a> Stepper<'a> {
    fn f(&mut self, y: &[f64; 5]) -> [f64; 5] {
        let mut dy = [0.0; 5];
        self.system.eval(y, &mut dy);
        self.stats.rhs_evals += 1;
        dy
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.cfg.abs_tol + self.cfg.rel_tol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self, y0: &[f64; 5], f0: &[f64; 5], hmax: f64) -> f64 {
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..5 {
            let sk = self.scale(y0[i], 0.0);
            dnf += (f0[i] / sk).powi(2);
            dny += (y0[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(hmax);
        let y1: [f64; 5] = std::array::from_fn(|i| y0[i] + h * f0[i]);
        let f1 = self.f(&y1);
        let mut der2 = 0.0;
        for i in 0..5 {
            der2 += ((f1[i] - f0[i]) / self.scale(y0[i], 0.0)).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        (100.0 * h).min(h1).min(hmax)
    }

    /// Attempts one step of size `h`; returns the error norm and the outcome.
    fn attempt(&mut self, t: f64, y: &[f64; 5], k1: &[f64; 5], h: f64) -> (f64, StepOutcome) {
        let mut tmp = [0.0; 5];
        macro_rules! stage {
            ($($c:expr, $k:expr);+) => {{
                for i in 0..5 {
                    tmp[i] = y[i] + h * (0.0 $(+ $c * $k[i])+);
                }
                tmp
            }};
        }
        let k2 = self.f(&stage!(A21, k1));
        let k3 = self.f(&stage!(A31, k1; A32, k2));
        let k4 = self.f(&stage!(A41, k1; A42, k2; A43, k3));
        let k5 = self.f(&stage!(A51, k1; A52, k2; A53, k3; A54, k4));
        let k6 = self.f(&stage!(A61, k1; A62, k2; A63, k3; A64, k4; A65, k5));
        let y1 = stage!(A71, k1; A73, k3; A74, k4; A75, k5; A76, k6);
        let k7 = self.f(&y1);
        let mut err = 0.0;
        for i in 0..5 {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err += (e / self.scale(y[i], y1[i])).powi(2);
        }
        let err = (err / 5.0).sqrt();
        let mut r3 = [0.0; 5];
        let mut r4 = [0.0; 5];
        let mut r5 = [0.0; 5];
        for i in 0..5 {
            let diff = y1[i] - y[i];
            let bspl = h * k1[i] - diff;
            r3[i] = bspl;
            r4[i] = diff - h * k7[i] - bspl;
            r5[i] = h
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let t1 = t + h;
        (err, StepOutcome { segment: Segment { t0: t, t1, y0: *y, y1, r3, r4, r5 }, f1: k7 })
    }
}

/// Terminal conditions in scaled units.
#[derive(Clone, Copy)]
struct Terminal {
    fatal: f64,
    one_cell: f64,
}

impl Terminal {
    fn of(p: &PatientParams) -> Self {
        Terminal { fatal: p.fatal_fraction(), one_cell: 1.0 / p.k }
    }
}

fn burden(y: &[f64; 5]) -> f64 {
    y[0] + y[1] + y[2]
}

fn bisect(seg: &Segment, level: f64, rising: bool, tol: f64) -> f64 {
    let (mut lo, mut hi) = (seg.t0, seg.t1);
    let crossed = |t: f64| {
        let b = burden(&seg.eval(t));
        if rising {
            b >= level
        } else {
            b < level
        }
    };
    // Bracket well inside the requested tolerance.
    let width = tol * 1e-3;
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if crossed(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Observer for accepted steps; used to keep or drop the dense output.
trait Recorder {
    fn segment(&mut self, seg: &Segment);
    fn impulse(&mut self, imp: AppliedImpulse);
}

struct Discard;

impl Recorder for Discard {
    fn segment(&mut self, _: &Segment) {}
    fn impulse(&mut self, _: AppliedImpulse) {}
}

struct Keep {
    segments: Vec<Segment>,
    impulses: Vec<AppliedImpulse>,
}

impl Recorder for Keep {
    fn segment(&mut self, seg: &Segment) {
        self.segments.push(*seg);
    }
    fn impulse(&mut self, imp: AppliedImpulse) {
        self.impulses.push(imp);
    }
}

fn apply_impulse(y: &mut [f64; 5], kind: &DoseKind, k: f64) {
    match *kind {
        DoseKind::Tmz { e0 } => y[4] += e0,
        DoseKind::CarT { v } => y[3] += v / k,
    }
}

fn check_events(events: &[DoseEvent], t0: f64) -> Result<()> {
    let mut current = t0;
    for (index, ev) in events.iter().enumerate() {
        if !ev.time.is_finite() || ev.time < current {
            return Err(Error::UnsortedEvents { index, t: ev.time, current });
        }
        current = ev.time;
    }
    Ok(())
}

struct RunResult {
    stop: StopEvent,
    first: [f64; 5],
    last: [f64; 5],
    stats: SolverStats,
}

fn run<R: Recorder>(
    initial: &SystemState,
    params: &PatientParams,
    system: &ScaledSystem,
    events: &[DoseEvent],
    cfg: &IntegratorConfig,
    term: Terminal,
    rec: &mut R,
) -> Result<RunResult> {
    cfg.validate()?;
    check_events(events, initial.t)?;
    let k = params.k;
    let horizon = initial.t + cfg.horizon;
    let to_cells = |t: f64, y: [f64; 5]| redimensionalize(&scaled(t, y), k);

    let mut t = initial.t;
    let mut y = nondimensionalize(initial, k).components();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t, state: initial.components() });
    }
    let mut stepper = Stepper { system, cfg, stats: SolverStats::default(), fac_old: 1e-4 };
    let mut next_event = 0;
    let mut first = None;

    let finish = |kind, time, y: [f64; 5], first: Option<[f64; 5]>, stats| RunResult {
        stop: StopEvent { kind, time, state: to_cells(time, y) },
        first: first.unwrap_or(y),
        last: y,
        stats,
    };

    loop {
        // Impulses due now.
        while next_event < events.len() && events[next_event].time <= t {
            let ev = &events[next_event];
            let before = y;
            apply_impulse(&mut y, &ev.kind, k);
            rec.impulse(AppliedImpulse {
                time: t,
                kind: ev.kind,
                before: to_cells(t, before),
                after: to_cells(t, y),
            });
            next_event += 1;
        }
        if first.is_none() {
            first = Some(y);
            let b = burden(&y);
            if b >= term.fatal {
                return Ok(finish(StopKind::FatalSize, t, y, first, stepper.stats));
            }
            if b < term.one_cell {
                return Ok(finish(StopKind::Eradicated, t, y, first, stepper.stats));
            }
        }
        if t >= horizon {
            return Ok(finish(StopKind::HorizonReached, t, y, first, stepper.stats));
        }
        let stop_at = match events.get(next_event) {
            Some(ev) if ev.time < horizon => ev.time,
            _ => horizon,
        };

        // Integrate the smooth stretch [t, stop_at].
        let mut f0 = stepper.f(&y);
        let mut h = stepper.initial_step(&y, &f0, cfg.max_step.min(stop_at - t));
        let mut last_rejected = false;
        while t < stop_at {
            let remaining = stop_at - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let h_try = if landing { remaining } else { h };
            if h_try <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t, h: h_try, state: to_cells(t, y).components() });
            }
            let (err, out) = stepper.attempt(t, &y, &f0, h_try);
            if !err.is_finite() || out.segment.y1.iter().any(|v| !v.is_finite()) {
                if !err.is_finite() && h_try > 1e-10 {
                    h = h_try * FAC_MIN;
                    last_rejected = true;
                    stepper.stats.rejected += 1;
                    continue;
                }
                return Err(Error::NonFiniteState { t, state: to_cells(t, y).components() });
            }
            let fac11 = err.powf(EXPO);
            if err <= 1.0 {
                let fac = (fac11 / stepper.fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h_try / fac;
                stepper.fac_old = err.max(1e-4);
                if last_rejected {
                    h_new = h_new.min(h_try);
                }
                last_rejected = false;
                stepper.stats.accepted += 1;
                let mut seg = out.segment;
                if landing {
                    seg.t1 = stop_at;
                }
                rec.segment(&seg);

                let b0 = burden(&seg.y0);
                let b1 = burden(&seg.y1);
                if b0 < term.fatal && b1 >= term.fatal {
                    let tc = bisect(&seg, term.fatal, true, cfg.event_time_tol);
                    return Ok(finish(StopKind::FatalSize, tc, seg.eval(tc), first, stepper.stats));
                }
                if b1 < term.one_cell {
                    let tc = bisect(&seg, term.one_cell, false, cfg.event_time_tol);
                    return Ok(finish(StopKind::Eradicated, tc, seg.eval(tc), first, stepper.stats));
                }
                t = seg.t1;
                y = seg.y1;
                f0 = out.f1;
                h = h_new.min(cfg.max_step);
            } else {
                h = h_try / (fac11 / SAFETY).min(1.0 / FAC_MIN);
                last_rejected = true;
                stepper.stats.rejected += 1;
            }
        }
    }
}

/// Integrates from `initial` through the dose schedule until the first stop
/// event, keeping the dense trajectory.
pub fn integrate(
    initial: &SystemState,
    params: &PatientParams,
    events: &[DoseEvent],
    config: &IntegratorConfig,
) -> Result<(Trajectory, StopEvent)> {
    let system = ScaledSystem::new(params);
    integrate_system(initial, params, &system, events, config)
}

/// Like [`integrate`] but only reports the stop event (no trajectory storage).
pub fn integrate_to_stop(
    initial: &SystemState,
    params: &PatientParams,
    events: &[DoseEvent],
    config: &IntegratorConfig,
) -> Result<StopEvent> {
    let system = ScaledSystem::new(params);
    Ok(run(initial, params, &system, events, config, Terminal::of(params), &mut Discard)?.stop)
}

/// Like [`integrate`] but without the fatal-size and eradication stops: runs
/// to the horizon. Used to study the long-time dynamics (P1 attraction,
/// conserved quantities).
pub fn integrate_unbounded(
    initial: &SystemState,
    params: &PatientParams,
    events: &[DoseEvent],
    config: &IntegratorConfig,
) -> Result<(Trajectory, StopEvent)> {
    let system = ScaledSystem::new(params);
    let free = Terminal { fatal: f64::INFINITY, one_cell: f64::NEG_INFINITY };
    collect(initial, params, &system, events, config, free)
}

/// Integrates the constant-treatment system (`V` cells/day of CAR-T, `E0`
/// per day of TMZ) with no impulses.
pub fn integrate_constant_treatment(
    initial: &SystemState,
    params: &PatientParams,
    v: f64,
    e0: f64,
    config: &IntegratorConfig,
) -> Result<(Trajectory, StopEvent)> {
    if !(v >= 0.0 && (0.0..=1.0).contains(&e0)) {
        return Err(Error::InvalidInput(format!("constant treatment needs V >= 0 and E0 in [0,1], got V={v}, E0={e0}")));
    }
    let system = ScaledSystem::with_constant_treatment(params, v, e0);
    integrate_system(initial, params, &system, &[], config)
}

fn integrate_system(
    initial: &SystemState,
    params: &PatientParams,
    system: &ScaledSystem,
    events: &[DoseEvent],
    config: &IntegratorConfig,
) -> Result<(Trajectory, StopEvent)> {
    collect(initial, params, system, events, config, Terminal::of(params))
}

fn collect(
    initial: &SystemState,
    params: &PatientParams,
    system: &ScaledSystem,
    events: &[DoseEvent],
    config: &IntegratorConfig,
    term: Terminal,
) -> Result<(Trajectory, StopEvent)> {
    let mut keep = Keep { segments: Vec::new(), impulses: Vec::new() };
    let out = run(initial, params, system, events, config, term, &mut keep)?;
    let traj = Trajectory {
        k: params.k,
        start: initial.t,
        end: out.stop.time,
        first: out.first,
        last: out.last,
        segments: keep.segments,
        impulses: keep.impulses,
        stats: out.stats,
    };
    Ok((traj, out.stop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ProtocolSpec, Schedule};

    fn mvp() -> PatientParams {
        PatientParams {
            r1: 0.013,
            r2: 0.0065,
            k: 5e12,
            alpha1: 0.55,
            alpha2: 2.5e-10,
            alpha3: 0.55,
            eps1: 0.35,
            rho1: (1.0 / 30.0 + 1.0 / 7.0) / 2.0,
            rho2: 0.55,
            rho3: 0.55,
            rho4: 0.055,
            g1: 1e10,
            g2: 1e10,
            g3: 2e9,
            mu: 8.32,
            delta1: 0.3,
            delta2: 0.0032,
            t0: 3e10,
        }
    }

    #[test]
    fn resistant_plane_is_attracting() {
        let p = mvp();
        let init = SystemState { t: 0.0, s: 0.1e12, rc: 0.2e12, re: 0.1e12, c: 0.0, e: 0.0 };
        let cfg = IntegratorConfig { horizon: 3000.0, ..Default::default() };
        let (_, stop) = integrate_unbounded(&init, &p, &[], &cfg).unwrap();
        assert_eq!(stop.kind, StopKind::HorizonReached);
        let n = stop.state.tumor_burden();
        assert!((n / p.k - 1.0).abs() < 1e-3, "{n}");
    }

    #[test]
    fn untreated_mvp_dies() {
        let p = mvp();
        let stop = integrate_to_stop(&p.initial_state(), &p, &[], &IntegratorConfig::default()).unwrap();
        assert_eq!(stop.kind, StopKind::FatalSize);
        assert!((stop.state.tumor_burden() / 1e12 - 1.0).abs() < 1e-6);
        assert!(stop.time > 100.0 && stop.time < 1000.0, "{}", stop.time);
    }

    #[test]
    fn horizon_stop() {
        let p = PatientParams { r1: 1e-4, r2: 1e-4, ..mvp() };
        let cfg = IntegratorConfig { horizon: 50.0, ..Default::default() };
        let stop = integrate_to_stop(&p.initial_state(), &p, &[], &cfg).unwrap();
        assert_eq!(stop.kind, StopKind::HorizonReached);
        assert_eq!(stop.time, 50.0);
    }

    #[test]
    fn tmz_decay_is_exponential() {
        let p = mvp();
        let ev = [DoseEvent { time: 0.0, kind: DoseKind::Tmz { e0: 1.0 } }];
        let cfg = IntegratorConfig { horizon: 3.0, ..Default::default() };
        let (traj, _) = integrate(&p.initial_state(), &p, &ev, &cfg).unwrap();
        let times: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let samples = dense_sample(&traj, &times).unwrap();
        for (t, s) in times.iter().zip(&samples) {
            let exact = (-p.mu * t).exp();
            // Past day 1, E nears the absolute tolerance floor.
            let tol = if *t <= 1.0 { 1e-6 * exact } else { 1e-6 * exact + 1e-11 };
            assert!((s.e - exact).abs() <= tol, "t={t}: {} vs {exact}", s.e);
        }
        assert!((samples[10].e / 2.4367e-4 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn impulses_are_exact_and_steps_never_span_doses() {
        let p = mvp();
        let schedule = Schedule { dose_per_injection: 5e8, ..Default::default() };
        let ev = ProtocolSpec::parse("1C2T1C").unwrap().expand(&schedule);
        let cfg = IntegratorConfig { horizon: 200.0, ..Default::default() };
        let (traj, _) = integrate(&p.initial_state(), &p, &ev, &cfg).unwrap();
        assert_eq!(traj.impulses.len(), ev.len());
        for imp in &traj.impulses {
            let b = imp.before.components();
            let a = imp.after.components();
            match imp.kind {
                DoseKind::CarT { v } => {
                    assert!(((a[3] - b[3]) - v).abs() <= 1e-15 * a[3].max(v) * 4.0);
                    assert_eq!(a[4], b[4]);
                }
                DoseKind::Tmz { e0 } => {
                    assert!((a[4] - b[4] - e0).abs() < 1e-15);
                    assert_eq!(a[3], b[3]);
                }
            }
            assert_eq!(&a[..3], &b[..3]);
        }
        for seg in &traj.segments {
            for e in &ev {
                assert!(!(seg.t0 < e.time && e.time < seg.t1), "step {}..{} spans {}", seg.t0, seg.t1, e.time);
            }
        }
    }

    #[test]
    fn dense_sampling_contract() {
        let p = mvp();
        let cfg = IntegratorConfig { horizon: 30.0, ..Default::default() };
        let ev = ProtocolSpec::parse("1T").unwrap().expand(&Schedule::default());
        let (traj, stop) = integrate(&p.initial_state(), &p, &ev, &cfg).unwrap();
        let ends = traj.step_times();
        let at_ends = dense_sample(&traj, &ends[1..]).unwrap();
        for (seg, s) in traj.segments.iter().zip(&at_ends) {
            let cells = redimensionalize(&scaled(seg.t1, seg.y0), p.k);
            let _ = cells;
            let stored = redimensionalize(&scaled(seg.t1, seg.y1), p.k);
            // A later segment may start at the same time after an impulse.
            if !traj.segments.iter().any(|o| o.t0 == seg.t1) {
                assert_eq!(stored, *s);
            }
        }
        assert_eq!(dense_sample(&traj, &[30.0]).unwrap()[0], stop.state);
        assert!(dense_sample(&traj, &[-1.0]).is_err());
        assert!(dense_sample(&traj, &[30.5]).is_err());
        let times: Vec<f64> = (0..300).map(|i| i as f64 * 0.1).collect();
        let out = dense_sample(&traj, &times).unwrap();
        assert!(out.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn rejects_unsorted_events() {
        let p = mvp();
        let ev = [
            DoseEvent { time: 5.0, kind: DoseKind::Tmz { e0: 1.0 } },
            DoseEvent { time: 1.0, kind: DoseKind::Tmz { e0: 1.0 } },
        ];
        let err = integrate_to_stop(&p.initial_state(), &p, &ev, &IntegratorConfig::default());
        assert!(matches!(err, Err(Error::UnsortedEvents { index: 1, .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let p = mvp();
        let cfg = IntegratorConfig { event_time_tol: 0.1, ..Default::default() };
        assert!(integrate_to_stop(&p.initial_state(), &p, &[], &cfg).is_err());
    }

    #[test]
    fn eradication_fires_below_one_cell() {
        let p = PatientParams { t0: 1e3, delta2: 0.0, ..mvp() };
        let cfg = IntegratorConfig { horizon: 3650.0, ..Default::default() };
        let v = 1e8;
        let (_, stop) = integrate_constant_treatment(&p.initial_state(), &p, v, 1.0, &cfg).unwrap();
        assert_eq!(stop.kind, StopKind::Eradicated);
        assert!((stop.state.tumor_burden() - 1.0).abs() < 1e-3);
    }
}
