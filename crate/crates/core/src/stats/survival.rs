//! Kaplan–Meier product-limit estimation and the two-group log-rank test.

use serde::Serialize;

use super::special::{chi_square_sf, floor_p};

/// One right-censored survival observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub time: f64,
    pub censored: bool,
}

impl Observation {
    pub fn event(time: f64) -> Self {
        Observation { time, censored: false }
    }

    pub fn censored(time: f64) -> Self {
        Observation { time, censored: true }
    }
}

/// Step function of the product-limit estimator. Row `i` describes the
/// distinct observed time `times[i]`; `survival[i]` is the value from that
/// time on and `at_risk[i]` the risk set just before it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub n: usize,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub censored: Vec<usize>,
}

/// Sorts by time, events ahead of censorings at equal times.
fn sorted(obs: &[Observation]) -> Vec<Observation> {
    let mut v = obs.to_vec();
    v.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.censored.cmp(&b.censored)));
    v
}

pub fn kaplan_meier(obs: &[Observation]) -> SurvivalCurve {
    let obs = sorted(obs);
    let n = obs.len();
    let mut curve = SurvivalCurve {
        n,
        times: vec![],
        survival: vec![],
        at_risk: vec![],
        events: vec![],
        censored: vec![],
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = obs[i].time;
        let at_risk = n - i;
        let (mut d, mut c) = (0, 0);
        while i < n && obs[i].time == t {
            if obs[i].censored {
                c += 1;
            } else {
                d += 1;
            }
            i += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
        }
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(at_risk);
        curve.events.push(d);
        curve.censored.push(c);
    }
    curve
}

impl SurvivalCurve {
    /// S(t), right-continuous.
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    /// First time with S(t) ≤ 0.5; `None` when the median is not reached.
    pub fn median(&self) -> Option<f64> {
        self.survival.iter().position(|&s| s <= 0.5).map(|i| self.times[i])
    }

    /// Number still at risk at each tick (observed time ≥ tick).
    pub fn risk_table(&self, ticks: &[f64]) -> Vec<(f64, usize)> {
        ticks
            .iter()
            .map(|&tick| {
                let idx = self.times.partition_point(|&x| x < tick);
                let left = if idx < self.times.len() { self.at_risk[idx] } else { 0 };
                (tick, left)
            })
            .collect()
    }
}

/// Default risk-table ticks: 0, 100, 200, ... up to `end`.
pub fn default_ticks(end: f64) -> Vec<f64> {
    (0..).map(|i| i as f64 * 100.0).take_while(|&t| t <= end).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRank {
    pub statistic: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Two-group log-rank test (1 degree of freedom).
pub fn log_rank(a: &[Observation], b: &[Observation]) -> LogRank {
    let mut all: Vec<(Observation, bool)> = a
        .iter()
        .map(|&o| (o, true))
        .chain(b.iter().map(|&o| (o, false)))
        .collect();
    all.sort_by(|x, y| x.0.time.total_cmp(&y.0.time));
    let (mut n_a, mut n) = (a.len() as f64, all.len() as f64);
    let (mut o_a, mut e_a, mut var) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0.time;
        let (mut d, mut d_a, mut leave, mut leave_a) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0.time == t {
            let (o, in_a) = all[i];
            leave += 1.0;
            if in_a {
                leave_a += 1.0;
            }
            if !o.censored {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            let frac = n_a / n;
            o_a += d_a;
            e_a += d * frac;
            if n > 1.0 {
                var += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        n_a -= leave_a;
    }
    let statistic = if var > 0.0 { (o_a - e_a).powi(2) / var } else { 0.0 };
    LogRank {
        statistic,
        p_value: floor_p(chi_square_sf(statistic, 1.0)),
        observed_a: o_a,
        expected_a: e_a,
    }
}
