//! Five-compartment model of a glioma under temozolomide (TMZ) and CAR-T
//! cell therapy.
//!
//! Compartments are sensitive tumor cells `S`, CAR-T-resistant cells `RC`,
//! TMZ-resistant cells `RE`, CAR-T cells `C` (all in cells) and the
//! normalized TMZ efficacy `E`. Between doses the system has no source
//! terms; doses enter as impulses (see [`crate::integrator`]). The
//! constant-infusion variant adds `V` to `dC/dt` and `E0` to `dE/dt`.
//!
//! Public functions work in cell counts. Integration runs on the scaled
//! system ([`ScaledSystem`]) where every cell count is divided by `K`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tumor burden at which a virtual patient is considered dead (cells).
pub const FATAL_BURDEN_CELLS: f64 = 1e12;

/// Compartment labels in state-vector order.
pub const COMPARTMENTS: [&str; 5] = ["S", "RC", "RE", "C", "E"];

/// One virtual patient's full parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    /// Sensitive growth rate (day⁻¹).
    pub r1: f64,
    /// TMZ-resistant growth rate (day⁻¹).
    pub r2: f64,
    /// Carrying capacity (cells).
    #[serde(rename = "K")]
    pub k: f64,
    /// TMZ kill rate against tumor (day⁻¹).
    pub alpha1: f64,
    /// CAR-T kill rate (day⁻¹·cell⁻¹).
    pub alpha2: f64,
    /// TMZ kill rate against CAR-T cells (day⁻¹).
    pub alpha3: f64,
    /// Chemo-sensitive to chemo-resistant transition rate (day⁻¹).
    pub eps1: f64,
    /// CAR-T death/inactivation rate (day⁻¹).
    pub rho1: f64,
    /// CAR-T mitotic stimulation by sensitive cells (day⁻¹).
    pub rho2: f64,
    /// CAR-T mitotic stimulation by TMZ-resistant cells (day⁻¹).
    pub rho3: f64,
    /// Tumor inactivation rate of CAR-T cells (day⁻¹).
    pub rho4: f64,
    /// Half-saturation of stimulation by `S` (cells).
    pub g1: f64,
    /// Half-saturation of stimulation by `RE` (cells).
    pub g2: f64,
    /// Half-saturation of tumor inactivation (cells).
    pub g3: f64,
    /// TMZ clearance rate (day⁻¹).
    pub mu: f64,
    /// Initial CAR-T-resistant fraction.
    pub delta1: f64,
    /// Initial TMZ-resistant fraction.
    pub delta2: f64,
    /// Initial total tumor burden (cells).
    #[serde(rename = "T0")]
    pub t0: f64,
}

impl PatientParams {
    /// Parameter names in canonical (CSV column) order.
    pub const NAMES: [&'static str; 18] = [
        "r1", "r2", "K", "alpha1", "alpha2", "alpha3", "eps1", "rho1", "rho2", "rho3", "rho4",
        "g1", "g2", "g3", "mu", "delta1", "delta2", "T0",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "r1" => self.r1,
            "r2" => self.r2,
            "K" => self.k,
            "alpha1" => self.alpha1,
            "alpha2" => self.alpha2,
            "alpha3" => self.alpha3,
            "eps1" => self.eps1,
            "rho1" => self.rho1,
            "rho2" => self.rho2,
            "rho3" => self.rho3,
            "rho4" => self.rho4,
            "g1" => self.g1,
            "g2" => self.g2,
            "g3" => self.g3,
            "mu" => self.mu,
            "delta1" => self.delta1,
            "delta2" => self.delta2,
            "T0" => self.t0,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "r1" => &mut self.r1,
            "r2" => &mut self.r2,
            "K" => &mut self.k,
            "alpha1" => &mut self.alpha1,
            "alpha2" => &mut self.alpha2,
            "alpha3" => &mut self.alpha3,
            "eps1" => &mut self.eps1,
            "rho1" => &mut self.rho1,
            "rho2" => &mut self.rho2,
            "rho3" => &mut self.rho3,
            "rho4" => &mut self.rho4,
            "g1" => &mut self.g1,
            "g2" => &mut self.g2,
            "g3" => &mut self.g3,
            "mu" => &mut self.mu,
            "delta1" => &mut self.delta1,
            "delta2" => &mut self.delta2,
            "T0" => &mut self.t0,
            _ => {
                return Err(Error::InvalidParameter {
                    name: name.to_string(),
                    reason: "unknown parameter".into(),
                })
            }
        };
        *slot = value;
        Ok(())
    }

    pub fn values(&self) -> [f64; 18] {
        Self::NAMES.map(|n| self.get(n).expect("canonical name"))
    }

    /// Checks the admissibility invariants: finite, strictly positive rates
    /// and constants, resistant fractions in `[0, 1)` and a starting burden
    /// below the fatal size.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::NAMES.iter().zip(self.values()) {
            if !value.is_finite() {
                return Err(invalid(name, format!("not finite ({value})")));
            }
            let is_fraction = matches!(*name, "delta1" | "delta2");
            if is_fraction && value < 0.0 {
                return Err(invalid(name, format!("must be non-negative, got {value}")));
            }
            if !is_fraction && value <= 0.0 {
                return Err(invalid(name, format!("must be strictly positive, got {value}")));
            }
        }
        if self.delta1 + self.delta2 >= 1.0 {
            return Err(invalid(
                "delta1+delta2",
                format!("must be < 1, got {}", self.delta1 + self.delta2),
            ));
        }
        if self.t0 >= self.k / 5.0 {
            return Err(invalid("T0", format!("must be below K/5 = {:e}", self.k / 5.0)));
        }
        Ok(())
    }

    /// Initial state `S = T0(1-δ1-δ2)`, `RC = δ1 T0`, `RE = δ2 T0`, no CAR-T, no drug.
    pub fn initial_state(&self) -> SystemState {
        SystemState {
            t: 0.0,
            s: self.t0 * (1.0 - self.delta1 - self.delta2),
            rc: self.delta1 * self.t0,
            re: self.delta2 * self.t0,
            c: 0.0,
            e: 0.0,
        }
    }

    /// Burden at which the patient dies, in scaled units.
    pub fn fatal_fraction(&self) -> f64 {
        FATAL_BURDEN_CELLS / self.k
    }
}

fn invalid(name: &str, reason: String) -> Error {
    Error::InvalidParameter { name: name.to_string(), reason }
}

/// Model state in cell counts at time `t` (days).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "RC")]
    pub rc: f64,
    #[serde(rename = "RE")]
    pub re: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

impl SystemState {
    pub fn new(t: f64, [s, rc, re, c, e]: [f64; 5]) -> Self {
        SystemState { t, s, rc, re, c, e }
    }

    pub fn components(&self) -> [f64; 5] {
        [self.s, self.rc, self.re, self.c, self.e]
    }

    pub fn tumor_burden(&self) -> f64 {
        self.s + self.rc + self.re
    }

    fn check_finite(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::NonFinite { component: "t", value: self.t });
        }
        for (component, value) in COMPARTMENTS.iter().zip(self.components()) {
            if !value.is_finite() {
                return Err(Error::NonFinite { component, value });
            }
        }
        Ok(())
    }
}

/// State in scaled units: `x = S/K`, `y = RC/K`, `z = RE/K`, `w = C/K`; `E` unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub e: f64,
}

impl ScaledState {
    pub fn components(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.w, self.e]
    }
}

pub fn nondimensionalize(state: &SystemState, k: f64) -> ScaledState {
    ScaledState {
        t: state.t,
        x: state.s / k,
        y: state.rc / k,
        z: state.re / k,
        w: state.c / k,
        e: state.e,
    }
}

pub fn redimensionalize(scaled: &ScaledState, k: f64) -> SystemState {
    SystemState {
        t: scaled.t,
        s: scaled.x * k,
        rc: scaled.y * k,
        re: scaled.z * k,
        c: scaled.w * k,
        e: scaled.e,
    }
}

/// Right-hand side between doses, in cells per day.
pub fn rhs(state: &SystemState, p: &PatientParams) -> Result<[f64; 5]> {
    state.check_finite()?;
    Ok(rhs_cells(state, p, 0.0, 0.0))
}

/// Right-hand side with TMZ and CAR-T applied continuously: `V` cells/day of
/// CAR-T and `E0` efficacy units/day of TMZ.
pub fn rhs_constant_treatment(
    state: &SystemState,
    p: &PatientParams,
    v: f64,
    e0: f64,
) -> Result<[f64; 5]> {
    state.check_finite()?;
    check_infusion(v, e0)?;
    Ok(rhs_cells(state, p, v, e0))
}

fn check_infusion(v: f64, e0: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::InvalidInput(format!("infusion rate V must be >= 0, got {v}")));
    }
    if !(0.0..=1.0).contains(&e0) {
        return Err(Error::InvalidInput(format!("E0 must lie in [0, 1], got {e0}")));
    }
    Ok(())
}

fn rhs_cells(st: &SystemState, p: &PatientParams, v: f64, e0: f64) -> [f64; 5] {
    let SystemState { s, rc, re, c, e, .. } = *st;
    let total = s + rc + re;
    let crowding = 1.0 - total / p.k;
    let ds = p.r1 * s * crowding - p.alpha1 * e * s - p.eps1 * e * s - p.alpha2 * c * s;
    let drc = p.r1 * rc * crowding - p.alpha1 * e * rc - p.eps1 * e * rc;
    let dre = p.r2 * re * crowding - p.alpha2 * c * re + p.eps1 * (s + rc) * e;
    let dc = v - p.rho1 * c + p.rho2 * s * c / (p.g1 + s) + p.rho3 * re * c / (p.g2 + re)
        - p.rho4 * total * c / (p.g3 + c)
        - p.alpha3 * e * c;
    let de = e0 - p.mu * e;
    [ds, drc, dre, dc, de]
}

/// The model in scaled variables with precomputed coefficients; this is what
/// the integrator evaluates.
#[derive(Debug, Clone, Copy)]
pub struct ScaledSystem {
    r1: f64,
    r2: f64,
    chemo_loss: f64,
    eps1: f64,
    car_kill: f64,
    rho1: f64,
    rho2: f64,
    rho3: f64,
    rho4: f64,
    g1: f64,
    g2: f64,
    g3: f64,
    alpha3: f64,
    mu: f64,
    infusion: f64,
    drug_source: f64,
}

impl ScaledSystem {
    pub fn new(p: &PatientParams) -> Self {
        ScaledSystem {
            r1: p.r1,
            r2: p.r2,
            chemo_loss: p.alpha1 + p.eps1,
            eps1: p.eps1,
            car_kill: p.alpha2 * p.k,
            rho1: p.rho1,
            rho2: p.rho2,
            rho3: p.rho3,
            rho4: p.rho4,
            g1: p.g1 / p.k,
            g2: p.g2 / p.k,
            g3: p.g3 / p.k,
            alpha3: p.alpha3,
            mu: p.mu,
            infusion: 0.0,
            drug_source: 0.0,
        }
    }

    /// Constant-treatment variant; `v` in cells/day.
    pub fn with_constant_treatment(p: &PatientParams, v: f64, e0: f64) -> Self {
        ScaledSystem { infusion: v / p.k, drug_source: e0, ..Self::new(p) }
    }

    #[inline]
    pub fn eval(&self, y: &[f64; 5], dy: &mut [f64; 5]) {
        let [x, yc, z, w, e] = *y;
        let total = x + yc + z;
        let crowding = 1.0 - total;
        let chemo = self.chemo_loss * e;
        let car = self.car_kill * w;
        dy[0] = x * (self.r1 * crowding - chemo - car);
        dy[1] = yc * (self.r1 * crowding - chemo);
        dy[2] = z * (self.r2 * crowding - car) + self.eps1 * (x + yc) * e;
        dy[3] = self.infusion
            + w * (-self.rho1 + self.rho2 * x / (self.g1 + x) + self.rho3 * z / (self.g2 + z)
                - self.rho4 * total / (self.g3 + w)
                - self.alpha3 * e);
        dy[4] = self.drug_source - self.mu * e;
    }
}

/// Eigen-structure of the tumor-free equilibrium under constant treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EradicationReport {
    /// `λ1..λ5` at the eradication equilibrium (day⁻¹).
    pub lambda: [f64; 5],
    /// Smallest continuous CAR-T infusion that stabilizes eradication (cells/day).
    pub v_critical: f64,
    /// Smallest `α1 + ε1` that stabilizes eradication (day⁻¹).
    pub chemo_threshold: f64,
    pub stable: bool,
    /// CAR-T level at the equilibrium (cells).
    pub c_equilibrium: f64,
    /// Drug efficacy at the equilibrium.
    pub e_equilibrium: f64,
}

/// Closed-form stability analysis of the eradication equilibrium
/// `(0, 0, 0, μV/(α3E0 + ρ1μ), E0/μ)`.
pub fn eradication_analysis(p: &PatientParams, v: f64, e0: f64) -> Result<EradicationReport> {
    check_infusion(v, e0)?;
    if e0 <= 0.0 {
        return Err(Error::Undefined("eradication thresholds require E0 > 0".into()));
    }
    let car_loss = p.alpha3 * e0 + p.rho1 * p.mu;
    let c_eq = p.mu * v / car_loss;
    let car_pressure = p.alpha2 * c_eq;
    let l3 = p.r1 - (p.alpha1 + p.eps1) * e0 / p.mu;
    let lambda = [-p.mu, -car_loss / p.mu, l3, l3 - car_pressure, p.r2 - car_pressure];
    let v_critical = p.r2 * car_loss / (p.mu * p.alpha2);
    let chemo_threshold = p.r1 * p.mu / e0;
    let stable = v > v_critical && e0 * (p.alpha1 + p.eps1) > p.r1 * p.mu;
    Ok(EradicationReport {
        lambda,
        v_critical,
        chemo_threshold,
        stable,
        c_equilibrium: c_eq,
        e_equilibrium: e0 / p.mu,
    })
}

/// The eradication equilibrium as a state.
pub fn eradication_equilibrium(p: &PatientParams, v: f64, e0: f64) -> SystemState {
    let c = p.mu * v / (p.alpha3 * e0 + p.rho1 * p.mu);
    SystemState { t: 0.0, s: 0.0, rc: 0.0, re: 0.0, c, e: e0 / p.mu }
}

/// Jacobian of the scaled system by central differences. The scaling is a
/// diagonal similarity, so eigenvalues are those of the cell-unit system.
pub fn jacobian(
    state: &SystemState,
    p: &PatientParams,
    constant_treatment: Option<(f64, f64)>,
) -> Result<[[f64; 5]; 5]> {
    state.check_finite()?;
    let system = match constant_treatment {
        Some((v, e0)) => {
            check_infusion(v, e0)?;
            ScaledSystem::with_constant_treatment(p, v, e0)
        }
        None => ScaledSystem::new(p),
    };
    let base = nondimensionalize(state, p.k).components();
    let one_cell = 1e-3 / p.k;
    let mut jac = [[0.0; 5]; 5];
    for j in 0..5 {
        let h = if j == 4 { 1e-9 } else { (1e-6 * base[j].abs()).max(one_cell) };
        let mut plus = base;
        let mut minus = base;
        plus[j] += h;
        minus[j] -= h;
        let (mut fp, mut fm) = ([0.0; 5], [0.0; 5]);
        system.eval(&plus, &mut fp);
        system.eval(&minus, &mut fm);
        let width = plus[j] - minus[j];
        for i in 0..5 {
            jac[i][j] = (fp[i] - fm[i]) / width;
        }
    }
    Ok(jac)
}

/// Eigenvalues of the Jacobian at `state`, sorted by descending real part.
pub fn jacobian_spectrum(
    state: &SystemState,
    p: &PatientParams,
    constant_treatment: Option<(f64, f64)>,
) -> Result<Vec<Complex64>> {
    let jac = jacobian(state, p, constant_treatment)?;
    let rows: Vec<Vec<f64>> = jac.iter().map(|r| r.to_vec()).collect();
    let mut eig = linalg::eigenvalues(rows)?;
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(eig)
}

/// First integrals `I1 = S/RC` and `I2 = RE / RC^(r2/r1)` of the
/// treatment-free system restricted to `C = E = 0`.
pub fn first_integrals(state: &SystemState, p: &PatientParams) -> Result<(f64, f64)> {
    state.check_finite()?;
    if state.rc <= 0.0 {
        return Err(Error::Undefined(format!("first integrals need RC > 0, got {}", state.rc)));
    }
    if p.r1 <= 0.0 {
        return Err(Error::Undefined("first integrals need r1 > 0".into()));
    }
    Ok((state.s / state.rc, state.re / state.rc.powf(p.r2 / p.r1)))
}
