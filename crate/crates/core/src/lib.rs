//! Impulsive ODE model of glioma growth under temozolomide and CAR-T
//! therapy, plus virtual-cohort trial and survival-analysis tooling.

pub mod cohort;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod protocol;
pub mod stats;
pub mod trial;

pub use error::{Error, Result};
pub use integrator::{IntegratorConfig, StopEvent, StopKind};
pub use model::{PatientParams, SystemState};
pub use protocol::{DoseEvent, DoseKind, ProtocolSpec, Schedule};
pub use cohort::{Cohort, CohortConfig};
pub use trial::{run_trial, DoseConfig, TrialOutcome, TrialResult};
