//! Biased subsampling estimators for logistic regression on imbalanced data.
//!
//! The crate covers four layers:
//!
//! * [`glm`]: weighted, offset-aware logistic regression by damped Newton.
//! * [`sampling`]: uniform, case-control, weighted case-control and local
//!   case-control subsampling with the matching coefficient adjustments.
//! * [`populations`]: synthetic populations with exact log-odds, samplers and
//!   population-limit solvers.
//! * [`asymptotics`] and [`experiments`]: population evaluation of the
//!   sandwich quantities and seeded replication studies.

pub mod asymptotics;
pub mod data;
pub mod error;
pub mod experiments;
pub mod glm;
pub mod linalg;
pub mod numerics;
pub mod populations;
pub mod rng;
pub mod sampling;

pub use data::{ModelParams, ObservationSet};
pub use error::{Error, Result};
pub use glm::{fit_logistic, FitConfig, FitReport};
pub use populations::{Population, PopulationSpec};
pub use sampling::{SamplingScheme, WeightedSubsample};
