//! Conditional-mean multiple imputation for a right-censored covariate in
//! linear regression.
//!
//! The pipeline: estimate the survival function of the censored covariate
//! ([`survival`]), replace each censored value by its estimated conditional
//! mean ([`imputation`]), fit least squares on the completed data and pool
//! bootstrap replicates with Rubin's rules ([`mi`]). [`sim`] generates
//! synthetic studies and runs replicated scenario grids.

pub mod error;
pub mod imputation;
pub mod io;
pub mod mi;
pub mod record;
pub mod rng;
pub mod sim;
pub mod survival;

pub use error::{Error, Result};
pub use imputation::{
    conditional_mean, impute_dataset, indicator_gap, Formula, Imputation, ImputationGrid, ImputationSpec,
    ImputationStatus, ImputedDataset, Indicator, StepConvention,
};
pub use mi::{bootstrap_mi, bootstrap_mi_multi, ols_fit, rubin_pool, MiOptions, OlsFit, PooledEstimate, PooledFit};
pub use record::{censoring_rate, SubjectRecord};
pub use sim::{generate_sample, run_scenario, SampleDesign, ScenarioConfig, ScenarioResult};
pub use survival::{
    breslow_baseline, fit_cox, kaplan_meier, CoxFit, CoxOptions, FitMethod, SurvivalCurve, SurvivalFit,
};
