//! Synthetic censored-covariate studies.
//!
//! Each subject has `Z ~ Bernoulli(p_z)`, censoring `C ~ Exp(censor_rate)` and
//! a covariate `X` with exponential baseline hazard `baseline_rate` and log
//! hazard ratio `log_hr` on `Z`, drawn by inverting the cumulative hazard:
//! `X = -log(U) exp(-log_hr Z) / baseline_rate`. The outcome is
//! `Y = alpha + beta X + gamma Z + eps` with standard normal `eps`.
//!
//! All `log_hr` settings of a replication share one set of draws (`Z`, `C`,
//! `U`, `eps`), so subjects with `Z = 0` are identical across settings.

use rand::Rng;
use rand_distr::{Distribution, Exp, Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputation::{ImputationGrid, ImputationSpec};
use crate::mi::{bootstrap_mi_multi, MiOptions};
use crate::record::{censoring_rate, SubjectRecord};
use crate::rng::{derive_seed, substream};
use crate::survival::{CoxOptions, SurvivalFit};

const SAMPLE_STREAM: u64 = 0x5A3F;
const BOOTSTRAP_SEED_STREAM: u64 = 0xB5EE;

/// Data-generating parameters for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDesign {
    pub n: usize,
    pub p_z: f64,
    pub censor_rate: f64,
    pub baseline_rate: f64,
    pub log_hr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SampleDesign {
    fn default() -> Self {
        Self {
            n: 1000,
            p_z: 0.25,
            censor_rate: 4.0,
            baseline_rate: 5.0,
            log_hr: 0.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.25,
        }
    }
}

impl SampleDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        if !(self.p_z > 0.0 && self.p_z < 1.0) {
            return Err(Error::invalid(format!("p_z must lie in (0, 1), got {}", self.p_z)));
        }
        for (name, rate) in [("censor_rate", self.censor_rate), ("baseline_rate", self.baseline_rate)] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {rate}")));
            }
        }
        for (name, v) in [("log_hr", self.log_hr), ("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// A simulated subject with the latent `x` and `c` kept alongside the record.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSubject {
    pub record: SubjectRecord,
    pub x: f64,
    pub c: f64,
}

/// Draws a sample keeping the latent covariate and censoring values.
pub fn generate_latent(design: &SampleDesign, rng: &mut impl Rng) -> Result<Vec<SimulatedSubject>> {
    design.validate()?;
    let censor = Exp::new(design.censor_rate).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..design.n)
        .map(|_| {
            let z = if rng.random::<f64>() < design.p_z { 1.0 } else { 0.0 };
            let c: f64 = censor.sample(rng);
            let u: f64 = Open01.sample(rng);
            let eps: f64 = StandardNormal.sample(rng);
            let x = -u.ln() * (-design.log_hr * z).exp() / design.baseline_rate;
            let delta = x <= c;
            let y = design.alpha + design.beta * x + design.gamma * z + eps;
            SimulatedSubject {
                record: SubjectRecord { t: x.min(c), delta, z: vec![z], y: Some(y) },
                x,
                c,
            }
        })
        .collect())
}

pub fn generate_sample(design: &SampleDesign, seed: u64) -> Result<Vec<SubjectRecord>> {
    let mut rng = substream(seed, SAMPLE_STREAM, 0);
    Ok(generate_latent(design, &mut rng)?.into_iter().map(|s| s.record).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p_z: f64,
    pub censor_rate: f64,
    pub baseline_rate: f64,
    pub log_hr: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub replications: usize,
    /// Bootstrap imputations per analysis.
    pub imputations: usize,
    pub seed: u64,
    pub specs: Vec<ImputationSpec>,
    pub reuse_survival_fit: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let d = SampleDesign::default();
        Self {
            n: d.n,
            p_z: d.p_z,
            censor_rate: d.censor_rate,
            baseline_rate: d.baseline_rate,
            log_hr: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
            replications: 1000,
            imputations: 20,
            seed: 2021,
            specs: ImputationSpec::all(),
            reuse_survival_fit: false,
        }
    }
}

impl ScenarioConfig {
    pub fn design(&self, log_hr: f64) -> SampleDesign {
        SampleDesign {
            n: self.n,
            p_z: self.p_z,
            censor_rate: self.censor_rate,
            baseline_rate: self.baseline_rate,
            log_hr,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_hr.is_empty() {
            return Err(Error::invalid("at least one log hazard ratio is required"));
        }
        for &l in &self.log_hr {
            self.design(l).validate()?;
        }
        if self.replications < 1 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.imputations < 2 {
            return Err(Error::invalid("imputations (B) must be at least 2"));
        }
        if self.specs.is_empty() {
            return Err(Error::invalid("at least one imputation spec is required"));
        }
        Ok(())
    }

    /// Sample for replication `r` (0-based) at the given log hazard ratio.
    pub fn sample(&self, replication: usize, log_hr: f64) -> Result<Vec<SubjectRecord>> {
        generate_sample(&self.design(log_hr), derive_seed(self.seed, SAMPLE_STREAM, replication as u64))
    }

    fn mi_options(&self, replication: usize) -> MiOptions {
        MiOptions {
            imputations: self.imputations,
            seed: derive_seed(self.seed, BOOTSTRAP_SEED_STREAM, replication as u64),
            reuse_survival_fit: self.reuse_survival_fit,
            ..MiOptions::default()
        }
    }
}

/// Pooled estimate of `beta` for one replication, setting and spec.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub log_hr: f64,
    pub spec: ImputationSpec,
    /// 1-based.
    pub replication: usize,
    pub beta: f64,
    pub std_error: f64,
    pub censoring_rate: f64,
}

/// Mean over replications for one `(log_hr, spec)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub log_hr: f64,
    pub spec: ImputationSpec,
    pub mean_beta: f64,
    /// Standard deviation of the pooled estimates across replications.
    pub empirical_se: f64,
    pub mean_rubin_se: f64,
    pub mean_censoring_rate: f64,
    pub replications: usize,
}

/// Imputed value for a chosen censored subject under one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub log_hr: f64,
    pub z: f64,
    /// Position of the subject in the sample.
    pub subject: usize,
    pub censored_at: f64,
    pub spec: ImputationSpec,
    pub imputed: f64,
    /// `imputed` minus the correct/inclusive value.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub rows: Vec<EstimateRow>,
    pub summaries: Vec<CellSummary>,
    pub audit: Vec<AuditRow>,
}

impl ScenarioResult {
    pub fn cell(&self, log_hr: f64, spec: ImputationSpec) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.log_hr == log_hr && s.spec == spec)
    }

    /// Mean and Monte-Carlo standard error of the paired per-replication
    /// difference `beta(a) - beta(b)` at one setting.
    pub fn paired_difference(&self, log_hr: f64, a: ImputationSpec, b: ImputationSpec) -> Option<(f64, f64)> {
        let pick = |spec| {
            let mut v: Vec<(usize, f64)> = self
                .rows
                .iter()
                .filter(|r| r.log_hr == log_hr && r.spec == spec)
                .map(|r| (r.replication, r.beta))
                .collect();
            v.sort_by_key(|(rep, _)| *rep);
            v
        };
        let (ra, rb) = (pick(a), pick(b));
        if ra.is_empty() || ra.len() != rb.len() {
            return None;
        }
        let diffs: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x.1 - y.1).collect();
        let (mean, sd) = mean_sd(&diffs);
        Some((mean, sd / (diffs.len() as f64).sqrt()))
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-subject imputations for the first censored subject of each `Z`
/// stratum, from a survival fit on the full sample.
pub fn audit_first_censored(
    records: &[SubjectRecord],
    log_hr: f64,
    specs: &[ImputationSpec],
) -> Result<Vec<AuditRow>> {
    let fit = SurvivalFit::estimate(records, CoxOptions::default())?;
    let grid = ImputationGrid::from_records(records, &fit.baseline)?;
    let mut rows = Vec::new();
    for stratum in [0.0, 1.0] {
        let Some(subject) = records.iter().position(|r| !r.delta && r.z.first() == Some(&stratum)) else {
            continue;
        };
        let rec = &records[subject];
        let hr = fit.hazard_ratio(&rec.z);
        let reference = grid.conditional_mean(rec.t, hr, ImputationSpec::CORRECT)?.value;
        for &spec in specs {
            let imputed = grid.conditional_mean(rec.t, hr, spec)?.value;
            rows.push(AuditRow {
                log_hr,
                z: stratum,
                subject,
                censored_at: rec.t,
                spec,
                imputed,
                deviation: imputed - reference,
            });
        }
    }
    Ok(rows)
}

struct ReplicationOutput {
    rows: Vec<EstimateRow>,
}

fn run_replication(config: &ScenarioConfig, replication: usize) -> Result<ReplicationOutput> {
    let mut rows = Vec::with_capacity(config.log_hr.len() * config.specs.len());
    for &log_hr in &config.log_hr {
        let records = config.sample(replication, log_hr)?;
        let rate = censoring_rate(&records)?;
        let fits = bootstrap_mi_multi(&records, &config.specs, &config.mi_options(replication))?;
        for fit in fits {
            rows.push(EstimateRow {
                log_hr,
                spec: fit.spec,
                replication: replication + 1,
                beta: fit.beta().estimate,
                std_error: fit.beta().std_error,
                censoring_rate: rate,
            });
        }
    }
    Ok(ReplicationOutput { rows })
}

/// Runs every replication of every setting and aggregates per cell.
/// Output is independent of the rayon thread count.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let outputs: Vec<ReplicationOutput> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, r).map_err(|e| Error::Replication { replication: r + 1, source: Box::new(e) }))
        .collect::<Result<_>>()?;
    let rows: Vec<EstimateRow> = outputs.into_iter().flat_map(|o| o.rows).collect();

    let mut summaries = Vec::new();
    for &log_hr in &config.log_hr {
        for &spec in &config.specs {
            let cell: Vec<&EstimateRow> = rows.iter().filter(|r| r.log_hr == log_hr && r.spec == spec).collect();
            let betas: Vec<f64> = cell.iter().map(|r| r.beta).collect();
            let (mean_beta, empirical_se) = mean_sd(&betas);
            let k = cell.len() as f64;
            summaries.push(CellSummary {
                log_hr,
                spec,
                mean_beta,
                empirical_se,
                mean_rubin_se: cell.iter().map(|r| r.std_error).sum::<f64>() / k,
                mean_censoring_rate: cell.iter().map(|r| r.censoring_rate).sum::<f64>() / k,
                replications: cell.len(),
            });
        }
    }

    let mut audit = Vec::new();
    for &log_hr in &config.log_hr {
        let records = config.sample(0, log_hr)?;
        audit.extend(audit_first_censored(&records, log_hr, &config.specs)?);
    }
    Ok(ScenarioResult { rows, summaries, audit })
}
