//! Conditional-mean imputation of right-censored covariates.
//!
//! A censored subject with censoring value `C` and hazard ratio
//! `h = exp(lambda' z)` is replaced by
//!
//! ```text
//! E(X | X > C, z) = C + (1 / S0(C)^h) * integral_C^inf S0(x)^h dx
//! ```
//!
//! with the integral approximated by the trapezoidal rule over the ordered,
//! distinct observed times `T_(1) < ... < T_(m)` of the fitting sample. The
//! sum runs to `m - 1` and the tail past `T_(m)` is dropped. The fitted step
//! curve is read as `S(t) = P(X >= t)` by default, see [`StepConvention`].
//!
//! Besides the correct formula, three published variants are reproduced for
//! auditing: [`Formula::Atem2017`] raises the sum of the two trapezoid heights
//! to `h` instead of each height, [`Formula::Asg2019`] cancels `h` out of the
//! ratio entirely, and [`Formula::Amz2019`] raises the leading `1/2` to `h`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::SubjectRecord;
use crate::survival::{pow_hr, SurvivalCurve, SurvivalFit};

/// Upper bound used for every formula's trapezoid sum (the printed bound `n`
/// of two variants would need an unobservable `T_(n+1)`).
pub const SUMMAND_UPPER_BOUND: &str = "n-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Correct,
    Atem2017,
    Asg2019,
    Amz2019,
}

impl Formula {
    pub const ALL: [Formula; 4] = [Formula::Correct, Formula::Atem2017, Formula::Asg2019, Formula::Amz2019];

    pub fn as_str(self) -> &'static str {
        match self {
            Formula::Correct => "correct",
            Formula::Atem2017 => "atem2017",
            Formula::Asg2019 => "asg2019",
            Formula::Amz2019 => "amz2019",
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Formula::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown formula `{s}`")))
    }
}

/// Which grid points enter the trapezoid sum: `T_(j) >= C` or `T_(j) > C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indicator {
    Inclusive,
    Exclusive,
}

impl Indicator {
    pub const ALL: [Indicator; 2] = [Indicator::Inclusive, Indicator::Exclusive];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::Inclusive => "inclusive",
            Indicator::Exclusive => "exclusive",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown indicator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImputationSpec {
    pub formula: Formula,
    pub indicator: Indicator,
}

impl ImputationSpec {
    pub const CORRECT: ImputationSpec =
        ImputationSpec { formula: Formula::Correct, indicator: Indicator::Inclusive };

    pub fn new(formula: Formula, indicator: Indicator) -> Self {
        Self { formula, indicator }
    }

    /// All eight formula/indicator combinations, formula-major.
    pub fn all() -> Vec<ImputationSpec> {
        Formula::ALL
            .into_iter()
            .flat_map(|f| Indicator::ALL.into_iter().map(move |i| ImputationSpec::new(f, i)))
            .collect()
    }
}

impl Default for ImputationSpec {
    fn default() -> Self {
        Self::CORRECT
    }
}

impl fmt::Display for ImputationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.formula, self.indicator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImputationStatus {
    /// Observed exactly; `x = t`.
    Event,
    Imputed,
    /// `S0(C)^h == 0`: the censoring value lies at or past the point where the
    /// fitted survival reaches zero, and `x = C`.
    Degenerate,
}

impl ImputationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ImputationStatus::Event => "event",
            ImputationStatus::Imputed => "imputed",
            ImputationStatus::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Imputation {
    pub value: f64,
    pub status: ImputationStatus,
}

/// How a fitted step curve is read off at grid times and at `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepConvention {
    /// Left limit, `S(t) = P(X >= t)`.
    #[default]
    AtRisk,
    /// Value at the largest curve time `<= t`. Suited to curves whose knots
    /// carry exact values of a smooth function.
    RightContinuous,
}

impl StepConvention {
    pub const ALL: [StepConvention; 2] = [StepConvention::AtRisk, StepConvention::RightContinuous];

    pub fn as_str(self) -> &'static str {
        match self {
            StepConvention::AtRisk => "at-risk",
            StepConvention::RightContinuous => "right-continuous",
        }
    }
}

impl fmt::Display for StepConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "at-risk" | "left" => Ok(StepConvention::AtRisk),
            "right-continuous" | "right" => Ok(StepConvention::RightContinuous),
            other => Err(Error::invalid(format!(
                "unknown step convention '{other}' (expected at-risk or right-continuous)"
            ))),
        }
    }
}

/// The trapezoid grid: distinct observed times with the baseline survival
/// evaluated at each.
#[derive(Debug, Clone)]
pub struct ImputationGrid {
    times: Vec<f64>,
    /// `(S0, ln S0)` at each grid time.
    surv: Vec<(f64, f64)>,
    baseline: SurvivalCurve,
    convention: StepConvention,
}

impl ImputationGrid {
    /// Grid with the default [`StepConvention::AtRisk`] reading of `baseline`.
    pub fn new(times: Vec<f64>, baseline: &SurvivalCurve) -> Result<Self> {
        Self::with_convention(times, baseline, StepConvention::AtRisk)
    }

    pub fn with_convention(
        mut times: Vec<f64>,
        baseline: &SurvivalCurve,
        convention: StepConvention,
    ) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid times must be finite"));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        let surv = baseline.steps_sorted(&times, convention == StepConvention::AtRisk);
        Ok(Self { times, surv, baseline: baseline.clone(), convention })
    }

    pub fn convention(&self) -> StepConvention {
        self.convention
    }

    /// `S0(t)^hr` under the grid's step convention.
    fn base_pow(&self, t: f64, hr: f64) -> f64 {
        let times = self.baseline.times();
        let k = match self.convention {
            StepConvention::AtRisk => times.partition_point(|&g| g < t),
            StepConvention::RightContinuous => times.partition_point(|&g| g <= t),
        };
        let (s, log_s) = self.baseline.step(k);
        pow_hr(s, log_s, hr)
    }

    /// Grid over every observed time (events and censorings) in `records`.
    pub fn from_records(records: &[SubjectRecord], baseline: &SurvivalCurve) -> Result<Self> {
        Self::new(records.iter().map(|r| r.t).collect(), baseline)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Per-interval trapezoid numerators `{.} * (T_(j+1) - T_(j))` for
    /// `j = 1..m-1`, before the leading factor.
    pub fn terms(&self, hr: f64, formula: Formula) -> Vec<f64> {
        self.surv
            .windows(2)
            .zip(self.times.windows(2))
            .map(|(s, t)| {
                let width = t[1] - t[0];
                let ((s1, l1), (s0, l0)) = (s[1], s[0]);
                let heights = match formula {
                    Formula::Correct | Formula::Amz2019 => pow_hr(s1, l1, hr) + pow_hr(s0, l0, hr),
                    Formula::Atem2017 => pow_hr(s1 + s0, log_add(l1, l0), hr),
                    Formula::Asg2019 => s1 + s0,
                };
                heights * width
            })
            .collect()
    }

    fn table(&self, hr: f64, formula: Formula) -> TermTable {
        let terms = self.terms(hr, formula);
        let mut suffix = vec![0.0; self.times.len().max(1)];
        let mut acc = 0.0;
        for (j, term) in terms.iter().enumerate().rev() {
            acc += term;
            suffix[j] = acc;
        }
        TermTable { hr, formula, suffix }
    }

    fn first_index(&self, c: f64, indicator: Indicator) -> usize {
        match indicator {
            Indicator::Inclusive => self.times.partition_point(|&t| t < c),
            Indicator::Exclusive => self.times.partition_point(|&t| t <= c),
        }
    }

    fn impute_with(&self, table: &TermTable, c: f64, indicator: Indicator) -> Imputation {
        let hr = table.hr;
        let (factor, denom) = match table.formula {
            Formula::Correct | Formula::Atem2017 => (0.5, self.base_pow(c, hr)),
            Formula::Asg2019 => (0.5, self.base_pow(c, 1.0)),
            Formula::Amz2019 => (0.5f64.powf(hr), self.base_pow(c, hr)),
        };
        if denom == 0.0 {
            return Imputation { value: c, status: ImputationStatus::Degenerate };
        }
        let k = self.first_index(c, indicator);
        let sum = table.suffix.get(k).copied().unwrap_or(0.0);
        Imputation { value: c + factor * (sum / denom), status: ImputationStatus::Imputed }
    }

    /// Imputed value for censoring value `c` and hazard ratio `hr`.
    pub fn conditional_mean(&self, c: f64, hr: f64, spec: ImputationSpec) -> Result<Imputation> {
        check_hazard_ratio(hr)?;
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::invalid(format!("censoring value must be finite and >= 0, got {c}")));
        }
        let table = self.table(hr, spec.formula);
        Ok(self.impute_with(&table, c, spec.indicator))
    }

    /// The trapezoid on `[C, m]`, `m` the first grid time strictly after `C`:
    /// the amount by which the exclusive indicator undercounts the correct
    /// formula. Zero when no grid time exceeds `C` or the denominator vanishes.
    pub fn indicator_gap(&self, c: f64, hr: f64) -> Result<f64> {
        check_hazard_ratio(hr)?;
        let k = self.first_index(c, Indicator::Exclusive);
        let Some(&m) = self.times.get(k) else {
            return Ok(0.0);
        };
        let s_c = self.base_pow(c, hr);
        if s_c == 0.0 {
            return Ok(0.0);
        }
        let (s, log_s) = self.surv[k];
        let s_m = pow_hr(s, log_s, hr);
        Ok(0.5 * ((s_m + s_c) * (m - c) / s_c))
    }

    /// Imputes every record, sharing one suffix-sum table per distinct hazard
    /// ratio.
    pub fn impute_records(
        &self,
        records: &[SubjectRecord],
        lambda: &[f64],
        spec: ImputationSpec,
    ) -> Result<Vec<Imputation>> {
        let mut tables: HashMap<u64, TermTable> = HashMap::new();
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.delta {
                    return Ok(Imputation { value: r.t, status: ImputationStatus::Event });
                }
                let hr = hazard_ratio(lambda, &r.z);
                check_hazard_ratio(hr).map_err(|e| Error::Subject { index: i, source: Box::new(e) })?;
                let table = tables
                    .entry(hr.to_bits())
                    .or_insert_with(|| self.table(hr, spec.formula));
                Ok(self.impute_with(table, r.t, spec.indicator))
            })
            .collect()
    }
}

/// `ln(e^a + e^b)`.
fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        hi
    } else {
        hi + ((a - hi).exp() + (b - hi).exp()).ln()
    }
}

struct TermTable {
    hr: f64,
    formula: Formula,
    /// `suffix[k] = sum_{j >= k} terms[j]`, accumulated from the right.
    suffix: Vec<f64>,
}

fn check_hazard_ratio(hr: f64) -> Result<()> {
    if hr.is_finite() && hr > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("hazard ratio must be finite and positive, got {hr}")))
    }
}

/// `exp(lambda' z)`; 1 when `lambda` is empty.
pub fn hazard_ratio(lambda: &[f64], z: &[f64]) -> f64 {
    if lambda.is_empty() {
        return 1.0;
    }
    lambda.iter().zip(z).map(|(l, z)| l * z).sum::<f64>().exp()
}

fn censored_subject(subject_index: usize, records: &[SubjectRecord]) -> Result<&SubjectRecord> {
    let rec = records
        .get(subject_index)
        .ok_or_else(|| Error::invalid(format!("subject index {subject_index} out of range")))?;
    if rec.delta {
        return Err(Error::invalid(format!("subject {subject_index} is not censored")));
    }
    Ok(rec)
}

/// Conditional mean for one censored subject, using every observed time in
/// `records` as the trapezoid grid.
pub fn conditional_mean(
    subject_index: usize,
    records: &[SubjectRecord],
    baseline: &SurvivalCurve,
    lambda: &[f64],
    spec: ImputationSpec,
) -> Result<Imputation> {
    let rec = censored_subject(subject_index, records)?;
    let grid = ImputationGrid::from_records(records, baseline)?;
    grid.conditional_mean(rec.t, hazard_ratio(lambda, &rec.z), spec)
}

/// `Correct(inclusive) - Correct(exclusive)` for one censored subject.
pub fn indicator_gap(
    subject_index: usize,
    records: &[SubjectRecord],
    baseline: &SurvivalCurve,
    lambda: &[f64],
) -> Result<f64> {
    let rec = censored_subject(subject_index, records)?;
    let grid = ImputationGrid::from_records(records, baseline)?;
    grid.indicator_gap(rec.t, hazard_ratio(lambda, &rec.z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedRecord {
    pub record: SubjectRecord,
    pub x: f64,
    pub status: ImputationStatus,
}

#[derive(Debug, Clone)]
pub struct ImputedDataset {
    pub records: Vec<ImputedRecord>,
    pub spec: ImputationSpec,
    /// Identifies the survival fit the imputations came from.
    pub provenance: String,
    pub summand_upper_bound: &'static str,
}

impl ImputedDataset {
    pub fn x(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.x).collect()
    }

    pub fn degenerate_count(&self) -> usize {
        self.records.iter().filter(|r| r.status == ImputationStatus::Degenerate).count()
    }
}

/// Completes a dataset: events keep `t`, censored records get their
/// conditional mean under `spec`.
pub fn impute_dataset(
    records: &[SubjectRecord],
    fit: &SurvivalFit,
    spec: ImputationSpec,
) -> Result<ImputedDataset> {
    let grid = ImputationGrid::from_records(records, &fit.baseline)?;
    let values = grid.impute_records(records, &fit.log_hazard_ratios, spec)?;
    Ok(ImputedDataset {
        records: records
            .iter()
            .zip(values)
            .map(|(r, imp)| ImputedRecord { record: r.clone(), x: imp.value, status: imp.status })
            .collect(),
        spec,
        provenance: fit.provenance(),
        summand_upper_bound: SUMMAND_UPPER_BOUND,
    })
}
