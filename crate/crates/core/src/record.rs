use crate::error::{Error, Result};

/// One subject: observed time `t = min(X, C)`, event indicator, fully observed
/// covariates `z` and (optionally) the regression outcome `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub t: f64,
    /// `true` when the covariate was observed exactly (X <= C).
    pub delta: bool,
    pub z: Vec<f64>,
    pub y: Option<f64>,
}

impl SubjectRecord {
    pub fn new(t: f64, delta: bool, z: Vec<f64>, y: Option<f64>) -> Result<Self> {
        let rec = Self { t, delta, z, y };
        rec.validate()?;
        Ok(rec)
    }

    /// Event record without covariates or outcome.
    pub fn event(t: f64) -> Self {
        Self { t, delta: true, z: Vec::new(), y: None }
    }

    /// Censored record without covariates or outcome.
    pub fn censored(t: f64) -> Self {
        Self { t, delta: false, z: Vec::new(), y: None }
    }

    pub fn with_z(mut self, z: Vec<f64>) -> Self {
        self.z = z;
        self
    }

    pub fn with_y(mut self, y: f64) -> Self {
        self.y = Some(y);
        self
    }

    pub fn is_censored(&self) -> bool {
        !self.delta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::invalid(format!("observed time must be finite and >= 0, got {}", self.t)));
        }
        if let Some(bad) = self.z.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite covariate value {bad}")));
        }
        if let Some(y) = self.y {
            if !y.is_finite() {
                return Err(Error::invalid(format!("non-finite outcome {y}")));
            }
        }
        Ok(())
    }
}

/// Checks that a non-empty record set is valid and has a common covariate width.
pub(crate) fn validate_records(records: &[SubjectRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("at least one record is required"))?;
    let p = first.z.len();
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::Subject { index: i, source: Box::new(e) })?;
        if r.z.len() != p {
            return Err(Error::invalid(format!(
                "record {i} has {} covariates, expected {p}",
                r.z.len()
            )));
        }
    }
    Ok(p)
}

/// Fraction of records that are censored.
pub fn censoring_rate(records: &[SubjectRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("censoring rate of an empty record set"));
    }
    let censored = records.iter().filter(|r| r.is_censored()).count();
    Ok(censored as f64 / records.len() as f64)
}
