//! Bootstrap multiple imputation: resample, refit the survival model, impute,
//! fit least squares, and pool the `B` fits with Rubin's rules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imputation::{ImputationGrid, ImputationSpec};
use crate::record::{validate_records, SubjectRecord};
use crate::rng::{substream, StreamRng};
use crate::survival::{CoxOptions, SurvivalFit};

/// Least-squares fit of `y ~ 1 + x + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept, slope on `x`, then one entry per covariate in `z`.
    pub coefficients: Vec<f64>,
    pub coefficient_variances: Vec<f64>,
    pub residual_variance: f64,
    pub n_used: usize,
}

impl OlsFit {
    /// Coefficient on the (imputed) censored covariate.
    pub fn beta(&self) -> f64 {
        self.coefficients[1]
    }
}

/// Least squares via Householder QR with classical variance estimates
/// `sigma^2 (X'X)^{-1}`.
pub fn least_squares(design: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(Error::invalid(format!("design has {n} rows but {} outcomes", y.len())));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more than {k} observations, got {n}")));
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= scale * 1e-12) || scale == 0.0 {
        return Err(Error::SingularDesign("design matrix is rank deficient".into()));
    }
    let y = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    let residuals = &y - design * &coef;
    let residual_variance = residuals.norm_squared() / (n - k) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign("triangular inverse failed".into()))?;
    // diag((R'R)^{-1}) = squared row norms of R^{-1}
    let coefficient_variances =
        (0..k).map(|i| residual_variance * r_inv.row(i).norm_squared()).collect();
    Ok(OlsFit {
        coefficients: coef.iter().copied().collect(),
        coefficient_variances,
        residual_variance,
        n_used: n,
    })
}

/// Regresses each record's outcome on `[1, x, z]`.
pub fn ols_fit(records: &[SubjectRecord], x: &[f64]) -> Result<OlsFit> {
    let p = validate_records(records)?;
    if x.len() != records.len() {
        return Err(Error::invalid(format!("{} records but {} x values", records.len(), x.len())));
    }
    let k = p + 2;
    let mut design = DMatrix::zeros(records.len(), k);
    let mut y = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = x[i];
        for (c, z) in r.z.iter().enumerate() {
            design[(i, c + 2)] = *z;
        }
        y.push(r.y.ok_or_else(|| Error::invalid(format!("record {i} has no outcome")))?);
    }
    least_squares(&design, &y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledEstimate {
    /// Mean of the per-imputation estimates.
    pub estimate: f64,
    pub std_error: f64,
    pub b: usize,
    /// Mean of the per-imputation variances.
    pub within_var: f64,
    /// Sample variance of the per-imputation estimates.
    pub between_var: f64,
}

/// Rubin's rules:
/// `SE^2 = (1/B) sum Var_b + (B+1)/(B(B-1)) sum (est_b - mean)^2`.
pub fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    let b = estimates.len();
    if variances.len() != b {
        return Err(Error::invalid(format!("{b} estimates but {} variances", variances.len())));
    }
    if b < 2 {
        return Err(Error::invalid(format!("pooling needs at least 2 imputations, got {b}")));
    }
    if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || estimates.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("estimates must be finite and variances finite and nonnegative"));
    }
    let bf = b as f64;
    let estimate = estimates.iter().sum::<f64>() / bf;
    let within_var = variances.iter().sum::<f64>() / bf;
    let spread: f64 = estimates.iter().map(|e| (e - estimate).powi(2)).sum();
    let total = within_var + (bf + 1.0) / (bf * (bf - 1.0)) * spread;
    Ok(PooledEstimate {
        estimate,
        std_error: total.sqrt(),
        b,
        within_var,
        between_var: spread / (bf - 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiOptions {
    /// Number of bootstrap imputations `B`.
    pub imputations: usize,
    pub seed: u64,
    /// Impute every resample from one survival fit on the original data
    /// instead of refitting per resample.
    pub reuse_survival_fit: bool,
    /// Redraws allowed per replicate when its survival fit fails.
    pub max_retries: usize,
    pub cox: CoxOptions,
}

impl Default for MiOptions {
    fn default() -> Self {
        Self {
            imputations: 20,
            seed: 0,
            reuse_survival_fit: false,
            max_retries: 10,
            cox: CoxOptions::default(),
        }
    }
}

/// Pooled coefficients for one imputation spec.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    pub spec: ImputationSpec,
    /// Intercept, `x`, then each `z`, pooled separately.
    pub terms: Vec<PooledEstimate>,
    /// Per-replicate least-squares fits in replicate order.
    pub replicates: Vec<OlsFit>,
}

impl PooledFit {
    pub fn beta(&self) -> &PooledEstimate {
        &self.terms[1]
    }
}

const BOOTSTRAP_STREAM: u64 = 0xB007;

/// Generator for bootstrap replicate `b`, draw attempt `attempt`.
pub fn replicate_rng(seed: u64, replicate: usize, attempt: usize) -> StreamRng {
    substream(seed, BOOTSTRAP_STREAM, ((replicate as u64) << 16) | attempt as u64)
}

/// `n` indices drawn uniformly with replacement.
pub fn resample_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn run_replicate(
    records: &[SubjectRecord],
    specs: &[ImputationSpec],
    shared_fit: Option<&SurvivalFit>,
    options: &MiOptions,
    replicate: usize,
) -> Result<Vec<OlsFit>> {
    let mut last_err = None;
    for attempt in 0..=options.max_retries {
        let mut rng = replicate_rng(options.seed, replicate, attempt);
        let sample: Vec<SubjectRecord> =
            resample_indices(records.len(), &mut rng).into_iter().map(|i| records[i].clone()).collect();
        match impute_and_fit(&sample, specs, shared_fit, options) {
            Ok(fits) => return Ok(fits),
            Err(e) => {
                log::warn!("bootstrap replicate {replicate} attempt {attempt} redrawn: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(Error::BootstrapExhausted {
        replicate,
        attempts: options.max_retries + 1,
        source: Box::new(last_err.expect("at least one attempt")),
    })
}

fn impute_and_fit(
    sample: &[SubjectRecord],
    specs: &[ImputationSpec],
    shared_fit: Option<&SurvivalFit>,
    options: &MiOptions,
) -> Result<Vec<OlsFit>> {
    let refit;
    let fit = match shared_fit {
        Some(fit) => fit,
        None => {
            refit = SurvivalFit::estimate(sample, options.cox)?;
            if !refit.converged {
                return Err(Error::DegenerateData(format!(
                    "Cox fit did not converge in {} iterations",
                    refit.iterations
                )));
            }
            &refit
        }
    };
    let grid = ImputationGrid::from_records(sample, &fit.baseline)?;
    specs
        .iter()
        .map(|&spec| {
            let x: Vec<f64> = grid
                .impute_records(sample, &fit.log_hazard_ratios, spec)?
                .into_iter()
                .map(|imp| imp.value)
                .collect();
            ols_fit(sample, &x)
        })
        .collect()
}

/// Runs bootstrap MI for several specs on shared resamples: replicate `b`
/// uses the same resample and survival fit for every spec.
pub fn bootstrap_mi_multi(
    records: &[SubjectRecord],
    specs: &[ImputationSpec],
    options: &MiOptions,
) -> Result<Vec<PooledFit>> {
    validate_records(records)?;
    if options.imputations < 2 {
        return Err(Error::invalid(format!("B must be at least 2, got {}", options.imputations)));
    }
    if let Some(i) = records.iter().position(|r| r.y.is_none()) {
        return Err(Error::invalid(format!("record {i} has no outcome")));
    }
    let shared_fit = if options.reuse_survival_fit {
        Some(SurvivalFit::estimate(records, options.cox)?)
    } else {
        None
    };
    let per_replicate: Vec<Vec<OlsFit>> = (0..options.imputations)
        .into_par_iter()
        .map(|b| run_replicate(records, specs, shared_fit.as_ref(), options, b))
        .collect::<Result<_>>()?;

    specs
        .iter()
        .enumerate()
        .map(|(s, &spec)| {
            let replicates: Vec<OlsFit> = per_replicate.iter().map(|fits| fits[s].clone()).collect();
            let k = replicates[0].coefficients.len();
            let terms = (0..k)
                .map(|c| {
                    let est: Vec<f64> = replicates.iter().map(|f| f.coefficients[c]).collect();
                    let var: Vec<f64> = replicates.iter().map(|f| f.coefficient_variances[c]).collect();
                    rubin_pool(&est, &var)
                })
                .collect::<Result<_>>()?;
            Ok(PooledFit { spec, terms, replicates })
        })
        .collect()
}

pub fn bootstrap_mi(records: &[SubjectRecord], spec: ImputationSpec, options: &MiOptions) -> Result<PooledFit> {
    Ok(bootstrap_mi_multi(records, &[spec], options)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rubin_hand_case() {
        let p = rubin_pool(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(p.estimate, 1.0);
        assert_eq!(p.std_error, 2.0);
        assert_eq!(p.within_var, 1.0);
        assert_eq!(p.between_var, 2.0);
    }

    #[test]
    fn rubin_identical_estimates() {
        let p = rubin_pool(&[0.3; 5], &[0.49; 5]).unwrap();
        assert!((p.std_error - 0.7).abs() < 1e-15);
        assert_eq!(p.between_var, 0.0);
    }

    #[test]
    fn rubin_errors() {
        assert!(matches!(rubin_pool(&[1.0, 2.0], &[1.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(rubin_pool(&[1.0], &[1.0]), Err(Error::InvalidArgument(_))));
        assert!(rubin_pool(&[1.0, 2.0], &[1.0, -1.0]).is_err());
    }

    #[test]
    fn rubin_within_scales() {
        let v = [0.2, 0.5, 0.1];
        let c = 3.0;
        let a = rubin_pool(&[1.0, 2.0, 4.0], &v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c * c).collect();
        let b = rubin_pool(&[1.0, 2.0, 4.0], &scaled).unwrap();
        assert!((b.within_var - c * c * a.within_var).abs() < 1e-14);
    }

    #[test]
    fn ols_perfect_line() {
        let recs: Vec<_> = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]
            .iter()
            .map(|&(_, y)| SubjectRecord::event(0.0).with_y(y))
            .collect();
        let fit = ols_fit(&recs, &[0.0, 1.0, 2.0]).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-14);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ols_exact_linear_data() {
        let mut recs = Vec::new();
        let mut xs = Vec::new();
        for i in 0..12 {
            let x = 0.1 * i as f64;
            let z = (i % 3 == 0) as u8 as f64;
            xs.push(x);
            recs.push(SubjectRecord::event(x).with_z(vec![z]).with_y(1.0 + x + 0.25 * z));
        }
        let fit = ols_fit(&recs, &xs).unwrap();
        for (got, want) in fit.coefficients.iter().zip([1.0, 1.0, 0.25]) {
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
        assert!(fit.residual_variance < 1e-28);
    }

    #[test]
    fn ols_rank_deficient() {
        let recs: Vec<_> = (0..6).map(|i| SubjectRecord::event(0.0).with_z(vec![i as f64]).with_y(i as f64)).collect();
        let x: Vec<f64> = (0..6).map(|i| 2.0 * i as f64).collect();
        assert!(matches!(ols_fit(&recs, &x), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn ols_positive_variances() {
        let recs: Vec<_> = (0..10)
            .map(|i| SubjectRecord::event(0.0).with_z(vec![(i % 2) as f64]).with_y(((i * 7) % 5) as f64))
            .collect();
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sqrt()).collect();
        let fit = ols_fit(&recs, &x).unwrap();
        assert!(fit.coefficient_variances.iter().all(|v| *v > 0.0));
    }
}
