//! Survival estimation for the censored covariate.
//!
//! Without fully observed covariates the survival function of `X` is the
//! Kaplan–Meier product-limit estimate. With covariates it is a Cox
//! proportional hazards fit (Breslow ties) and the Breslow baseline, linked by
//! `S(t | z) = S0(t)^exp(lambda' z)`.
//!
//! Curves are right-continuous step functions: the value at `t` is the value
//! at the largest grid time `<= t`, and 1 before the first grid time.
//! [`SurvivalCurve::eval_left`] gives the left limit, `P(X >= t)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::record::{validate_records, SubjectRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    times: Vec<f64>,
    probs: Vec<f64>,
    /// `ln(probs)`, kept separately so that `S0^h` survives an `S0` that
    /// underflows (a huge Breslow jump paired with a tiny `h`).
    log_probs: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if times.len() != probs.len() {
            return Err(Error::invalid(format!(
                "curve has {} times but {} probabilities",
                times.len(),
                probs.len()
            )));
        }
        check_times(&times)?;
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("curve probabilities must lie in [0, 1]"));
        }
        if probs.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("curve probabilities must be nonincreasing"));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { times, probs, log_probs })
    }

    /// `S(t) = exp(-H(t))` from a cumulative hazard.
    pub fn from_cumulative_hazard(times: Vec<f64>, cumhaz: Vec<f64>) -> Result<Self> {
        if times.len() != cumhaz.len() {
            return Err(Error::invalid(format!(
                "curve has {} times but {} hazard values",
                times.len(),
                cumhaz.len()
            )));
        }
        check_times(&times)?;
        if cumhaz.iter().any(|h| h.is_nan() || *h < 0.0) || cumhaz.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("cumulative hazard must be nonnegative and nondecreasing"));
        }
        let probs = cumhaz.iter().map(|h| (-h).exp()).collect();
        let log_probs = cumhaz.iter().map(|h| -h).collect();
        Ok(Self { times, probs, log_probs })
    }

    /// The curve that is 1 everywhere.
    pub fn flat() -> Self {
        Self { times: Vec::new(), probs: Vec::new(), log_probs: Vec::new() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.step(self.times.partition_point(|&g| g <= t)).0
    }

    /// Left limit at `t`: the value at the largest grid time `< t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        self.step(self.times.partition_point(|&g| g < t)).0
    }

    /// `S0(t)^hr`, the survival of a subject with hazard ratio `hr`.
    pub fn survival_at(&self, t: f64, hr: f64) -> f64 {
        assert!(hr > 0.0, "hazard ratio must be positive, got {hr}");
        let (s, log_s) = self.step(self.times.partition_point(|&g| g <= t));
        pow_hr(s, log_s, hr)
    }

    /// Evaluates the curve at ascending `ts` in one merge pass.
    pub fn eval_sorted(&self, ts: &[f64]) -> Vec<f64> {
        self.steps_sorted(ts, false).into_iter().map(|(s, _)| s).collect()
    }

    /// [`eval_left`](Self::eval_left) at ascending `ts`.
    pub fn eval_left_sorted(&self, ts: &[f64]) -> Vec<f64> {
        self.steps_sorted(ts, true).into_iter().map(|(s, _)| s).collect()
    }

    /// `(S, ln S)` after the first `k` grid times.
    pub(crate) fn step(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            (1.0, 0.0)
        } else {
            (self.probs[k - 1], self.log_probs[k - 1])
        }
    }

    /// `(S, ln S)` at ascending `ts`, right-continuous or as left limits.
    pub(crate) fn steps_sorted(&self, ts: &[f64], left: bool) -> Vec<(f64, f64)> {
        debug_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        let mut k = 0;
        ts.iter()
            .map(|&t| {
                while k < self.times.len() && (self.times[k] < t || (!left && self.times[k] == t)) {
                    k += 1;
                }
                self.step(k)
            })
            .collect()
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::invalid("curve times must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("curve times must be strictly increasing"));
    }
    Ok(())
}

/// `s^hr` computed as `exp(hr ln s)`, with the identity exponent
/// short-circuited so that `hr == 1` reproduces the raw curve bit for bit.
#[inline]
pub(crate) fn pow_hr(s: f64, log_s: f64, hr: f64) -> f64 {
    if hr == 1.0 {
        s
    } else {
        (hr * log_s).exp()
    }
}

/// Distinct observed times with event and removal counts, ascending.
struct TimeTable {
    times: Vec<f64>,
    events: Vec<usize>,
    leaving: Vec<usize>,
}

fn time_table(records: &[SubjectRecord]) -> TimeTable {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].t.total_cmp(&records[b].t));
    let mut table = TimeTable { times: Vec::new(), events: Vec::new(), leaving: Vec::new() };
    for &i in &order {
        let r = &records[i];
        if table.times.last() != Some(&r.t) {
            table.times.push(r.t);
            table.events.push(0);
            table.leaving.push(0);
        }
        let k = table.times.len() - 1;
        table.leaving[k] += 1;
        if r.delta {
            table.events[k] += 1;
        }
    }
    table
}

/// Kaplan–Meier product-limit estimate over the distinct event times.
///
/// Between censorings the estimate is `S(c) * n(t) / n(c)`, so each value is
/// computed with one multiply and one divide. On uncensored data this gives
/// the empirical survivor function `n(t) / n` exactly.
pub fn kaplan_meier(records: &[SubjectRecord]) -> Result<SurvivalCurve> {
    if records.is_empty() {
        return Err(Error::invalid("Kaplan-Meier estimate of an empty record set"));
    }
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::Subject { index: i, source: Box::new(e) })?;
    }
    let table = time_table(records);
    let mut at_risk = records.len();
    let mut base_surv = 1.0_f64;
    let mut base_n = at_risk;
    let mut times = Vec::new();
    let mut probs = Vec::new();
    for k in 0..table.times.len() {
        let d = table.events[k];
        let censored = table.leaving[k] - d;
        let after_events = at_risk - d;
        let s = if d > 0 {
            let s = base_surv * (after_events as f64 / base_n as f64);
            times.push(table.times[k]);
            probs.push(s);
            s
        } else {
            base_surv * (at_risk as f64 / base_n as f64)
        };
        at_risk -= table.leaving[k];
        if censored > 0 {
            base_surv = s;
            base_n = at_risk;
        }
    }
    SurvivalCurve::new(times, probs)
}

/// Nelson–Aalen cumulative hazard `H(t) = sum d_k / n_k` at the distinct event times.
pub fn nelson_aalen(records: &[SubjectRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_records(records)?;
    let table = time_table(records);
    let mut at_risk = records.len();
    let mut h = 0.0;
    let mut times = Vec::new();
    let mut cumhaz = Vec::new();
    for k in 0..table.times.len() {
        if table.events[k] > 0 {
            h += table.events[k] as f64 / at_risk as f64;
            times.push(table.times[k]);
            cumhaz.push(h);
        }
        at_risk -= table.leaving[k];
    }
    Ok((times, cumhaz))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub log_hazard_ratios: Vec<f64>,
    pub baseline: SurvivalCurve,
    pub converged: bool,
    pub iterations: usize,
    pub log_partial_likelihood: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    /// Convergence threshold on the Euclidean norm of the score.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iter: 50 }
    }
}

struct CoxDesign {
    /// Covariates centered by column mean, rows in ascending time order.
    z: Vec<Vec<f64>>,
    times: Vec<f64>,
    delta: Vec<bool>,
}

impl CoxDesign {
    fn new(records: &[SubjectRecord], p: usize) -> Self {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[a].t.total_cmp(&records[b].t));
        let n = records.len() as f64;
        let means: Vec<f64> =
            (0..p).map(|c| records.iter().map(|r| r.z[c]).sum::<f64>() / n).collect();
        let z = order
            .iter()
            .map(|&i| records[i].z.iter().zip(&means).map(|(v, m)| v - m).collect())
            .collect();
        Self {
            z,
            times: order.iter().map(|&i| records[i].t).collect(),
            delta: order.iter().map(|&i| records[i].delta).collect(),
        }
    }

    /// Log partial likelihood, score and observed information at `beta`.
    fn evaluate(&self, beta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = beta.len();
        let n = self.times.len();
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        // Walk distinct times from the latest, growing the risk set.
        let mut hi = n;
        while hi > 0 {
            let t = self.times[hi - 1];
            let mut lo = hi;
            while lo > 0 && self.times[lo - 1] == t {
                lo -= 1;
            }
            let mut d = 0usize;
            let mut eta_events = 0.0;
            let mut z_events = vec![0.0; p];
            for i in lo..hi {
                let zi = &self.z[i];
                let eta: f64 = zi.iter().zip(beta).map(|(a, b)| a * b).sum();
                let w = eta.exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * zi[a];
                    for b in 0..p {
                        s2[a * p + b] += w * zi[a] * zi[b];
                    }
                }
                if self.delta[i] {
                    d += 1;
                    eta_events += eta;
                    for a in 0..p {
                        z_events[a] += zi[a];
                    }
                }
            }
            if d > 0 {
                let df = d as f64;
                loglik += eta_events - df * s0.ln();
                for a in 0..p {
                    grad[a] += z_events[a] - df * s1[a] / s0;
                    for b in 0..p {
                        info[(a, b)] += df * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
                    }
                }
            }
            hi = lo;
        }
        (loglik, grad, info)
    }
}

/// Cox log partial likelihood with Breslow ties.
pub fn partial_likelihood(records: &[SubjectRecord], beta: &[f64]) -> Result<f64> {
    let p = validate_records(records)?;
    if beta.len() != p {
        return Err(Error::invalid(format!("expected {p} coefficients, got {}", beta.len())));
    }
    Ok(CoxDesign::new(records, p).evaluate(beta).0)
}

/// Fits a Cox proportional hazards model by Newton–Raphson with step halving.
///
/// Non-convergence within `max_iter` is not an error: the returned fit has
/// `converged == false`.
pub fn fit_cox(records: &[SubjectRecord], options: CoxOptions) -> Result<CoxFit> {
    let p = validate_records(records)?;
    if p == 0 {
        return Err(Error::invalid("Cox model requires at least one covariate"));
    }
    if !records.iter().any(|r| r.delta) {
        return Err(Error::DegenerateData("no events among records".into()));
    }
    for c in 0..p {
        let first = records[0].z[c];
        if records.iter().all(|r| r.z[c] == first) {
            return Err(Error::SingularInformation(format!("covariate column {c} is constant")));
        }
    }

    let design = CoxDesign::new(records, p);
    let mut beta = vec![0.0; p];
    let (mut loglik, mut grad, mut info) = design.evaluate(&beta);
    let mut iterations = 0;
    let mut converged = grad.norm() <= options.tolerance;
    while !converged && iterations < options.max_iter {
        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::SingularInformation("information matrix is not positive definite".into())
            })?
            .solve(&grad);
        iterations += 1;

        // Near the optimum the likelihood gain falls below its rounding error;
        // the slack lets the full Newton step through there.
        let slack = 1e-12 * (1.0 + loglik.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let eval = design.evaluate(&trial);
            if eval.0.is_finite() && eval.0 >= loglik - slack {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, (ll, g, h))) = accepted else {
            // No ascent possible; stationary to working precision.
            break;
        };
        beta = trial;
        loglik = ll;
        grad = g;
        info = h;
        converged = grad.norm() <= options.tolerance;
    }

    let baseline = breslow_baseline(records, &beta)?;
    Ok(CoxFit {
        log_hazard_ratios: beta,
        baseline,
        converged,
        iterations,
        log_partial_likelihood: loglik,
        gradient_norm: grad.norm(),
    })
}

fn breslow_cumulative_hazard(records: &[SubjectRecord], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let table = time_table(records);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].t.total_cmp(&records[b].t));
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| records[i].z.iter().zip(beta).map(|(z, b)| z * b).sum::<f64>().exp())
        .collect();
    // Risk-set weight at each distinct time, accumulated from the latest time.
    let mut risk = vec![0.0; table.times.len()];
    let mut acc = 0.0;
    let mut end = weights.len();
    for k in (0..table.times.len()).rev() {
        let start = end - table.leaving[k];
        for w in weights[start..end].iter().rev() {
            acc += w;
        }
        risk[k] = acc;
        end = start;
    }
    let mut times = Vec::new();
    let mut cumhaz = Vec::new();
    let mut h = 0.0;
    for k in 0..table.times.len() {
        if table.events[k] > 0 {
            h += table.events[k] as f64 / risk[k];
            times.push(table.times[k]);
            cumhaz.push(h);
        }
    }
    (times, cumhaz)
}

/// Breslow estimate of the baseline survival `S0(t) = exp(-H0(t))` at the
/// distinct event times, evaluated at covariate vector zero.
pub fn breslow_baseline(records: &[SubjectRecord], log_hazard_ratios: &[f64]) -> Result<SurvivalCurve> {
    let p = validate_records(records)?;
    if log_hazard_ratios.len() != p {
        return Err(Error::invalid(format!(
            "expected {p} coefficients, got {}",
            log_hazard_ratios.len()
        )));
    }
    let (times, cumhaz) = breslow_cumulative_hazard(records, log_hazard_ratios);
    SurvivalCurve::from_cumulative_hazard(times, cumhaz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    KaplanMeier,
    Cox,
}

/// The survival model used for imputation: a baseline curve and the log
/// hazard ratios (empty for Kaplan–Meier).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalFit {
    pub method: FitMethod,
    pub baseline: SurvivalCurve,
    pub log_hazard_ratios: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SurvivalFit {
    /// Kaplan–Meier when the records carry no covariates, Cox otherwise.
    pub fn estimate(records: &[SubjectRecord], options: CoxOptions) -> Result<Self> {
        let p = validate_records(records)?;
        if p == 0 {
            return Ok(Self {
                method: FitMethod::KaplanMeier,
                baseline: kaplan_meier(records)?,
                log_hazard_ratios: Vec::new(),
                converged: true,
                iterations: 0,
            });
        }
        let cox = fit_cox(records, options)?;
        Ok(Self::from(cox))
    }

    /// `exp(lambda' z)`.
    pub fn hazard_ratio(&self, z: &[f64]) -> f64 {
        if self.log_hazard_ratios.is_empty() {
            return 1.0;
        }
        let eta: f64 = self.log_hazard_ratios.iter().zip(z).map(|(l, z)| l * z).sum();
        eta.exp()
    }

    /// Short identifier describing the fit, recorded alongside imputations.
    pub fn provenance(&self) -> String {
        match self.method {
            FitMethod::KaplanMeier => format!("kaplan-meier(times={})", self.baseline.len()),
            FitMethod::Cox => {
                let lambda: Vec<String> =
                    self.log_hazard_ratios.iter().map(|l| format!("{l:.6}")).collect();
                format!(
                    "cox-breslow(lambda=[{}],iterations={},converged={})",
                    lambda.join(","),
                    self.iterations,
                    self.converged
                )
            }
        }
    }
}

impl From<CoxFit> for SurvivalFit {
    fn from(fit: CoxFit) -> Self {
        Self {
            method: FitMethod::Cox,
            baseline: fit.baseline,
            log_hazard_ratios: fit.log_hazard_ratios,
            converged: fit.converged,
            iterations: fit.iterations,
        }
    }
}
