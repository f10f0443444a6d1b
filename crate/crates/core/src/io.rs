//! Dataset and config files, and the tidy CSV tables the tools emit.
//!
//! Dataset CSV: header row with required `t` and `delta` (0/1), optional `y`,
//! and any number of `z_*` covariate columns, in any order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::imputation::{Formula, Imputation, ImputationSpec, Indicator};
use crate::record::SubjectRecord;
use crate::sim::{AuditRow, CellSummary, EstimateRow, ScenarioConfig};

/// A parsed dataset, keeping the raw cells so output can echo the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub headers: Vec<String>,
    pub raw: Vec<Vec<String>>,
    pub records: Vec<SubjectRecord>,
    pub z_names: Vec<String>,
}

enum Column {
    T,
    Delta,
    Y,
    Z(usize),
    Extra,
}

pub fn read_dataset(path: &Path, allow_extra_cols: bool) -> Result<Dataset> {
    let file = File::open(path)?;
    read_dataset_from(file, &path.display().to_string(), allow_extra_cols)
}

pub fn read_dataset_from<R: Read>(reader: R, source: &str, allow_extra_cols: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();

    let mut z_names = Vec::new();
    let mut columns = Vec::with_capacity(headers.len());
    for h in &headers {
        let col = match h.as_str() {
            "t" => Column::T,
            "delta" => Column::Delta,
            "y" => Column::Y,
            z if z.starts_with("z_") && z.len() > 2 => {
                z_names.push(z.to_owned());
                Column::Z(z_names.len() - 1)
            }
            _ if allow_extra_cols => Column::Extra,
            other => {
                return Err(Error::Schema(format!(
                    "{source}: unknown column `{other}` (use --allow-extra-cols to keep it)"
                )))
            }
        };
        columns.push(col);
    }
    for required in ["t", "delta"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Schema(format!("{source}: missing required column `{required}`")));
        }
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(Error::Schema(format!("{source}: duplicate column `{h}`")));
        }
    }

    let mut raw = Vec::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |column: &str, message: String| Error::Parse {
            path: source.to_owned(),
            line,
            column: column.to_owned(),
            message,
        };
        let mut rec = SubjectRecord { t: f64::NAN, delta: false, z: vec![0.0; z_names.len()], y: None };
        for ((cell, col), name) in row.iter().zip(&columns).zip(&headers) {
            let real = || -> Result<f64> {
                let v: f64 = cell.parse().map_err(|_| parse_err(name, format!("`{cell}` is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(name, format!("`{cell}` is not finite")))
                }
            };
            match col {
                Column::T => {
                    rec.t = real()?;
                    if rec.t < 0.0 {
                        return Err(parse_err(name, format!("negative time {cell}")));
                    }
                }
                Column::Delta => {
                    rec.delta = match cell {
                        "1" => true,
                        "0" => false,
                        _ => return Err(parse_err(name, format!("`{cell}` is not 0 or 1"))),
                    }
                }
                Column::Y => rec.y = if cell.is_empty() { None } else { Some(real()?) },
                Column::Z(k) => rec.z[*k] = real()?,
                Column::Extra => {}
            }
        }
        raw.push(row.iter().map(str::to_owned).collect());
        records.push(rec);
    }
    Ok(Dataset { headers, raw, records, z_names })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes records in the dataset format (`t,delta[,y],z_*`).
pub fn write_dataset<W: Write>(writer: W, records: &[SubjectRecord], z_names: &[String]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_y = records.iter().any(|r| r.y.is_some());
    let mut header = vec!["t".to_owned(), "delta".to_owned()];
    if with_y {
        header.push("y".to_owned());
    }
    header.extend(z_names.iter().cloned());
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![fmt_f64(r.t), if r.delta { "1" } else { "0" }.to_owned()];
        if with_y {
            row.push(r.y.map(fmt_f64).unwrap_or_default());
        }
        row.extend(r.z.iter().copied().map(fmt_f64));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Echoes the input columns and appends `x_imputed` and `imputation_flag`.
pub fn write_imputed<W: Write>(writer: W, dataset: &Dataset, imputations: &[Imputation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = dataset.headers.clone();
    header.push("x_imputed".into());
    header.push("imputation_flag".into());
    wtr.write_record(&header)?;
    for (raw, imp) in dataset.raw.iter().zip(imputations) {
        let mut row = raw.clone();
        row.push(fmt_f64(imp.value));
        row.push(imp.status.as_str().into());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of the per-subject formula comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectAudit {
    pub subject: usize,
    pub t: f64,
    pub hazard_ratio: f64,
    pub spec: ImputationSpec,
    pub imputed: f64,
    pub deviation: f64,
}

pub fn write_subject_audit<W: Write>(writer: W, rows: &[SubjectAudit]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["subject", "t", "hazard_ratio", "formula", "indicator", "imputed", "deviation"])?;
    for r in rows {
        wtr.write_record([
            r.subject.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.hazard_ratio),
            r.spec.formula.to_string(),
            r.spec.indicator.to_string(),
            fmt_f64(r.imputed),
            fmt_f64(r.deviation),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_estimates<W: Write>(writer: W, rows: &[EstimateRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["log_hr", "formula", "indicator", "replication", "beta", "se", "censoring_rate"])?;
    for r in rows {
        wtr.write_record([
            fmt_f64(r.log_hr),
            r.spec.formula.to_string(),
            r.spec.indicator.to_string(),
            r.replication.to_string(),
            fmt_f64(r.beta),
            fmt_f64(r.std_error),
            fmt_f64(r.censoring_rate),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(writer: W, rows: &[CellSummary]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "log_hr",
        "formula",
        "indicator",
        "replications",
        "mean_beta",
        "empirical_se",
        "mean_rubin_se",
        "mean_censoring_rate",
    ])?;
    for r in rows {
        wtr.write_record([
            fmt_f64(r.log_hr),
            r.spec.formula.to_string(),
            r.spec.indicator.to_string(),
            r.replications.to_string(),
            fmt_f64(r.mean_beta),
            fmt_f64(r.empirical_se),
            fmt_f64(r.mean_rubin_se),
            fmt_f64(r.mean_censoring_rate),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_scenario_audit<W: Write>(writer: W, rows: &[AuditRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["log_hr", "z", "subject", "censored_at", "formula", "indicator", "imputed", "deviation"])?;
    for r in rows {
        wtr.write_record([
            fmt_f64(r.log_hr),
            fmt_f64(r.z),
            r.subject.to_string(),
            fmt_f64(r.censored_at),
            r.spec.formula.to_string(),
            r.spec.indicator.to_string(),
            fmt_f64(r.imputed),
            fmt_f64(r.deviation),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Simulation run configuration (TOML). Every field has a default.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub scenario: ScenarioSection,
    pub imputation: ImputationSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub n: usize,
    pub p_z: f64,
    pub censor_rate: f64,
    pub baseline_rate: f64,
    pub log_hr: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub replications: usize,
    pub imputations: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputationSection {
    pub formulas: Vec<Formula>,
    pub indicators: Vec<Indicator>,
    pub reuse_survival_fit: bool,
}

/// Output locations; relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub estimates: PathBuf,
    pub summary: PathBuf,
    pub audit: PathBuf,
    pub plot: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: ScenarioConfig::default().seed,
            threads: None,
            scenario: ScenarioSection::default(),
            imputation: ImputationSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let c = ScenarioConfig::default();
        Self {
            n: c.n,
            p_z: c.p_z,
            censor_rate: c.censor_rate,
            baseline_rate: c.baseline_rate,
            log_hr: c.log_hr,
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            replications: c.replications,
            imputations: c.imputations,
        }
    }
}

impl Default for ImputationSection {
    fn default() -> Self {
        Self { formulas: Formula::ALL.to_vec(), indicators: Indicator::ALL.to_vec(), reuse_survival_fit: false }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            estimates: PathBuf::from("estimates.csv"),
            summary: PathBuf::from("summary.csv"),
            audit: PathBuf::from("audit.csv"),
            plot: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.scenario_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if cfg.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        let mut specs = Vec::new();
        for &f in &self.imputation.formulas {
            for &i in &self.imputation.indicators {
                let spec = ImputationSpec::new(f, i);
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
        }
        ScenarioConfig {
            n: s.n,
            p_z: s.p_z,
            censor_rate: s.censor_rate,
            baseline_rate: s.baseline_rate,
            log_hr: s.log_hr.clone(),
            alpha: s.alpha,
            beta: s.beta,
            gamma: s.gamma,
            replications: s.replications,
            imputations: s.imputations,
            seed: self.seed,
            specs,
            reuse_survival_fit: self.imputation.reuse_survival_fit,
        }
    }

    /// Resolves an output path against `base` (the config's directory).
    pub fn output_path(&self, base: &Path, file: &Path) -> PathBuf {
        let dir = if self.output.dir.is_absolute() { self.output.dir.clone() } else { base.join(&self.output.dir) };
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            dir.join(file)
        }
    }
}
