//! `condmean`: conditional-mean imputation of a right-censored covariate.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric or degenerate failure.

mod plot;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use condmean_core::io::{
    read_dataset, write_estimates, write_imputed, write_scenario_audit, write_subject_audit, write_summary,
    Dataset, RunConfig, SubjectAudit,
};
use condmean_core::{
    run_scenario, CoxOptions, Formula, ImputationGrid, ImputationSpec, ImputationStatus, Indicator, SurvivalFit,
};

fn formula_parser() -> impl TypedValueParser<Value = Formula> {
    PossibleValuesParser::new(Formula::ALL.map(|f| f.as_str())).map(|s| s.parse::<Formula>().expect("listed value"))
}

fn indicator_parser() -> impl TypedValueParser<Value = Indicator> {
    PossibleValuesParser::new(Indicator::ALL.map(|i| i.as_str())).map(|s| s.parse::<Indicator>().expect("listed value"))
}

#[derive(Parser)]
#[command(name = "condmean", version, about = "Conditional mean imputation for a right-censored covariate")]
struct Cli {
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, env = "CONDMEAN_THREADS")]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a dataset by imputing its censored `t` values.
    Impute(ImputeArgs),
    /// Run the replicated simulation described by a TOML config.
    Simulate(SimulateArgs),
    /// Compare imputed values across formulas for every censored subject.
    Audit(AuditArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// CSV with columns t, delta, optional y and z_* covariates.
    input: PathBuf,

    /// Ignore columns other than t, delta, y and z_*.
    #[arg(long)]
    allow_extra_cols: bool,

    /// Output CSV (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DatasetArgs,

    #[arg(long, default_value_t = Formula::Correct, value_parser = formula_parser())]
    formula: Formula,

    #[arg(long, default_value_t = Indicator::Inclusive, value_parser = indicator_parser())]
    indicator: Indicator,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    data: DatasetArgs,

    /// Report every formula and indicator combination.
    #[arg(long)]
    all_formulas: bool,

    #[arg(long, default_value_t = Formula::Correct, value_parser = formula_parser(), conflicts_with = "all_formulas")]
    formula: Formula,

    #[arg(long, default_value_t = Indicator::Inclusive, value_parser = indicator_parser(), conflicts_with = "all_formulas")]
    indicator: Indicator,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML run configuration. Relative output paths resolve against its directory.
    config: PathBuf,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Impute bootstrap resamples from one survival fit on the full sample.
    #[arg(long)]
    reuse_survival_fit: bool,

    /// Restrict to these formulas (repeatable; overrides the config).
    #[arg(long, value_parser = formula_parser())]
    formula: Vec<Formula>,

    /// Restrict to these indicator modes (repeatable; overrides the config).
    #[arg(long, value_parser = indicator_parser())]
    indicator: Vec<Indicator>,

    /// Output directory (overrides the config).
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Also write an SVG chart of mean beta against the log hazard ratio.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<condmean_core::Error> for Failure {
    fn from(e: condmean_core::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(msg) | Failure::Numeric(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Impute(args) => with_threads(cli.threads, || impute(&args)),
        Command::Audit(args) => with_threads(cli.threads, || audit(&args)),
        Command::Simulate(args) => simulate(&args, cli.threads),
    }
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T, Failure> + Send) -> Result<T, Failure>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    match threads {
        Some(0) => return Err(Failure::Input("--threads must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder.build().map_err(|e| Failure::Numeric(format!("cannot start thread pool: {e}")))?;
    pool.install(f)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(args: &DatasetArgs) -> Result<(Dataset, SurvivalFit), Failure> {
    let dataset = read_dataset(&args.input, args.allow_extra_cols)?;
    let fit = SurvivalFit::estimate(&dataset.records, CoxOptions::default())?;
    if !fit.converged {
        return Err(Failure::Numeric(format!(
            "Cox fit did not converge in {} iterations",
            fit.iterations
        )));
    }
    log::info!("{} records, survival fit: {}", dataset.records.len(), fit.provenance());
    Ok((dataset, fit))
}

fn impute(args: &ImputeArgs) -> Result<(), Failure> {
    let (dataset, fit) = load(&args.data)?;
    let spec = ImputationSpec::new(args.formula, args.indicator);
    let grid = ImputationGrid::from_records(&dataset.records, &fit.baseline)?;
    let imputations = grid.impute_records(&dataset.records, &fit.log_hazard_ratios, spec)?;
    let degenerate = imputations.iter().filter(|i| i.status == ImputationStatus::Degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} censored records lie past the last event; imputed at their censoring value");
    }
    let mut out = open_output(args.data.output.as_deref())?;
    write_imputed(&mut out, &dataset, &imputations)?;
    out.flush()?;
    Ok(())
}

fn audit(args: &AuditArgs) -> Result<(), Failure> {
    let (dataset, fit) = load(&args.data)?;
    let specs =
        if args.all_formulas { ImputationSpec::all() } else { vec![ImputationSpec::new(args.formula, args.indicator)] };
    let grid = ImputationGrid::from_records(&dataset.records, &fit.baseline)?;
    let mut rows = Vec::new();
    for (subject, rec) in dataset.records.iter().enumerate().filter(|(_, r)| !r.delta) {
        let hr = fit.hazard_ratio(&rec.z);
        let reference = grid.conditional_mean(rec.t, hr, ImputationSpec::CORRECT)?.value;
        for &spec in &specs {
            let imputed = grid.conditional_mean(rec.t, hr, spec)?.value;
            rows.push(SubjectAudit { subject, t: rec.t, hazard_ratio: hr, spec, imputed, deviation: imputed - reference });
        }
    }
    if rows.is_empty() {
        log::warn!("no censored rows in {}; audit table is empty", args.data.input.display());
    }
    let mut out = open_output(args.data.output.as_deref())?;
    write_subject_audit(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn simulate(args: &SimulateArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.reuse_survival_fit {
        config.imputation.reuse_survival_fit = true;
    }
    if !args.formula.is_empty() {
        config.imputation.formulas = args.formula.clone();
    }
    if !args.indicator.is_empty() {
        config.imputation.indicators = args.indicator.clone();
    }
    if let Some(dir) = &args.output_dir {
        config.output.dir = dir.clone();
    }
    if let Some(plot) = &args.plot {
        config.output.plot = Some(plot.clone());
    }
    let scenario = config.scenario_config();
    scenario.validate()?;

    let result = with_threads(threads.or(config.threads), || Ok(run_scenario(&scenario)?))?;

    let base = args.config.parent().unwrap_or(Path::new("."));
    let dir = config.output_path(base, Path::new(""));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let estimates = config.output_path(base, &config.output.estimates);
    write_estimates(open_output(Some(&estimates))?, &result.rows)?;
    write_summary(open_output(Some(&config.output_path(base, &config.output.summary)))?, &result.summaries)?;
    write_scenario_audit(open_output(Some(&config.output_path(base, &config.output.audit)))?, &result.audit)?;
    if let Some(plot) = &config.output.plot {
        let path = config.output_path(base, plot);
        let svg = plot::beta_chart(&result.summaries, scenario.beta);
        std::fs::write(&path, svg).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    log::info!("wrote {} estimate rows to {}", result.rows.len(), dir.display());
    Ok(())
}
