//! Command-line entry points: `run`, `sweep`, `gen`, `dump-tables`, and
//! `compare`. The binary is a thin wrapper over these; examples call the
//! library APIs directly.
//!
//! Exit codes: 0 success, 1 usage, 2 data error (trace/config/io), 3
//! reconciliation failure. Relative output paths are placed under
//! `$TIERSIM_OUT_DIR` when that variable is set.

use crate::config::{ConfigError, Overrides, RunConfig};
use crate::geometry::Tables;
use crate::policy::PolicyKind;
use crate::report::{compare, ReportError, SimReport};
use crate::sim::{Engine, SimError};
use crate::trace::{
    generate_phase_shift, generate_skewed, write_binary, write_csv, AccessSpread, MemoryRequest,
    SyntheticSpec, TraceError, TraceReader,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const OUT_DIR_ENV: &str = "TIERSIM_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Reconciliation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Reconciliation(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::Report(ReportError::Reconciliation(_)) => {
                CliError::Reconciliation(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match &e {
            ReportError::Reconciliation(_) => CliError::Reconciliation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tiersim", version, about = "Hybrid DRAM-PCM tiered-memory simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one trace under one policy and write a report.
    Run(RunArgs),
    /// Run several configurations over one trace and compare them.
    Sweep(SweepArgs),
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Emit the timing and bias lookup tables as CSV.
    DumpTables(DumpTablesArgs),
    /// Normalize stored reports to a baseline report.
    Compare(CompareArgs),
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s)
        .ok_or_else(|| format!("unknown policy {s:?} (expected baseline|nimble|tldram|mneme)"))
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input trace (CSV or binary, optionally gzip-compressed).
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub phase_length: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_outstanding: Option<usize>,
    #[arg(long)]
    pub hot_threshold: Option<u32>,
    #[arg(long)]
    pub cold_threshold: Option<u32>,
    #[arg(long)]
    pub promotion_threshold: Option<u32>,
    /// Report output path (default report.json).
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Directory for flat per-metric CSV files.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    /// Newline-delimited log of allocation and migration decisions.
    #[arg(long)]
    pub log_decisions: Option<PathBuf>,
    /// Newline-delimited log of issued memory commands.
    #[arg(long)]
    pub trace_commands: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trace: PathBuf,
    /// Comma-separated policies to run.
    #[arg(long, value_delimiter = ',', required = true)]
    pub policies: Vec<String>,
    /// Optional comma-separated phase lengths; each policy runs once per
    /// length.
    #[arg(long, value_delimiter = ',')]
    pub phase_lengths: Vec<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label to normalize against (defaults to the first run).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Directory for the per-run reports and comparison CSV.
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Skewed,
    PhaseShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Csv,
    Binary,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TraceFormat,
    #[arg(long, default_value_t = 24)]
    pub ftis: u32,
    #[arg(long, default_value_t = 0.17)]
    pub hot_fraction: f64,
    #[arg(long, default_value_t = 0.90)]
    pub hot_share: f64,
    #[arg(long, default_value_t = 0.5)]
    pub read_fraction: f64,
    #[arg(long, default_value_t = 8)]
    pub phases: u32,
    #[arg(long, default_value_t = 100_000)]
    pub accesses_per_phase: u64,
    #[arg(long, default_value_t = 32)]
    pub pages_per_fti: u32,
    #[arg(long, default_value_t = 100_000_000)]
    pub phase_length: u64,
    /// Zipf exponent for spreading accesses over hot pages (uniform when
    /// omitted).
    #[arg(long)]
    pub zipf: Option<f64>,
    /// FTIs carried across the shift (phase-shift traces only).
    #[arg(long, default_value_t = 0)]
    pub overlap: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DumpTablesArgs {
    /// Dump the tables of this configuration instead of the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write timing.csv and bias.csv here instead of stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Report JSON files; each is labeled by its file stem.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Baseline label (defaults to the first report's label).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Joins relative paths under `$TIERSIM_OUT_DIR` when set.
pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

fn create_out(path: &Path) -> Result<BufWriter<File>, CliError> {
    let path = resolve_out(path);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn overrides(args: &RunArgs) -> Overrides {
    Overrides {
        policy: args.policy,
        phase_length: args.phase_length,
        seed: args.seed,
        max_outstanding: args.max_outstanding,
        hot_threshold: args.hot_threshold,
        cold_threshold: args.cold_threshold,
        promotion_threshold: args.promotion_threshold,
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<SimReport, CliError> {
    let mut cfg = load_config(&args.config)?;
    cfg.apply(&overrides(args));
    let params = cfg.to_sim_params()?;
    let mut engine = Engine::new(params)?;
    if let Some(path) = &args.log_decisions {
        engine = engine.with_decision_log(Box::new(create_out(path)?));
    }
    if let Some(path) = &args.trace_commands {
        engine = engine.with_command_log(Box::new(create_out(path)?));
    }
    let trace = TraceReader::open(&args.trace)?;
    let report = engine.run(trace)?;
    let out = resolve_out(&args.out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    report.write_json(&out)?;
    if let Some(dir) = &args.csv_dir {
        report.write_csv_dir(resolve_out(dir))?;
    }
    println!(
        "policy={} cycles={} faults={} near_share={:.3} report={}",
        report.policy,
        report.total_cycles,
        report.faults,
        report.near_share(),
        out.display()
    );
    Ok(report)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base_cfg = load_config(&args.config)?;
    let lengths: Vec<Option<u64>> = if args.phase_lengths.is_empty() {
        vec![None]
    } else {
        args.phase_lengths.iter().copied().map(Some).collect()
    };
    let mut jobs: Vec<(String, RunConfig)> = Vec::new();
    for policy in &args.policies {
        let policy = parse_policy(policy).map_err(CliError::Usage)?;
        for len in &lengths {
            let mut cfg = base_cfg.clone();
            cfg.policy = policy;
            if let Some(l) = len {
                cfg.phase_length = *l;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let label = match len {
                Some(l) if lengths.len() > 1 => format!("{}@{}", policy.name(), l),
                _ => policy.name().to_string(),
            };
            jobs.push((label, cfg));
        }
    }
    {
        let mut seen = std::collections::HashSet::new();
        for (label, _) in &jobs {
            if !seen.insert(label.clone()) {
                return Err(CliError::Usage(format!("duplicate run label {label:?}")));
            }
        }
    }

    // All runs share one in-memory copy of the trace.
    let trace: Vec<MemoryRequest> =
        TraceReader::open(&args.trace)?.collect::<Result<_, _>>()?;

    let results: Vec<(String, Result<SimReport, CliError>)> = std::thread::scope(|scope| {
        let trace = &trace;
        let handles: Vec<_> = jobs
            .iter()
            .map(|(label, cfg)| {
                let label = label.clone();
                let cfg = cfg.clone();
                scope.spawn(move || {
                    let run = || -> Result<SimReport, CliError> {
                        let params = cfg.to_sim_params()?;
                        let engine = Engine::new(params)?;
                        Ok(engine.run(trace.iter().map(|r| Ok(*r)))?)
                    };
                    (label, run())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker")).collect()
    });

    let out_dir = resolve_out(&args.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let mut ok: Vec<(String, SimReport)> = Vec::new();
    let mut failures: Vec<(String, CliError)> = Vec::new();
    for (label, result) in results {
        match result {
            Ok(report) => {
                report.write_json(out_dir.join(format!("{label}.json")))?;
                ok.push((label, report));
            }
            Err(e) => failures.push((label, e)),
        }
    }
    if !failures.is_empty() {
        for (label, e) in &failures {
            eprintln!("run {label} failed: {e}");
        }
        return Err(CliError::Data(format!(
            "{} of {} sweep runs failed; partial results in {}",
            failures.len(),
            ok.len() + failures.len(),
            out_dir.display()
        )));
    }
    let baseline = args
        .baseline
        .clone()
        .unwrap_or_else(|| ok.first().map(|(l, _)| l.clone()).unwrap_or_default());
    let table = compare(&ok, &baseline)?;
    table.write_text(std::io::stdout().lock())?;
    std::fs::write(out_dir.join("compare.csv"), table.to_csv())?;
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        num_ftis: args.ftis,
        hot_fti_fraction: args.hot_fraction,
        hot_access_share: args.hot_share,
        hot_page_spread: match args.zipf {
            Some(exponent) => AccessSpread::Zipf { exponent },
            None => AccessSpread::Uniform,
        },
        read_fti_fraction: args.read_fraction,
        phases: args.phases,
        accesses_per_phase: args.accesses_per_phase,
        pages_per_fti_per_phase: args.pages_per_fti,
        phase_length_instructions: args.phase_length,
        seed: args.seed,
    };
    let trace = match args.kind {
        GenKind::Skewed => generate_skewed(&spec)?,
        GenKind::PhaseShift => generate_phase_shift(&spec, args.overlap)?,
    };
    let out = resolve_out(&args.out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    match args.format {
        TraceFormat::Csv => write_csv(&out, &trace)?,
        TraceFormat::Binary => write_binary(&out, &trace)?,
    }
    println!("wrote {} requests to {}", trace.len(), out.display());
    Ok(())
}

pub fn cmd_dump_tables(args: &DumpTablesArgs) -> Result<(), CliError> {
    let tables: Tables = match &args.config {
        Some(path) => RunConfig::load(path)?.tables.to_tables()?,
        None => Tables::default(),
    };
    match &args.out_dir {
        Some(dir) => {
            let dir = resolve_out(dir);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("timing.csv"), tables.timing.to_csv())?;
            std::fs::write(dir.join("bias.csv"), tables.bias.to_csv())?;
            println!("wrote {}", dir.join("timing.csv").display());
            println!("wrote {}", dir.join("bias.csv").display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "# timing")?;
            out.write_all(tables.timing.to_csv().as_bytes())?;
            writeln!(out, "# bias")?;
            out.write_all(tables.bias.to_csv().as_bytes())?;
        }
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage(format!("bad report path {}", path.display())))?;
        let text = std::fs::read_to_string(path)?;
        let report =
            SimReport::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        reports.push((label, report));
    }
    let baseline = args.baseline.clone().unwrap_or_else(|| reports[0].0.clone());
    let table = compare(&reports, &baseline)?;
    table.write_text(std::io::stdout().lock())?;
    if let Some(path) = &args.csv {
        std::fs::write(resolve_out(path), table.to_csv())?;
    }
    Ok(())
}

/// Parses argv and dispatches; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gen(args) => cmd_gen(args),
        Command::DumpTables(args) => cmd_dump_tables(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
