//! Command-line surface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lumpkit_core::anneal::{anneal, fill_gaps, AnnealConfig, AnnealOutcome, Schedule};
use lumpkit_core::selection::select_k;
use lumpkit_core::{
    gen_ncd, gen_replicated_rows, stationary_distribution, HeterogeneityMode, Membership, Partition,
    SelectionOptions, SelectionReport, StateWeights, StochasticMatrix,
};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::formats::{self, Format};
use crate::report::{self, ReportMeta};

#[derive(Parser, Debug)]
#[command(
    name = "lumpkit",
    version,
    about = "Aggregate Markov chains and choose the number of superstates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic chain with a known superstate structure.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Anneal a chain and write the partition found for each k.
    Aggregate(AggregateArgs),
    /// Score given partitions and select the number of superstates.
    Select(SelectArgs),
    /// Aggregate, then select.
    Pipeline(PipelineArgs),
    /// Build the 26-letter chain from bigram counts.
    IngestBigrams(IngestArgs),
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    /// Nearly decomposable chain with the given block sizes.
    Ncd(NcdArgs),
    /// Chain whose rows repeat a few random rows.
    Rows(RowsArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; defaults to the extension of --out, else csv.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl OutputArgs {
    fn format(&self) -> Format {
        self.format
            .or_else(|| self.out.as_deref().map(Format::from_path))
            .unwrap_or(Format::Csv)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => formats::write_string(p, text),
            None => std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("<stdout>", e)),
        }
    }
}

#[derive(Args, Debug)]
struct NcdArgs {
    /// Comma-separated block sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the generating partition (JSON, keyed by k).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct RowsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    kt: usize,
    /// Comma-separated class sizes summing to n.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    /// Transition matrix (csv or json).
    #[arg(long, required = true)]
    matrix: PathBuf,
    /// Input format; defaults to the file extension.
    #[arg(long, value_enum)]
    matrix_format: Option<Format>,
    /// State weights.
    #[arg(long, value_enum, default_value_t = RhoArg::Uniform)]
    rho: RhoArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RhoArg {
    Uniform,
    Stationary,
}

impl RhoArg {
    fn name(self) -> &'static str {
        match self {
            RhoArg::Uniform => "uniform",
            RhoArg::Stationary => "stationary",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Plain,
    Whiten,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MembershipArg {
    Normalized,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Geometric,
    Adaptive,
}

#[derive(Args, Debug)]
struct SelectionFlags {
    #[arg(long, value_enum, default_value_t = ModeArg::Whiten)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MembershipArg::Normalized)]
    membership: MembershipArg,
    #[arg(long, default_value_t = 1e-12)]
    floor: f64,
}

impl SelectionFlags {
    fn options(&self) -> SelectionOptions {
        SelectionOptions {
            mode: match self.mode {
                ModeArg::Plain => HeterogeneityMode::Plain,
                ModeArg::Whiten => HeterogeneityMode::Whiten,
            },
            membership: match self.membership {
                MembershipArg::Normalized => Membership::Normalized,
                MembershipArg::Raw => Membership::Raw,
            },
            floor: self.floor,
            ..SelectionOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct AnnealFlags {
    #[arg(long, default_value_t = 6)]
    kmax: usize,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    t0_factor: f64,
    #[arg(long, default_value_t = 1e-8)]
    t_min_factor: f64,
    #[arg(long, default_value_t = 1e-6)]
    merge_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    #[arg(long, default_value_t = 1e-8)]
    fp_tol: f64,
    #[arg(long, default_value_t = 500)]
    fp_max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Geometric)]
    schedule: ScheduleArg,
    /// Independent fixed-k runs for every k instead of one sweep.
    #[arg(long)]
    per_k: bool,
}

impl AnnealFlags {
    fn config(&self) -> AnnealConfig {
        AnnealConfig {
            k_max: self.kmax,
            alpha: self.alpha,
            t0_factor: self.t0_factor,
            t_min_factor: self.t_min_factor,
            merge_tol: self.merge_tol,
            delta: self.delta,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            seed: self.seed,
            schedule: match self.schedule {
                ScheduleArg::Geometric => Schedule::Geometric,
                ScheduleArg::Adaptive => Schedule::Adaptive,
            },
            per_k: self.per_k,
            ..AnnealConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[command(flatten)]
    anneal: AnnealFlags,
    /// Run fixed-k annealing for every k the sweep skipped.
    #[arg(long)]
    fill_gaps: bool,
    /// Also write the aggregated models (JSON).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Partition file (JSON); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    input: MatrixArgs,
    /// Partitions keyed by k (JSON).
    #[arg(long, required = true)]
    partitions: PathBuf,
    #[command(flatten)]
    selection: SelectionFlags,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[command(flatten)]
    anneal: AnnealFlags,
    #[command(flatten)]
    selection: SelectionFlags,
    /// Also write the partitions used for selection (JSON).
    #[arg(long)]
    partitions_out: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Count file with `<two letters> <count>` lines.
    #[arg(long, required = true)]
    input: PathBuf,
    /// Added to every cell before normalization.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[command(flatten)]
    output: OutputArgs,
}

/// Runs the tool and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_config(config: Value) {
    eprintln!("config: {config}");
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen(GenCommand::Ncd(a)) => {
            print_config(json!({
                "command": "gen ncd", "blocks": a.blocks, "eps": a.eps, "seed": a.seed,
            }));
            let (pi, truth) = gen_ncd(&a.blocks, a.eps, a.seed)?;
            emit_generated(&pi, truth, a.truth.as_deref(), &a.output)
        }
        Command::Gen(GenCommand::Rows(a)) => {
            print_config(json!({
                "command": "gen rows", "n": a.n, "kt": a.kt, "counts": a.counts,
                "eps": a.eps, "seed": a.seed,
            }));
            let (pi, truth) = gen_replicated_rows(a.n, a.kt, &a.counts, a.eps, a.seed)?;
            emit_generated(&pi, truth, a.truth.as_deref(), &a.output)
        }
        Command::Aggregate(a) => aggregate(a),
        Command::Select(a) => select(a),
        Command::Pipeline(a) => pipeline(a),
        Command::IngestBigrams(a) => {
            print_config(json!({
                "command": "ingest-bigrams", "input": a.input, "eta": a.eta,
            }));
            let pi = formats::ingest_bigrams(&a.input, a.eta)?;
            a.output.emit(&formats::matrix_to_string(&pi, a.output.format()))
        }
    }
}

fn emit_generated(
    pi: &StochasticMatrix,
    truth: Partition,
    truth_path: Option<&Path>,
    output: &OutputArgs,
) -> Result<()> {
    if let Some(p) = truth_path {
        let parts = BTreeMap::from([(truth.k(), truth)]);
        formats::write_string(p, &formats::partitions_to_string(&parts))?;
    }
    output.emit(&formats::matrix_to_string(pi, output.format()))
}

struct Loaded {
    pi: StochasticMatrix,
    rho: StateWeights,
    sha: String,
}

fn load(input: &MatrixArgs) -> Result<Loaded> {
    let bytes = std::fs::read(&input.matrix).map_err(|e| CliError::io(&input.matrix, e))?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Parse {
        line: 0,
        column: 0,
        message: "matrix file is not UTF-8".into(),
    })?;
    let format = input
        .matrix_format
        .unwrap_or_else(|| Format::from_path(&input.matrix));
    let pi = formats::parse_matrix_str(&text, format)?;
    let rho = match input.rho {
        RhoArg::Uniform => StateWeights::uniform(pi.n()),
        RhoArg::Stationary => stationary_distribution(&pi, 1e-12, 1_000_000)?,
    };
    Ok(Loaded {
        pi,
        rho,
        sha: report::sha256_hex(text.as_bytes()),
    })
}

fn anneal_json(flags: &AnnealFlags) -> Value {
    json!({
        "kmax": flags.kmax, "alpha": flags.alpha, "t0_factor": flags.t0_factor,
        "t_min_factor": flags.t_min_factor, "merge_tol": flags.merge_tol, "delta": flags.delta,
        "fp_tol": flags.fp_tol, "fp_max_iter": flags.fp_max_iter, "seed": flags.seed,
        "schedule": format!("{:?}", flags.schedule).to_lowercase(), "per_k": flags.per_k,
    })
}

fn selection_json(flags: &SelectionFlags) -> Value {
    let o = flags.options();
    json!({
        "mode": report::mode_name(o.mode),
        "membership": report::membership_name(o.membership),
        "floor": o.floor,
        "zero_tol": o.zero_tol,
    })
}

fn run_anneal(loaded: &Loaded, flags: &AnnealFlags, fill: bool) -> Result<AnnealOutcome> {
    let cfg = flags.config();
    let mut outcome = anneal(&loaded.pi, &loaded.rho, &cfg)?;
    eprintln!(
        "anneal: T_cr = {:e}, T0 = {:e}, k found = {:?}, fixed points at iteration cap = {}",
        outcome.initial_t_cr,
        outcome.t0,
        outcome.k_values(),
        outcome.warnings()
    );
    if fill {
        let added = fill_gaps(&loaded.pi, &loaded.rho, &cfg, &mut outcome)?;
        if !added.is_empty() {
            eprintln!("anneal: fixed-k runs added k = {added:?}");
        }
    }
    Ok(outcome)
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    print_config(json!({
        "command": "aggregate", "matrix": a.input.matrix, "rho": a.input.rho.name(),
        "fill_gaps": a.fill_gaps, "anneal": anneal_json(&a.anneal),
    }));
    let loaded = load(&a.input)?;
    let outcome = run_anneal(&loaded, &a.anneal, a.fill_gaps)?;
    let parts: BTreeMap<usize, Partition> = outcome
        .entries
        .iter()
        .map(|e| (e.k, e.partition.clone()))
        .collect();
    if let Some(path) = &a.models {
        let models: Vec<Value> = outcome
            .entries
            .iter()
            .map(|e| {
                json!({
                    "k": e.k,
                    "temperature": e.temperature,
                    "partition": e.partition.assignment(),
                    "psi": e.model.psi().to_rows(),
                    "distributions": e.model.distributions().to_rows(),
                })
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&models).expect("plain data serializes");
        text.push('\n');
        formats::write_string(path, &text)?;
    }
    let text = formats::partitions_to_string(&parts);
    match &a.out {
        Some(p) => formats::write_string(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn select(a: SelectArgs) -> Result<()> {
    print_config(json!({
        "command": "select", "matrix": a.input.matrix, "partitions": a.partitions,
        "rho": a.input.rho.name(), "selection": selection_json(&a.selection),
    }));
    let loaded = load(&a.input)?;
    let text = formats::read_to_string(&a.partitions)?;
    let parts = formats::parse_partitions_str(&text, loaded.pi.n(), loaded.pi.labels())?;
    let report = select_k(&loaded.pi, &parts, &loaded.rho, &a.selection.options())?;
    let meta = ReportMeta {
        input_sha256: loaded.sha.clone(),
        partitions_sha256: Some(report::sha256_hex(text.as_bytes())),
        rho: a.input.rho.name().into(),
    };
    finish(&report, &meta, &a.output)
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    print_config(json!({
        "command": "pipeline", "matrix": a.input.matrix, "rho": a.input.rho.name(),
        "anneal": anneal_json(&a.anneal), "selection": selection_json(&a.selection),
    }));
    let loaded = load(&a.input)?;
    let outcome = run_anneal(&loaded, &a.anneal, true)?;
    let mut parts = BTreeMap::new();
    for (expected, e) in (1..).zip(&outcome.entries) {
        if e.k != expected {
            eprintln!("pipeline: no partition for k = {expected}; selecting over k < {expected}");
            break;
        }
        parts.insert(e.k, e.partition.clone());
    }
    if let Some(p) = &a.partitions_out {
        formats::write_string(p, &formats::partitions_to_string(&parts))?;
    }
    let report = select_k(&loaded.pi, &parts, &loaded.rho, &a.selection.options())?;
    let meta = ReportMeta {
        input_sha256: loaded.sha.clone(),
        partitions_sha256: None,
        rho: a.input.rho.name().into(),
    };
    finish(&report, &meta, &a.output)
}

fn finish(report: &SelectionReport, meta: &ReportMeta, output: &OutputArgs) -> Result<()> {
    eprintln!("selected k_t = {}", report.k_t);
    let text = match output.format() {
        Format::Csv => report::report_to_csv(report, meta),
        Format::Json => report::report_to_json(report, meta),
    };
    output.emit(&text)
}
