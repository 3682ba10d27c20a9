use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::{json, Map, Value};

use prowras::classifiers::ClassifierSpec;
use prowras::data::{load_csv, LabelColumn, Normalizer};
use prowras::harness::{
    export_folds, run_benchmark, BenchmarkConfig, ClassifierSource, Metric, ResultsTable, DEFAULT_SEED,
};
use prowras::metrics::{iscore_all, wsrt};
use prowras::partition::{partition_minority, PartitionParams};
use prowras::rng::derive_seed;
use prowras::samplers::{
    default_sample_count, select_scheme, LorasParams, Method, ProwrasParams, SchemeChoice, RECOMMENDED_SIGMA,
};
use prowras::synth::Sigma;
use prowras::{Dataset, Error};

const THREADS_VAR: &str = "PROWRAS_THREADS";

fn param_defaults() -> String {
    let p = ProwrasParams::default();
    format!(
        "Algorithm defaults: max_levels={} n_neighbours_max={} theta={} shadow={} sigma={}\n\
         Threads: set {THREADS_VAR} to size the worker pool.",
        p.max_levels, p.n_neighbours_max, p.theta, p.shadow, RECOMMENDED_SIGMA
    )
}

#[derive(Parser)]
#[command(name = "prowras", version, about = "Proximity-weighted oversampling for imbalanced data")]
#[command(after_help = param_defaults())]
struct Cli {
    /// Base seed, or "random" to draw one from the OS
    #[arg(long, global = true)]
    seed: Option<String>,

    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic minority samples for a CSV dataset
    #[command(after_help = param_defaults())]
    Oversample(OversampleArgs),
    /// Print the proximity-weighted minority partition as JSON
    #[command(after_help = param_defaults())]
    Partition(PartitionArgs),
    /// Run a cross-validation benchmark from a JSON config
    #[command(after_help = param_defaults())]
    Benchmark(BenchmarkArgs),
    /// I-score of every oversampler in a results file
    #[command(after_help = param_defaults())]
    Iscore(IscoreArgs),
    /// Wilcoxon signed-rank test on two columns of a CSV
    #[command(after_help = param_defaults())]
    Wsrt(WsrtArgs),
    /// Print the version
    #[command(after_help = param_defaults())]
    Version,
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV with a header row
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,

    /// Label column name or zero-based index [default: last column]
    #[arg(long)]
    label_column: Option<String>,

    /// Minority class label [default: the rarer label]
    #[arg(long)]
    minority_label: Option<String>,
}

#[derive(Args)]
struct PartitionFlags {
    #[arg(long, default_value_t = 5)]
    max_levels: usize,

    #[arg(long, default_value_t = 5)]
    n_neighbours_max: usize,

    #[arg(long, default_value_t = 1.0)]
    theta: f64,
}

impl PartitionFlags {
    fn params(&self) -> PartitionParams {
        PartitionParams {
            max_levels: self.max_levels,
            n_neighbours_max: self.n_neighbours_max,
            theta: self.theta,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Prowras,
    Smote,
    Prowsyn,
    Loras,
    Pfsmote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Knn,
    Logreg,
}

impl ClassifierArg {
    fn spec(self) -> ClassifierSpec {
        match self {
            ClassifierArg::Knn => ClassifierSpec::knn(),
            ClassifierArg::Logreg => ClassifierSpec::logreg(),
        }
    }
}

#[derive(Args)]
struct OversampleArgs {
    #[arg(long, value_enum)]
    method: MethodArg,

    /// hgv, lgv, hlv, llv, auto or custom (prowras only)
    #[arg(long, default_value = "auto", value_parser = parse_scheme)]
    scheme: SchemeChoice,

    /// Samples to generate [default: majority count minus minority count]
    #[arg(long)]
    n: Option<usize>,

    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(flatten)]
    input: InputArgs,

    /// Classifier used by the auto scheme
    #[arg(long, value_enum, default_value = "knn")]
    classifier: ClassifierArg,

    #[command(flatten)]
    partition: PartitionFlags,

    #[arg(long, default_value_t = 100)]
    shadow: usize,

    #[arg(long, default_value_t = RECOMMENDED_SIGMA)]
    sigma: f64,

    /// Points per convex combination (custom scheme)
    #[arg(long, default_value_t = 2)]
    max_conv: usize,

    /// Neighbourhood size (custom scheme)
    #[arg(long, default_value_t = 1000)]
    neb_conv: usize,

    /// Neighbours for smote and loras
    #[arg(long, default_value_t = 5)]
    k: usize,

    /// Points per loras combination [default: clamp(features, 2, 30)]
    #[arg(long)]
    n_aff: Option<usize>,

    /// Oversample in the original units instead of min-max scaled ones
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    partition: PartitionFlags,

    /// Skip min-max scaling before the neighbour search
    #[arg(long)]
    no_normalize: bool,

    /// Output JSON [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON benchmark config
    #[arg(long)]
    config: PathBuf,

    /// Results as JSON lines [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also write the classifier x dataset table of "F1/kappa" cells
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Decimals in the CSV table
    #[arg(long, default_value_t = 3)]
    decimals: usize,

    /// Write every train/test fold to this directory for external
    /// classifiers, then stop without scoring
    #[arg(long)]
    export_folds: Option<PathBuf>,

    /// Classifier slot whose scheme choices the exported folds use
    /// [default: first external slot, else the first slot]
    #[arg(long, requires = "export_folds")]
    export_slot: Option<String>,
}

#[derive(Args)]
struct IscoreArgs {
    /// Results file (JSON lines or a JSON array)
    #[arg(long = "in")]
    input: PathBuf,

    #[arg(long, default_value = "f1", value_parser = parse_metric)]
    metric: Metric,

    /// Scores within this margin count as ties
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,

    /// Round mean scores before comparing
    #[arg(long, default_value_t = 3)]
    decimals: i32,
}

#[derive(Args)]
struct WsrtArgs {
    /// CSV of per-dataset scores
    #[arg(long = "in")]
    input: PathBuf,

    /// Column of the first method
    #[arg(long)]
    a: String,

    /// Column of the second method
    #[arg(long)]
    b: String,
}

fn parse_scheme(s: &str) -> Result<SchemeChoice, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Core(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidParameter(_)) => 1,
            Failure::Core(e) if e.is_data_error() => 2,
            _ => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Internal(m) => f.write_str(m),
            Failure::Core(e) => e.fmt(f),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                eprintln!("\n{}", usage_for_args());
            }
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let seed = match cli.seed.as_deref() {
        None => None,
        Some("random") => Some(rand::random::<u64>()),
        Some(s) => Some(
            s.parse::<u64>()
                .map_err(|_| Failure::Usage(format!("--seed expects an integer or \"random\", got {s:?}")))?,
        ),
    };
    match cli.command {
        Command::Oversample(a) => oversample(a, announce(seed.unwrap_or(DEFAULT_SEED))),
        Command::Partition(a) => {
            announce(seed.unwrap_or(DEFAULT_SEED));
            partition(a)
        }
        Command::Benchmark(a) => benchmark(a, seed),
        Command::Iscore(a) => {
            announce(seed.unwrap_or(DEFAULT_SEED));
            iscore(a)
        }
        Command::Wsrt(a) => {
            announce(seed.unwrap_or(DEFAULT_SEED));
            wsrt_cmd(a)
        }
        Command::Version => {
            announce(seed.unwrap_or(DEFAULT_SEED));
            println!("prowras {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn usage_for_args() -> String {
    let mut cmd = Cli::command();
    let sub = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    match sub.and_then(|name| cmd.find_subcommand_mut(&name).map(|c| c.render_usage())) {
        Some(usage) => usage.to_string().replacen("Usage: ", "Usage: prowras ", 1),
        None => cmd.render_usage().to_string(),
    }
}

fn announce(seed: u64) -> u64 {
    eprintln!("seed: {seed}");
    seed
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.to_string()))
}

/// Resolves the label column against the file header and loads the data.
/// Returns the dataset and the label's position in the header.
fn load_input(input: &InputArgs) -> Result<(Dataset, usize), Failure> {
    let mut reader = csv::Reader::from_path(&input.input)
        .map_err(|e| Failure::Core(Error::Csv(e)))?;
    let header = reader.headers().map_err(|e| Failure::Core(Error::Csv(e)))?.clone();
    if header.is_empty() {
        return Err(Failure::Core(Error::InvalidDataset("empty header".into())));
    }
    let idx = match &input.label_column {
        None => header.len() - 1,
        Some(name) => header
            .iter()
            .position(|h| h.trim() == name)
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i < header.len()))
            .ok_or_else(|| Failure::Core(Error::MissingLabelColumn(name.clone())))?,
    };
    let d = load_csv(&input.input, LabelColumn::Index(idx), input.minority_label.as_deref())?;
    info!(
        "loaded {} rows, {} features, {} minority ({:?})",
        d.n_samples(),
        d.n_feats(),
        d.minority_count(),
        d.minority_label()
    );
    Ok((d, idx))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Failure::Core(Error::io(p, e)))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn oversample(a: OversampleArgs, seed: u64) -> Result<(), Failure> {
    let (d, label_idx) = load_input(&a.input)?;
    let norm = if a.no_normalize { None } else { Some(Normalizer::fit(d.features())?) };
    let work = match &norm {
        Some(n) => n.apply(&d),
        None => d.clone(),
    };
    let sigma = Sigma::Scalar(a.sigma);
    let method = match a.method {
        MethodArg::Prowras => {
            let p = a.partition.params();
            Method::Prowras {
                params: ProwrasParams {
                    max_levels: p.max_levels,
                    n_neighbours_max: p.n_neighbours_max,
                    theta: p.theta,
                    shadow: a.shadow,
                    sigma,
                    max_conv: a.max_conv,
                    neb_conv: a.neb_conv,
                    ..ProwrasParams::default()
                },
                scheme: a.scheme,
            }
        }
        MethodArg::Smote => Method::Smote { k: a.k },
        MethodArg::Prowsyn => Method::Prowsyn {
            partition: a.partition.params(),
        },
        MethodArg::Loras => Method::Loras {
            params: LorasParams {
                k: a.k,
                shadow: a.shadow,
                sigma,
                n_aff: a.n_aff,
            },
        },
        MethodArg::Pfsmote => Method::Pfsmote,
    };
    let resolved = match &method {
        Method::Prowras {
            params,
            scheme: SchemeChoice::Auto,
        } => {
            let selection = select_scheme(&work, &a.classifier.spec(), params, derive_seed(seed, &["scheme"], &[]))?;
            eprintln!("scheme: {}", selection.scheme);
            Some(selection.scheme)
        }
        _ => None,
    };
    let n = a.n.unwrap_or_else(|| default_sample_count(&d));
    let batch = method.oversample(&work, n, resolved, seed)?;
    info!("generated {} samples", batch.len());
    let points = match &norm {
        Some(nz) => nz.inverse(&batch.points),
        None => batch.points.clone(),
    };

    let mut header = d.header();
    let label = header.pop().unwrap_or_default();
    header.insert(label_idx, label);
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(&header).map_err(|e| Failure::Core(Error::Csv(e)))?;
    for row in points.rows() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.insert(label_idx, batch.label.clone());
        w.write_record(&rec).map_err(|e| Failure::Core(Error::Csv(e)))?;
    }
    w.flush()?;
    Ok(())
}

fn partition(a: PartitionArgs) -> Result<(), Failure> {
    let (d, _) = load_input(&a.input)?;
    let work = if a.no_normalize {
        d
    } else {
        Normalizer::fit(d.features())?.apply(&d)
    };
    let p = partition_minority(&work, &a.partition.params())?;
    let value = serde_json::to_value(&p).map_err(|e| Failure::Internal(e.to_string()))?;
    emit_json(a.out.as_deref(), &value)
}

fn benchmark(a: BenchmarkArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = BenchmarkConfig::from_file(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    announce(cfg.seed);
    let datasets = cfg.load_datasets()?;

    if let Some(dir) = &a.export_folds {
        let slot = match &a.export_slot {
            Some(name) => cfg
                .classifiers
                .iter()
                .find(|c| c.label() == name)
                .ok_or_else(|| Failure::Usage(format!("no classifier slot named {name:?}")))?,
            None => cfg
                .classifiers
                .iter()
                .find(|c| matches!(c.source, ClassifierSource::External { .. }))
                .or(cfg.classifiers.first())
                .ok_or_else(|| Failure::Usage("config has no classifiers".into()))?,
        };
        let written = export_folds(&cfg, &datasets, slot, dir)?;
        eprintln!("exported {} fold files to {}", written.len(), dir.display());
        return Ok(());
    }

    let rt = run_benchmark(&cfg)?;
    let failed = rt.rows.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        warn!("{failed} of {} rows failed", rt.rows.len());
    }
    let mut out = output(a.out.as_deref())?;
    out.write_all(rt.to_json_lines()?.as_bytes())?;
    out.flush()?;
    if let Some(path) = &a.csv {
        rt.write_csv_table(path, a.decimals)?;
    }
    Ok(())
}

fn iscore(a: IscoreArgs) -> Result<(), Failure> {
    let rt = ResultsTable::read(&a.input)?;
    let cube = rt.cube(a.metric)?.rounded(a.decimals);
    let scores = iscore_all(&cube, a.tolerance)?;
    let map: Map<String, Value> = scores.into_iter().map(|(o, s)| (o, json!(s))).collect();
    emit_json(None, &Value::Object(map))
}

fn wsrt_cmd(a: WsrtArgs) -> Result<(), Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&a.input)
        .map_err(|e| Failure::Core(Error::Csv(e)))?;
    let header = reader.headers().map_err(|e| Failure::Core(Error::Csv(e)))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Core(Error::InvalidDataset(format!("column {name:?} not found"))))
    };
    let (ia, ib) = (column(&a.a)?, column(&a.b)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::Core(Error::Csv(e)))?;
        for (j, dst) in [(ia, &mut xs), (ib, &mut ys)] {
            let cell = record.get(j).unwrap_or("");
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Failure::Core(Error::NonNumeric {
                    row: r + 2,
                    column: j + 1,
                    value: cell.to_string(),
                })
            })?;
            dst.push(v);
        }
    }
    let res = wsrt(&xs, &ys)?;
    if res.degenerate {
        warn!("all paired differences are zero");
    }
    let value = serde_json::to_value(&res).map_err(|e| Failure::Internal(e.to_string()))?;
    emit_json(None, &value)
}

/// Rounds every float to six significant digits. Integers pass through.
fn round_numbers(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            format!("{x:.5e}").parse::<f64>().map_or(Value::Null, |r| json!(r))
        }
        Value::Array(items) => Value::Array(items.iter().map(round_numbers).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), round_numbers(x))).collect()),
        other => other.clone(),
    }
}

fn emit_json(path: Option<&Path>, v: &Value) -> Result<(), Failure> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, &round_numbers(v)).map_err(|e| Failure::Internal(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
