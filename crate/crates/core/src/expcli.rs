//! Command-line experiments. Every artifact starts with the full
//! configuration and library version so a run can be repeated exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cayley::{self, CayleyError, CayleyGraph, GapRow};
use crate::ffield::odd_primes_in;
use crate::fricke::{self, FrickeError};
use crate::freeword::Word;
use crate::matgroup::{generates, FiniteGroup, GroupError, GroupKind, GroupTable, Mat};
use crate::measures::{self, GroupContext, Measure, MeasureError, Norm};
use crate::rng::{lab_rng, RNG_ALGORITHM};
use crate::spectra::{self, SpectraError};
use crate::SCHEMA_VERSION;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const DEFAULT_TIME_LIMIT_SECS: u64 = 20 * 60;
pub const THREADS_ENV: &str = "WORDLAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("validation failed: {0}")]
    Oracle(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Oracle(_) => EXIT_ORACLE,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::BudgetExceeded { .. } | MeasureError::Group(GroupError::BudgetExceeded { .. }) => {
                CliError::Budget(e.to_string())
            }
            MeasureError::NotInGroup(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<GroupError> for CliError {
    fn from(e: GroupError) -> Self {
        match e {
            GroupError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            GroupError::BadModulus(_) | GroupError::UnknownKind(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<FrickeError> for CliError {
    fn from(e: FrickeError) -> Self {
        match e {
            FrickeError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            FrickeError::OracleMismatch { .. } => CliError::Oracle(e.to_string()),
            FrickeError::ArityUnsupported(_) | FrickeError::WordTooLong(_) | FrickeError::BadSpec(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<SpectraError> for CliError {
    fn from(e: SpectraError) -> Self {
        match e {
            SpectraError::Inaccurate(_) => CliError::Oracle(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<CayleyError> for CliError {
    fn from(e: CayleyError) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Options shared by all subcommands; each command reads the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct Opts {
    /// Group: sl2, gl2 or pgl2
    #[arg(long)]
    pub group: Option<String>,
    /// Odd prime
    #[arg(long)]
    pub p: Option<u64>,
    /// Prime range lo:hi (inclusive)
    #[arg(long)]
    pub primes: Option<String>,
    /// Word text (a-d, A-D for inverses) or a named relator; repeatable
    #[arg(long)]
    pub word: Vec<String>,
    /// Norm: 1, 2 or inf
    #[arg(long)]
    pub q: Option<String>,
    #[arg(long)]
    pub t_max: Option<u32>,
    /// Convolution powers, comma separated
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<u32>,
    /// Mixing threshold (default 0.5)
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Monte-Carlo samples (word measures) or relators (survey)
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override of the evaluation budget
    #[arg(long)]
    pub budget: Option<u128>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Zeta arguments, comma separated
    #[arg(long, value_delimiter = ',')]
    pub s: Vec<f64>,
    /// Matrix entries a,b,c,d of a target element (row-major)
    #[arg(long, allow_hyphen_values = true)]
    pub element: Option<String>,
    /// Free-group rank
    #[arg(long)]
    pub r: Option<usize>,
    /// Largest walk or word length
    #[arg(long)]
    pub lmax: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Number of random generating pairs
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Word-length range lo:hi
    #[arg(long)]
    pub lengths: Option<String>,
    /// Prime window lo:hi for component estimates
    #[arg(long)]
    pub window: Option<String>,
    /// Dimension override for component estimates
    #[arg(long)]
    pub dim: Option<u32>,
    /// Diagnostic variety: x2+1, x2-2, product, x2+y2
    #[arg(long)]
    pub variety: Option<String>,
    /// Soft wall-clock limit in seconds
    #[arg(long)]
    pub time_limit: Option<u64>,
    /// Artifact format
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Artifact path; the summary still goes to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Exact (or sampled) word measure on a matrix group
    WordMeasure(Opts),
    /// L^q mixing time of a word measure
    MixingTime(Opts),
    /// Character table of the group
    CharTable(Opts),
    /// Representation zeta function values
    Zeta(Opts),
    /// Fiber sizes of a word map with Lang-Weil ratios
    FiberCount(Opts),
    /// Probability that w(g) has a large centralizer
    CentralizerTail(Opts),
    /// Fourier coefficients of a word measure per irreducible
    SpectralDecay(Opts),
    /// Spectral gap and diameter of Cayley graphs of random generating pairs
    CayleyGap(Opts),
    /// Random-walk deviation against the spectral bound
    WalkBound(Opts),
    /// Return probability of random words in a free group
    Kesten(Opts),
    /// Trace polynomial of a two-letter word
    TracePoly(Opts),
    /// Point counts of a one-relator character variety
    CharvarietyCount(Opts),
    /// Dimension estimate from point counts
    CharvarietyDim(Opts),
    /// Averaged normalised counts (component estimate)
    ChebotarevAvg(Opts),
    /// Dimension survey over random relators
    RandomRelatorSurvey(Opts),
    /// Fiber flatness of convolved commutators on SL2 versus PGL2
    PglContrast(Opts),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::WordMeasure(_) => "word-measure",
            Command::MixingTime(_) => "mixing-time",
            Command::CharTable(_) => "char-table",
            Command::Zeta(_) => "zeta",
            Command::FiberCount(_) => "fiber-count",
            Command::CentralizerTail(_) => "centralizer-tail",
            Command::SpectralDecay(_) => "spectral-decay",
            Command::CayleyGap(_) => "cayley-gap",
            Command::WalkBound(_) => "walk-bound",
            Command::Kesten(_) => "kesten",
            Command::TracePoly(_) => "trace-poly",
            Command::CharvarietyCount(_) => "charvariety-count",
            Command::CharvarietyDim(_) => "charvariety-dim",
            Command::ChebotarevAvg(_) => "chebotarev-avg",
            Command::RandomRelatorSurvey(_) => "random-relator-survey",
            Command::PglContrast(_) => "pgl-contrast",
        }
    }

    pub fn opts(&self) -> &Opts {
        match self {
            Command::WordMeasure(o)
            | Command::MixingTime(o)
            | Command::CharTable(o)
            | Command::Zeta(o)
            | Command::FiberCount(o)
            | Command::CentralizerTail(o)
            | Command::SpectralDecay(o)
            | Command::CayleyGap(o)
            | Command::WalkBound(o)
            | Command::Kesten(o)
            | Command::TracePoly(o)
            | Command::CharvarietyCount(o)
            | Command::CharvarietyDim(o)
            | Command::ChebotarevAvg(o)
            | Command::RandomRelatorSurvey(o)
            | Command::PglContrast(o) => o,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wordlab", version, about = "Word maps, character tables and character varieties over small prime fields")]
pub struct Cli {
    /// Worker threads (default: available parallelism; WORDLAB_THREADS overrides)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Configuration embedded in every artifact header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub version: String,
    pub schema_version: u32,
    pub options: Opts,
}

impl ExperimentConfig {
    pub fn new(command: &Command) -> Self {
        let mut options = command.opts().clone();
        // the output location does not affect the result
        options.out = None;
        Self {
            command: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            options,
        }
    }

    /// Recovers the configuration from a JSON or CSV artifact.
    pub fn from_artifact(text: &str) -> Result<Self, String> {
        if text.starts_with('#') {
            let line = text
                .lines()
                .find_map(|l| l.strip_prefix("# config: "))
                .ok_or("CSV artifact has no config line")?;
            serde_json::from_str(line).map_err(|e| e.to_string())
        } else {
            let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
            serde_json::from_value(v.get("config").cloned().ok_or("JSON artifact has no config")?)
                .map_err(|e| e.to_string())
        }
    }

    /// Command-line arguments that reproduce this run.
    pub fn to_argv(&self) -> Vec<String> {
        let mut v = vec!["wordlab".to_string(), self.command.clone()];
        let o = &self.options;
        let mut push = |k: &str, val: String| {
            v.push(format!("--{k}"));
            v.push(val);
        };
        macro_rules! opt {
            ($field:ident, $flag:expr) => {
                if let Some(x) = &o.$field {
                    push($flag, x.to_string());
                }
            };
        }
        opt!(group, "group");
        opt!(p, "p");
        opt!(primes, "primes");
        for w in &o.word {
            push("word", w.clone());
        }
        opt!(q, "q");
        opt!(t_max, "t-max");
        if !o.t.is_empty() {
            push("t", o.t.iter().map(u32::to_string).collect::<Vec<_>>().join(","));
        }
        opt!(threshold, "threshold");
        opt!(samples, "samples");
        opt!(seed, "seed");
        opt!(budget, "budget");
        opt!(delta, "delta");
        if !o.s.is_empty() {
            push("s", o.s.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        }
        opt!(element, "element");
        opt!(r, "r");
        opt!(lmax, "lmax");
        opt!(trials, "trials");
        opt!(pairs, "pairs");
        opt!(lengths, "lengths");
        opt!(window, "window");
        opt!(dim, "dim");
        opt!(variety, "variety");
        opt!(time_limit, "time-limit");
        if let Some(f) = o.format {
            push("format", if f == Format::Json { "json" } else { "csv" }.to_string());
        }
        v
    }
}

/// Renders a JSON artifact: config header plus result.
pub fn json_artifact(config: &ExperimentConfig, result: Value) -> String {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "version": config.version,
        "config": config,
        "result": result,
    });
    serde_json::to_string_pretty(&doc).expect("serialisable") + "\n"
}

/// Renders a CSV artifact with `#` header lines.
pub fn csv_artifact(config: &ExperimentConfig, body: &str) -> String {
    format!(
        "# schema_version: {SCHEMA_VERSION}\n# version: {}\n# config: {}\n{body}",
        config.version,
        serde_json::to_string(config).expect("serialisable")
    )
}

struct Output {
    artifact: String,
    summary: String,
}

/// Entry point used by the binary: returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut stdout = std::io::stdout().lock();
    run_with(argv, &mut stdout)
}

/// Like [`run`], writing the summary to `out`.
pub fn run_with<I, T, W: Write>(argv: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
                    if e.kind() != ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand =>
                {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    eprintln!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .or(cli.threads)
        .unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = pool.install(|| dispatch(&cli.command));
    match result {
        Ok(o) => {
            if let Some(path) = &cli.command.opts().out {
                if let Err(e) = std::fs::write(path, &o.artifact) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return EXIT_FAILURE;
                }
                let _ = write!(out, "{}", o.summary);
            } else {
                let _ = write!(out, "{}", o.summary);
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a command and returns its artifact text (no file output).
pub fn artifact_for(argv: &[&str]) -> Result<String, CliError> {
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    dispatch(&cli.command).map(|o| o.artifact)
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required option --{flag}")))
}

fn parse_range(text: &str, flag: &str) -> Result<(u64, u64), CliError> {
    let bad = || CliError::Usage(format!("--{flag} expects lo:hi, got `{text}`"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let lo = a.trim().parse().map_err(|_| bad())?;
    let hi = b.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn group_kind(o: &Opts) -> Result<GroupKind, CliError> {
    o.group
        .as_deref()
        .unwrap_or("sl2")
        .parse()
        .map_err(|e: GroupError| CliError::Usage(e.to_string()))
}

fn context(o: &Opts) -> Result<Arc<GroupContext>, CliError> {
    Ok(GroupContext::new(group_kind(o)?, need(&o.p, "p")?)?)
}

fn first_word(o: &Opts) -> Result<Word, CliError> {
    let text = o.word.first().ok_or_else(|| CliError::Usage("missing required option --word".into()))?;
    match fricke::named_word(text) {
        Some(w) => Ok(w),
        None => Word::parse(text).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn norm(o: &Opts) -> Result<Norm, CliError> {
    o.q.as_deref().unwrap_or("2").parse().map_err(CliError::Usage)
}

fn word_measure(o: &Opts, ctx: &Arc<GroupContext>, w: &Word) -> Result<Measure, CliError> {
    match o.samples {
        Some(n) if n > 0 => Ok(measures::word_measure_mc(w, ctx, n, o.seed.unwrap_or(0))),
        Some(_) => Err(CliError::Usage("--samples must be positive".into())),
        None => Ok(measures::word_measure_exact_with_budget(
            w,
            ctx,
            o.budget.unwrap_or(measures::DEFAULT_EVAL_BUDGET),
        )?),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

/// Soft wall-clock limit checked between units of work.
struct Deadline {
    start: Instant,
    limit: Duration,
}

impl Deadline {
    fn new(o: &Opts) -> Self {
        Self {
            start: Instant::now(),
            limit: Duration::from_secs(o.time_limit.unwrap_or(DEFAULT_TIME_LIMIT_SECS)),
        }
    }

    fn expired(&self) -> bool {
        let e = self.start.elapsed() > self.limit;
        if e {
            log::warn!("soft time limit of {:?} reached; writing partial results", self.limit);
        }
        e
    }
}

fn emit(o: &Opts, config: &ExperimentConfig, default: Format, json_result: Value, csv_body: Option<String>, summary: String) -> Output {
    let artifact = match (o.format.unwrap_or(default), csv_body) {
        (Format::Csv, Some(body)) => csv_artifact(config, &body),
        _ => json_artifact(config, json_result),
    };
    Output { artifact, summary }
}

fn dispatch(cmd: &Command) -> Result<Output, CliError> {
    let o = cmd.opts();
    let config = ExperimentConfig::new(cmd);
    match cmd {
        Command::WordMeasure(_) => cmd_word_measure(o, &config),
        Command::MixingTime(_) => cmd_mixing_time(o, &config),
        Command::CharTable(_) => cmd_char_table(o, &config),
        Command::Zeta(_) => cmd_zeta(o, &config),
        Command::FiberCount(_) => cmd_fiber_count(o, &config),
        Command::CentralizerTail(_) => cmd_centralizer_tail(o, &config),
        Command::SpectralDecay(_) => cmd_spectral_decay(o, &config),
        Command::CayleyGap(_) => cmd_cayley_gap(o, &config),
        Command::WalkBound(_) => cmd_walk_bound(o, &config),
        Command::Kesten(_) => cmd_kesten(o, &config),
        Command::TracePoly(_) => cmd_trace_poly(o, &config),
        Command::CharvarietyCount(_) => cmd_charvariety_count(o, &config),
        Command::CharvarietyDim(_) => cmd_charvariety_dim(o, &config),
        Command::ChebotarevAvg(_) => cmd_chebotarev_avg(o, &config),
        Command::RandomRelatorSurvey(_) => cmd_survey(o, &config),
        Command::PglContrast(_) => cmd_pgl_contrast(o, &config),
    }
}

fn cmd_word_measure(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let w = first_word(o)?;
    let tau = word_measure(o, &ctx, &w)?;
    let dists: BTreeMap<String, f64> = [Norm::L1, Norm::L2, Norm::Inf]
        .iter()
        .map(|&q| (q.to_string(), measures::lq_distance(&tau, q)))
        .collect();
    let exponent = measures::word_exponent(&tau);
    let summary = format!(
        "{} word {} classes {} exponent {:.6} L1 {:.6e} L2 {:.6e} Linf {:.6e}\n",
        ctx.label(),
        w,
        ctx.k(),
        exponent,
        dists["1"],
        dists["2"],
        dists["inf"]
    );
    let result = json!({
        "measure": to_value(&tau.export()),
        "distances": dists,
        "word_exponent": exponent,
    });
    Ok(emit(o, config, Format::Json, result, None, summary))
}

fn cmd_mixing_time(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let w = first_word(o)?;
    let q = norm(o)?;
    let tau = word_measure(o, &ctx, &w)?;
    let t_max = o.t_max.unwrap_or(10).max(1);
    let threshold = o.threshold.unwrap_or(measures::MIXING_THRESHOLD);
    let outcome = measures::mixing_time(&tau, q, t_max, threshold);
    let summary = match outcome {
        measures::MixingOutcome::Mixed { t, .. } => format!("{t}\n"),
        measures::MixingOutcome::NotReached { t_max, last_distance } => {
            format!("not reached within {t_max} steps (last distance {last_distance:.6e})\n")
        }
    };
    let result = json!({
        "group": ctx.label(),
        "word": w.to_string(),
        "q": q.to_string(),
        "threshold": threshold,
        "outcome": to_value(&outcome),
    });
    Ok(emit(o, config, Format::Json, result, None, summary))
}

fn table_for(ctx: &GroupContext) -> Result<spectra::CharTable, CliError> {
    Ok(spectra::character_table_from_constants(&ctx.classes, &ctx.constants)?)
}

fn cmd_char_table(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let ct = table_for(&ctx)?;
    let bound = spectra::centralizer_bound_check(&ct, &ctx.classes);
    let summary = format!(
        "{}: {} classes, degrees {:?}, row error {:.2e}, column error {:.2e}\n",
        ctx.label(),
        ct.k(),
        ct.degrees,
        ct.row_orthogonality_error(),
        ct.column_orthogonality_error()
    );
    let result = json!({
        "group": ctx.label(),
        "table": to_value(&ct.export()),
        "representatives": (0..ctx.k()).map(|c| ctx.group.element(ctx.classes.reps[c]).rows()).collect::<Vec<_>>(),
        "row_orthogonality_error": ct.row_orthogonality_error(),
        "column_orthogonality_error": ct.column_orthogonality_error(),
        "centralizer_bound": to_value(&bound),
    });
    Ok(emit(o, config, Format::Json, result, None, summary))
}

fn cmd_zeta(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let ct = table_for(&ctx)?;
    let s = if o.s.is_empty() { vec![0.0, 2.0] } else { o.s.clone() };
    let values: Vec<Value> = s.iter().map(|&x| json!({"s": x, "zeta": spectra::zeta(&ct, x)})).collect();
    let mut summary = String::new();
    for &x in &s {
        summary += &format!("zeta({x}) = {:.12}\n", spectra::zeta(&ct, x));
    }
    let result = json!({"group": ctx.label(), "degrees": ct.degrees, "values": values});
    Ok(emit(o, config, Format::Json, result, None, summary))
}

fn parse_element(text: &str, p: u64) -> Result<Mat, CliError> {
    let v: Vec<i64> = text
        .split(',')
        .map(|s| s.trim().parse::<i64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--element expects a,b,c,d, got `{text}`")))?;
    if v.len() != 4 {
        return Err(CliError::Usage(format!("--element expects four entries, got {}", v.len())));
    }
    Ok(Mat::from_rows([[v[0], v[1]], [v[2], v[3]]], p))
}

fn cmd_fiber_count(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let w = first_word(o)?;
    let tau = measures::word_measure_exact_with_budget(&w, &ctx, o.budget.unwrap_or(measures::DEFAULT_EVAL_BUDGET))?;
    let fibers = measures::fiber_counts_by_class(&tau).expect("exact measure");
    let rows: Vec<Value> = fibers
        .iter()
        .enumerate()
        .map(|(c, f)| {
            json!({
                "class": c,
                "representative": ctx.group.element(ctx.classes.reps[c]).rows(),
                "class_size": ctx.classes.sizes[c],
                "count": f.count.to_string(),
                "lang_weil_ratio": f.lang_weil_ratio,
            })
        })
        .collect();
    let mut csv = String::from("class,representative,class_size,count,lang_weil_ratio\n");
    for (c, f) in fibers.iter().enumerate() {
        csv += &format!(
            "{c},{},{},{},{:.12}\n",
            ctx.group.element(ctx.classes.reps[c]).to_string().replace(',', " "),
            ctx.classes.sizes[c],
            f.count,
            f.lang_weil_ratio
        );
    }
    let target = match &o.element {
        Some(text) => parse_element(text, ctx.group.p() as u64)?,
        None => measures::generic_element(&ctx),
    };
    let picked = measures::fiber_count_from_measure(&tau, &target)?;
    let summary = format!(
        "|w^-1({})| = {} ratio {:.6}\n",
        ctx.group.canonical(&target),
        picked.count,
        picked.lang_weil_ratio
    );
    let result = json!({
        "group": ctx.label(),
        "word": w.to_string(),
        "target": ctx.group.canonical(&target).rows(),
        "target_count": picked.count.to_string(),
        "target_ratio": picked.lang_weil_ratio,
        "classes": rows,
    });
    Ok(emit(o, config, Format::Json, result, Some(csv), summary))
}

fn cmd_centralizer_tail(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let w = first_word(o)?;
    let tau = word_measure(o, &ctx, &w)?;
    let delta = o.delta.unwrap_or(0.9);
    let prob = measures::centralizer_tail(&tau, delta)?;
    let result = json!({"group": ctx.label(), "word": w.to_string(), "delta": delta, "probability": prob});
    Ok(emit(o, config, Format::Json, result, None, format!("{prob:.12}\n")))
}

fn cmd_spectral_decay(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let ctx = context(o)?;
    let w = first_word(o)?;
    let tau = word_measure(o, &ctx, &w)?;
    let ct = table_for(&ctx)?;
    let prof = spectra::spectral_decay_profile(&tau, &ct)?;
    let mut csv = String::from("irreducible,degree,coeff_abs,ratio,vanishing\n");
    for e in &prof.entries {
        csv += &format!("{},{},{:.12e},{:.12e},{}\n", e.irreducible, e.degree, e.coeff_abs, e.ratio, e.vanishing);
    }
    let summary = format!(
        "epsilon_hat {} max |a|/deg {:.6e}\n",
        prof.epsilon_hat.map_or("n/a".to_string(), |e| format!("{e:.6}")),
        prof.max_ratio
    );
    Ok(emit(o, config, Format::Json, to_value(&prof), Some(csv), summary))
}

fn primes_or_p(o: &Opts, default: (u64, u64)) -> Result<Vec<u64>, CliError> {
    if let Some(p) = o.p {
        return Ok(vec![p]);
    }
    let (lo, hi) = match &o.primes {
        Some(t) => parse_range(t, "primes")?,
        None => default,
    };
    Ok(odd_primes_in(lo, hi))
}

/// Uniformly random pairs of elements that generate the group.
pub fn random_generating_pairs(g: &GroupTable, count: usize, seed: u64) -> Vec<[usize; 2]> {
    let mut rng = lab_rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pair = [rng.random_range(0..g.order()), rng.random_range(0..g.order())];
        if generates(g, &pair) {
            out.push(pair);
        }
    }
    out
}

/// The pair of elementary unipotent matrices.
pub fn standard_pair(g: &GroupTable) -> [usize; 2] {
    let p = g.p() as u64;
    [
        g.index_of(&Mat::from_rows([[1, 1], [0, 1]], p)).expect("in group"),
        g.index_of(&Mat::from_rows([[1, 0], [1, 1]], p)).expect("in group"),
    ]
}

fn cmd_cayley_gap(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let kind = group_kind(o)?;
    let primes = primes_or_p(o, (5, 13))?;
    let pairs = o.pairs.unwrap_or(20);
    let seed = o.seed.unwrap_or(0);
    let deadline = Deadline::new(o);
    let mut rows = Vec::new();
    let mut all_hold = true;
    let mut truncated = false;
    for &p in &primes {
        if deadline.expired() {
            truncated = true;
            break;
        }
        let g = GroupTable::enumerate(kind, p)?;
        for pair in random_generating_pairs(&g, pairs, seed.wrapping_add(p)) {
            let graph = CayleyGraph::new(&g, &pair)?;
            let rep = cayley::check_gap_diameter(&graph)?;
            all_hold &= rep.holds;
            rows.push(GapRow {
                p,
                generators_hash: cayley::generators_hash(&[g.element(pair[0]), g.element(pair[1])]),
                order: g.order(),
                diameter: rep.diameter,
                lambda1: rep.lambda1,
                bound_slack: rep.slack,
            });
        }
    }
    let summary = format!(
        "{} graphs, gap-diameter bound {}{}\n",
        rows.len(),
        if all_hold { "holds" } else { "VIOLATED" },
        if truncated { " (truncated)" } else { "" }
    );
    let result = json!({"rows": rows, "all_hold": all_hold, "truncated": truncated, "rng": RNG_ALGORITHM});
    Ok(emit(o, config, Format::Csv, result, Some(cayley::gap_rows_csv(&rows)), summary))
}

fn cmd_walk_bound(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let g = GroupTable::enumerate(group_kind(o)?, need(&o.p, "p")?)?;
    let lmax = o.lmax.unwrap_or(60);
    let pairs = match o.pairs {
        Some(n) => random_generating_pairs(&g, n, o.seed.unwrap_or(0)),
        None => vec![standard_pair(&g)],
    };
    let mut csv = String::from("pair,steps,deviation,bound,holds\n");
    let mut series = Vec::new();
    let mut all_hold = true;
    for (i, pair) in pairs.iter().enumerate() {
        let graph = CayleyGraph::new(&g, pair)?;
        let s = cayley::walk_deviation_series(&graph, lmax)?;
        for w in &s {
            all_hold &= w.holds;
            csv += &format!("{i},{},{:.12e},{:.12e},{}\n", w.steps, w.deviation, w.bound, w.holds);
        }
        series.push(s);
    }
    let summary = format!("{} pair(s), l <= {lmax}: bound {}\n", pairs.len(), if all_hold { "holds" } else { "VIOLATED" });
    let result = json!({"group": g.label(), "pairs": pairs, "series": series, "all_hold": all_hold});
    Ok(emit(o, config, Format::Csv, result, Some(csv), summary))
}

fn cmd_kesten(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let r = o.r.unwrap_or(2).max(1);
    let lmax = o.lmax.unwrap_or(30);
    let trials = o.trials.unwrap_or(1_000_000);
    let rep = cayley::kesten_return(r, lmax, trials, o.seed.unwrap_or(0));
    let mut csv = String::from("length,trivial,empirical,exact,reference\n");
    for row in &rep.rows {
        csv += &format!("{},{},{:.12e},{:.12e},{:.12e}\n", row.length, row.trivial, row.empirical, row.exact, row.reference);
    }
    let summary = format!(
        "per-step rate {:.6} (prefactor-corrected, l >= {}), plain fit {:.6}, reference log(sqrt(2r-1)/r) = {:.6}\n",
        rep.corrected_rate, rep.corrected_from, rep.plain_rate, rep.reference_rate
    );
    Ok(emit(o, config, Format::Json, to_value(&rep), Some(csv), summary))
}

fn two_letter_word(text: &str) -> Result<Word, CliError> {
    fricke::resolve_word(text).map_err(CliError::Usage)
}

fn cmd_trace_poly(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    if o.word.is_empty() {
        return Err(CliError::Usage("missing required option --word".into()));
    }
    let mut engine = fricke::TraceEngine::new();
    let mut items = Vec::new();
    let mut summary = String::new();
    for text in &o.word {
        let w = two_letter_word(text)?;
        let poly = engine.trace_poly(&w)?;
        summary += &format!("P[{w}] = {poly}\n");
        items.push(json!({
            "word": w.to_string(),
            "polynomial": poly.to_string(),
            "degree": poly.degree(),
            "validated_primes": fricke::ORACLE_PRIMES,
            "validated_pairs": fricke::ORACLE_PAIRS,
        }));
    }
    Ok(emit(o, config, Format::Json, json!({"polynomials": items}), None, summary))
}

fn series_for(o: &Opts, spec: &fricke::VarietySpec, default: (u64, u64)) -> Result<(fricke::CountSeries, bool), CliError> {
    let primes = primes_or_p(o, default)?;
    let deadline = Deadline::new(o);
    let budget = o.budget.unwrap_or(fricke::DEFAULT_POINT_BUDGET);
    let mut rows = Vec::with_capacity(primes.len());
    let mut truncated = false;
    for p in primes {
        if deadline.expired() {
            truncated = true;
            break;
        }
        rows.push(fricke::count_points_with_budget(spec, p, budget)?);
    }
    Ok((
        fricke::CountSeries {
            label: spec.label.clone(),
            rows,
        },
        truncated,
    ))
}

fn spec_metadata(spec: &fricke::VarietySpec) -> Value {
    json!({
        "label": spec.label,
        "nvars": spec.nvars,
        "equations": spec.equations.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        "inequations": spec.inequations.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        "excluded_box": if spec.exclude_box {
            "points with every coordinate in {0, ±1, ±√2, (1±√5)/2} mod p are struck; this box contains the exceptional set, so net counts carry an O(1) ambiguity"
        } else {
            "none"
        },
    })
}

fn dim_and_components(series: &fricke::CountSeries, window: Option<(u64, u64)>, dim_override: Option<u32>) -> Value {
    let dim = fricke::estimate_dim(series);
    let d = dim_override.or_else(|| dim.as_ref().ok().and_then(|d| d.dimension));
    let window = window.unwrap_or_else(|| {
        let lo = series.rows.first().map_or(0, |r| r.p);
        let hi = series.rows.last().map_or(0, |r| r.p);
        (lo, hi)
    });
    let comp = d.map(|d| fricke::estimate_components(series, d, window));
    json!({
        "dimension": match &dim {
            Ok(d) => to_value(d),
            Err(e) => json!({"error": e.to_string()}),
        },
        "components": match comp {
            Some(Ok(c)) => to_value(&c),
            Some(Err(e)) => json!({"error": e.to_string()}),
            None => Value::Null,
        },
    })
}

fn variety_from_opts(o: &Opts) -> Result<fricke::VarietySpec, CliError> {
    if let Some(v) = &o.variety {
        return match v.as_str() {
            "x2+1" => Ok(fricke::spec_x2_plus_1()),
            "x2-2" => Ok(fricke::spec_x2_minus_2()),
            "product" => Ok(fricke::spec_product()),
            "x2+y2" => Ok(fricke::spec_x2_plus_y2()),
            _ => Err(CliError::Usage(format!("unknown variety `{v}` (x2+1, x2-2, product, x2+y2)"))),
        };
    }
    let text = o.word.first().ok_or_else(|| CliError::Usage("missing --word or --variety".into()))?;
    Ok(fricke::variety_spec(&two_letter_word(text)?)?)
}

fn cmd_charvariety_count(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let spec = variety_from_opts(o)?;
    let (series, truncated) = series_for(o, &spec, (5, 97))?;
    let window = o.window.as_deref().map(|w| parse_range(w, "window")).transpose()?;
    let est = dim_and_components(&series, window, o.dim);
    let summary = series.to_csv();
    let result = json!({"variety": spec_metadata(&spec), "series": series, "estimates": est, "truncated": truncated});
    Ok(emit(o, config, Format::Csv, result, Some(series.to_csv()), summary))
}

fn cmd_charvariety_dim(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let spec = variety_from_opts(o)?;
    let (series, truncated) = series_for(o, &spec, (5, 97))?;
    let dim = fricke::estimate_dim(&series)?;
    let summary = match dim.dimension {
        Some(d) => format!("dimension {d} (slope {:.4} over {} primes)\n", dim.slope, dim.points_used),
        None => "empty (all net counts zero)\n".to_string(),
    };
    let result = json!({"variety": spec_metadata(&spec), "dimension": dim, "series": series, "truncated": truncated});
    Ok(emit(o, config, Format::Json, result, Some(series.to_csv()), summary))
}

fn cmd_chebotarev_avg(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let spec = variety_from_opts(o)?;
    let window = match &o.window {
        Some(w) => parse_range(w, "window")?,
        None => match &o.primes {
            Some(t) => parse_range(t, "primes")?,
            None => (1000, 10_000),
        },
    };
    let mut o2 = o.clone();
    if o2.primes.is_none() && o2.p.is_none() {
        o2.primes = Some(format!("{}:{}", window.0, window.1));
    }
    let (series, truncated) = series_for(&o2, &spec, window)?;
    let dim = match o.dim {
        Some(d) => d,
        None => fricke::estimate_dim(&series)?.dimension.unwrap_or(0),
    };
    let est = fricke::estimate_components(&series, dim, window)?;
    let summary = format!(
        "components {:.4} (dim {dim}, {} primes in [{}, {}])\n",
        est.estimate, est.primes_used, window.0, window.1
    );
    let result = json!({"variety": spec_metadata(&spec), "estimate": est, "truncated": truncated});
    Ok(emit(o, config, Format::Json, result, Some(series.to_csv()), summary))
}

fn cmd_survey(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let samples = o.samples.unwrap_or(20) as usize;
    let (l0, l1) = parse_range(o.lengths.as_deref().unwrap_or("8:24"), "lengths")?;
    let primes = parse_range(o.primes.as_deref().unwrap_or("5:47"), "primes")?;
    let rep = fricke::random_relator_survey(samples, (l0 as usize, l1 as usize), primes, o.seed.unwrap_or(0))?;
    let summary = format!(
        "{} relators, fraction with dimension 0: {:.3}\n",
        rep.samples, rep.fraction_dim0
    );
    Ok(emit(o, config, Format::Json, to_value(&rep), None, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub group: String,
    pub p: u64,
    pub t: u32,
    /// `max over classes of |count / p^((2t−1)·3) − 1|`.
    pub max_deviation: f64,
    /// `max_deviation · sqrt(p)`.
    pub scaled_deviation: f64,
    /// Share of classes (by count of classes) with `|ratio − 1| > 1/2`.
    pub far_class_fraction: f64,
    pub identity_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub rows: Vec<ContrastRow>,
    pub truncated: bool,
}

/// Fiber ratios of `[x,y]^{*t}` over class representatives for SL2 and
/// PGL2. `t = 1` rows are the non-mixing sanity rows.
pub fn pgl_contrast(primes: &[u64], ts: &[u32], budget: u128, time_limit: Duration) -> Result<ContrastReport, CliError> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut truncated = false;
    for &p in primes {
        if start.elapsed() > time_limit {
            truncated = true;
            break;
        }
        for kind in [GroupKind::SL2, GroupKind::PGL2] {
            let ctx = GroupContext::new(kind, p)?;
            let base = measures::word_measure_exact_with_budget(&Word::commutator(), &ctx, budget)?;
            let mut cur = base.clone();
            let mut cur_t = 1;
            for &t in ts {
                while cur_t < t {
                    cur = measures::convolve_measures(&cur, &base)?;
                    cur_t += 1;
                }
                let w = Word::commutator().convolution_power(t as usize);
                let counts = measures::fiber_counts_by_class(&cur).expect("exact");
                let scale = ctx.lang_weil_scale(w.rank());
                let ratios: Vec<f64> = counts.iter().map(|f| f.count as f64 / scale).collect();
                let max_deviation = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
                let far = ratios.iter().filter(|r| (*r - 1.0).abs() > 0.5).count();
                rows.push(ContrastRow {
                    group: ctx.label(),
                    p,
                    t,
                    max_deviation,
                    scaled_deviation: max_deviation * (p as f64).sqrt(),
                    far_class_fraction: far as f64 / ratios.len() as f64,
                    identity_ratio: ratios[0],
                });
            }
        }
    }
    Ok(ContrastReport { rows, truncated })
}

fn cmd_pgl_contrast(o: &Opts, config: &ExperimentConfig) -> Result<Output, CliError> {
    let primes = primes_or_p(o, (5, 13))?;
    let mut ts = if o.t.is_empty() { vec![1, 2, 3] } else { o.t.clone() };
    ts.sort_unstable();
    ts.dedup();
    if ts.first() == Some(&0) {
        return Err(CliError::Usage("--t values must be positive".into()));
    }
    let rep = pgl_contrast(
        &primes,
        &ts,
        o.budget.unwrap_or(measures::DEFAULT_EVAL_BUDGET),
        Duration::from_secs(o.time_limit.unwrap_or(DEFAULT_TIME_LIMIT_SECS)),
    )?;
    let mut csv = String::from("group,p,t,max_deviation,scaled_deviation,far_class_fraction,identity_ratio\n");
    for r in &rep.rows {
        csv += &format!(
            "{},{},{},{:.12e},{:.12e},{:.6},{:.12e}\n",
            r.group, r.p, r.t, r.max_deviation, r.scaled_deviation, r.far_class_fraction, r.identity_ratio
        );
    }
    let summary = csv.clone();
    Ok(emit(o, config, Format::Csv, to_value(&rep), Some(csv), summary))
}
