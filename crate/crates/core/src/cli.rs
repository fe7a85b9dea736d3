//! The `attrscout` command line.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::benchmark::{run_benchmark, BenchmarkError, BenchmarkSettings};
use crate::config::{parse_evaluator, parse_seeds, FileConfig, StrategyField};
use crate::domain::{AttributeSchema, Domain, SchemaError};
use crate::evaluation::{
    materialize_table, EvalError, Evaluator, EvaluatorSpec, ExternalEvaluator, ReferenceTable,
    SyntheticEvaluator, SyntheticSurface, TableError, TableEvaluator, DEFAULT_NUM_SAMPLES,
};
use crate::exec::Execution;
use crate::exploration::{Explorer, HistoryError, HistoryWriter, RunConfig, RunFailure, RunHistory};
use crate::metrics::{self, MetricError};
use crate::selection::StrategySpec;

/// Exit status classes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Evaluator(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Evaluator(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Evaluator(m) | CliError::Io(m) => m,
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<HistoryError> for CliError {
    fn from(e: HistoryError) -> Self {
        match e {
            HistoryError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) | EvalError::SchemaMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Evaluator(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "attrscout", version, about = "Find the attribute combinations a classifier fails on")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// TOML run config; flags take precedence over its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Attribute schema (TOML)
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Reference table (CSV)
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed of a single run
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma list (`1,2,5`) or range (`0..10`)
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Number of evaluations
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// random, oracle, covering[:n], genetic, bayesian[:lambda]
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// table, synthetic[:seed] or external:<command> [args]
    #[arg(long, global = true)]
    pub evaluator: Option<String>,
    /// Continue from an existing partial table or history
    #[arg(long, global = true)]
    pub resume: bool,
    /// Valid samples per evaluation
    #[arg(long, global = true)]
    pub num_samples: Option<u32>,
    /// Write timing columns as 0 so reruns compare byte for byte
    #[arg(long, global = true)]
    pub canonical: bool,
    /// Disable data-parallel execution
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a schema and print domain statistics
    Validate,
    /// Evaluate every subdomain and write a reference table
    Materialize,
    /// Run one exploration and export its history and curves
    Explore {
        /// History file [default: <out>/history.csv]
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Compare strategies over several seeds on a complete table
    Benchmark {
        /// Comma-separated strategies
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// Evaluations counted in the accuracy histogram
        #[arg(long)]
        histogram_steps: Option<usize>,
        /// Comma-separated surrogate train sizes for the Spearman sweep
        #[arg(long, value_delimiter = ',')]
        train_sizes: Vec<usize>,
    },
    /// Per-value summaries, heatmaps and curves from tables and histories
    Report {
        /// History files to summarize
        #[arg(long = "history")]
        histories: Vec<PathBuf>,
        /// Attribute pair `a,b`; repeatable
        #[arg(long = "heatmap")]
        heatmaps: Vec<String>,
    },
}

/// Flags, config file and defaults merged.
struct Settings {
    file: FileConfig,
    schema: Option<PathBuf>,
    table: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    seeds: Vec<u64>,
    budget: Option<usize>,
    strategy: Option<StrategySpec>,
    evaluator: Option<EvaluatorSpec>,
    resume: bool,
    num_samples: u32,
    canonical: bool,
    exec: Execution,
}

impl Settings {
    fn resolve(c: &Common) -> Result<Self> {
        let file = match &c.config {
            Some(p) => FileConfig::load(p).map_err(|e| match e {
                crate::config::ConfigError::Io { .. } => CliError::Io(e.to_string()),
                _ => CliError::Config(e.to_string()),
            })?,
            None => FileConfig::default(),
        };
        let table = c.table.clone().or(file.table.clone());
        let seeds = match &c.seeds {
            Some(s) => parse_seeds(s).map_err(CliError::Config)?,
            None => file.seeds.clone().unwrap_or_else(|| (0..10).collect()),
        };
        let strategy = match (&c.strategy, &file.strategy) {
            (Some(s), _) => Some(StrategyField::Short(s.clone())),
            (None, f) => f.clone(),
        }
        .map(|f| f.resolve().map_err(|e| CliError::Config(e.to_string())))
        .transpose()?;
        let evaluator = match &c.evaluator {
            Some(e) => Some(parse_evaluator(e, table.as_deref()).map_err(CliError::Config)?),
            None => file.evaluator.clone(),
        };
        let sequential = c.sequential || file.sequential.unwrap_or(false);
        Ok(Self {
            schema: c.schema.clone().or(file.schema.clone()),
            out: c.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            seed: c.seed.or(file.seed).unwrap_or(0),
            budget: c.budget.or(file.budget),
            resume: c.resume,
            num_samples: c.num_samples.or(file.num_samples).unwrap_or(DEFAULT_NUM_SAMPLES),
            canonical: c.canonical || file.canonical.unwrap_or(false),
            exec: if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
            table,
            seeds,
            strategy,
            evaluator,
            file,
        })
    }

    fn domain(&self) -> Result<Domain> {
        let path = self
            .schema
            .as_ref()
            .ok_or_else(|| CliError::Config("no schema given; pass --schema or set `schema` in the config".into()))?;
        Ok(Domain::build(AttributeSchema::load(path)?))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    /// The evaluator spec, falling back to look-ups in `--table`.
    fn evaluator_spec(&self) -> Option<EvaluatorSpec> {
        self.evaluator.clone().or_else(|| {
            self.table
                .as_ref()
                .map(|path| EvaluatorSpec::Table { path: path.clone() })
        })
    }

    fn build_evaluator(&self, domain: &Domain, spec: &EvaluatorSpec) -> Result<Box<dyn Evaluator>> {
        let schema = domain.schema().clone();
        Ok(match spec {
            EvaluatorSpec::Table { path } => {
                let table = load_table(&schema, path)?;
                Box::new(TableEvaluator::new(schema, table)?)
            }
            EvaluatorSpec::Synthetic(params) => {
                let surface = SyntheticSurface::generate(&schema, params);
                Box::new(SyntheticEvaluator::new(schema, surface)?.with_num_samples(self.num_samples))
            }
            EvaluatorSpec::External(config) => {
                let mut config = config.clone();
                config.n_samples = self.num_samples;
                Box::new(ExternalEvaluator::new(schema, config)?)
            }
        })
    }

    /// A reference table from `--table` or a table evaluator, if any.
    fn reference_table(&self, schema: &AttributeSchema) -> Result<Option<ReferenceTable>> {
        let path = self.table.clone().or_else(|| match &self.evaluator {
            Some(EvaluatorSpec::Table { path }) => Some(path.clone()),
            _ => None,
        });
        path.map(|p| load_table(schema, &p)).transpose()
    }
}

fn load_table(schema: &AttributeSchema, path: &Path) -> Result<ReferenceTable> {
    ReferenceTable::load(schema, path).map_err(|e| match e {
        TableError::SchemaMismatch { expected, found } => CliError::Config(format!(
            "refusing {}: it was written for schema {found}, but the schema in use is {expected}",
            path.display()
        )),
        TableError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::Config(format!("{}: {e}", path.display())),
    })
}

fn load_history(domain: &Domain, path: &Path) -> Result<RunHistory> {
    RunHistory::load(domain, path).map_err(|e| match e {
        HistoryError::SchemaMismatch { expected, found } => CliError::Config(format!(
            "refusing {}: it was written for schema {found}, but the schema in use is {expected}",
            path.display()
        )),
        HistoryError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::Config(format!("{}: {e}", path.display())),
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.common.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Command::Validate = cli.command {
        return cmd_validate(&cli.common);
    }
    let settings = Settings::resolve(&cli.common)?;
    match &cli.command {
        Command::Validate => unreachable!(),
        Command::Materialize => cmd_materialize(&settings),
        Command::Explore { history } => cmd_explore(&settings, history.clone()),
        Command::Benchmark {
            strategies,
            histogram_steps,
            train_sizes,
        } => cmd_benchmark(&settings, strategies, *histogram_steps, train_sizes),
        Command::Report { histories, heatmaps } => cmd_report(&settings, histories, heatmaps),
    }
}

fn cmd_validate(common: &Common) -> Result<()> {
    let settings = Settings::resolve(common)?;
    let path = settings
        .schema
        .as_ref()
        .ok_or_else(|| CliError::Config("no schema given; pass --schema".into()))?;
    let schema = match AttributeSchema::load(path) {
        Ok(s) => s,
        Err(SchemaError::Invalid(violations)) => {
            let mut msg = format!("{}: {} problem(s)", path.display(), violations.len());
            for v in &violations {
                msg.push_str(&format!("\n  - {v}"));
            }
            return Err(CliError::Config(msg));
        }
        Err(SchemaError::Parse(m)) => {
            return Err(CliError::Config(format!("{}: {m}", path.display())))
        }
        Err(e) => return Err(e.into()),
    };
    let domain = Domain::build(schema.clone());
    let mut out = io::stdout().lock();
    writeln!(out, "schema       {}", path.display())?;
    writeln!(out, "fingerprint  {}", schema.fingerprint())?;
    for a in schema.attributes() {
        writeln!(out, "  {:<12} {} values", a.name, a.values.len())?;
    }
    writeln!(out, "product      {}", schema.product_size())?;
    writeln!(out, "valid        {}", domain.len())?;
    writeln!(out, "one-hot      {}", schema.onehot_len())?;
    writeln!(out, "constraints  {}", schema.constraints().len())?;

    // what each constraint removes, alone and beyond the others
    let product: Vec<Vec<usize>> = all_assignments(&schema);
    for (k, c) in schema.constraints().iter().enumerate() {
        let single = AttributeSchema::new(schema.attributes().to_vec(), vec![c.clone()], schema.prompt_template())
            .expect("constraint already validated");
        let others: Vec<_> = schema
            .constraints()
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, c)| c.clone())
            .collect();
        let rest = AttributeSchema::new(schema.attributes().to_vec(), others, schema.prompt_template())
            .expect("constraints already validated");
        let alone = product.iter().filter(|a| single.is_forbidden(a)).count();
        let unique = product
            .iter()
            .filter(|a| single.is_forbidden(a) && !rest.is_forbidden(a))
            .count();
        let pairs: Vec<String> = c.bindings.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let note = if unique == 0 { "  (redundant)" } else { "" };
        writeln!(
            out,
            "  [{k}] {:<40} excludes {alone:>5}, {unique:>5} not excluded by others{note}",
            pairs.join(" & ")
        )?;
    }
    Ok(())
}

fn all_assignments(schema: &AttributeSchema) -> Vec<Vec<usize>> {
    let radices: Vec<usize> = schema.attributes().iter().map(|a| a.values.len()).collect();
    let mut out = Vec::new();
    let mut cur = vec![0; radices.len()];
    loop {
        out.push(cur.clone());
        let mut i = radices.len();
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < radices[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

fn cmd_materialize(settings: &Settings) -> Result<()> {
    let domain = settings.domain()?;
    let schema = domain.schema();
    let spec = settings.evaluator.clone().ok_or_else(|| {
        CliError::Config("materialize needs --evaluator (synthetic[:seed] or external:<command>)".into())
    })?;
    if matches!(spec, EvaluatorSpec::Table { .. }) {
        return Err(CliError::Config("materialize needs a synthetic or external evaluator, not a table".into()));
    }
    let path = match &settings.table {
        Some(p) => p.clone(),
        None => settings.out_dir()?.join("table.csv"),
    };
    let evaluator = settings.build_evaluator(&domain, &spec)?;

    let resume = if settings.resume && path.exists() {
        let t = load_table(schema, &path)?;
        log::info!("resuming: {} of {} rows already present", t.len(), domain.len());
        Some(t)
    } else {
        None
    };
    // checkpoint file: existing rows, then new rows appended as they arrive
    let mut partial = ReferenceTable::empty(schema.fingerprint().to_string(), settings.num_samples);
    if let Some(t) = &resume {
        for (id, acc) in t.rows() {
            partial.insert(id, acc);
        }
    }
    partial.set_num_samples(settings.num_samples);
    let mut file = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    partial.write(&domain, &mut file)?;
    let sink = Mutex::new((file, None::<io::Error>));
    let total = domain.len();
    let done = std::sync::atomic::AtomicUsize::new(partial.len());
    let verbose_rows = !evaluator.parallel_friendly();

    let result = materialize_table(&evaluator, &domain, Some(partial), settings.exec, |s, m| {
        let mut guard = sink.lock().unwrap();
        let (file, err) = &mut *guard;
        if err.is_none() {
            if let Err(e) = ReferenceTable::write_row(schema, s, m.accuracy, file) {
                *err = Some(io::Error::other(e.to_string()));
            }
        }
        let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        if verbose_rows {
            log::info!("[{n}/{total}] {} -> {}", schema.describe(s), m.accuracy);
        } else {
            log::debug!("[{n}/{total}] {} -> {}", schema.describe(s), m.accuracy);
        }
    });
    let (_, write_err) = sink.into_inner().unwrap();
    if let Some(e) = write_err {
        return Err(CliError::Io(format!("{}: {e}", path.display())));
    }
    match result {
        Ok(mut table) => {
            table.set_num_samples(settings.num_samples);
            table.save(&domain, &path)?;
            println!("wrote {} rows to {}", table.len(), path.display());
            Ok(())
        }
        Err(e) => {
            let message = e.to_string();
            let mut partial = e.partial;
            partial.set_num_samples(settings.num_samples);
            partial.save(&domain, &path)?;
            Err(CliError::Evaluator(format!(
                "{message}\npartial table with {} rows kept at {}; rerun with --resume to continue",
                e.completed,
                path.display()
            )))
        }
    }
}

fn cmd_explore(settings: &Settings, history: Option<PathBuf>) -> Result<()> {
    let domain = settings.domain()?;
    let spec = settings.evaluator_spec().ok_or_else(|| {
        CliError::Config("explore needs --evaluator or --table".into())
    })?;
    let strategy = settings.strategy.clone().unwrap_or_else(StrategySpec::bayesian);
    let evaluator = settings.build_evaluator(&domain, &spec)?;
    let table = settings.reference_table(domain.schema())?;
    if strategy.needs_table() {
        let complete = table.as_ref().is_some_and(|t| t.ensure_complete(&domain).is_ok());
        if !complete {
            return Err(CliError::Config(
                "the oracle strategy is a benchmark baseline and needs a complete reference table (--table)".into(),
            ));
        }
    }
    let budget = settings.budget.unwrap_or(domain.len());
    let config = RunConfig {
        schema: settings.schema.clone(),
        evaluator: Some(spec),
        strategy,
        budget,
        seed: settings.seed,
        num_samples: settings.num_samples,
    };
    let out = settings.out_dir()?.to_path_buf();
    let history_path = history.unwrap_or_else(|| out.join("history.csv"));

    let prior = if settings.resume && history_path.exists() {
        let h = load_history(&domain, &history_path)?;
        if h.config.strategy != config.strategy || h.config.seed != config.seed {
            return Err(CliError::Config(format!(
                "{} was recorded with strategy {} and seed {}; this run uses {} and seed {}",
                history_path.display(),
                h.config.strategy.label(),
                h.config.seed,
                config.strategy.label(),
                config.seed
            )));
        }
        log::info!("resuming after {} recorded steps", h.len());
        Some(h)
    } else {
        None
    };
    let mut writer = match &prior {
        Some(_) => HistoryWriter::append(&domain, &history_path, settings.canonical)?,
        None => HistoryWriter::create(&domain, &history_path, &config, settings.canonical)?,
    };

    let mut explorer = Explorer::new(&domain, evaluator.as_ref());
    if let Some(t) = &table {
        explorer = explorer.with_table(t);
    }
    let schema = domain.schema();
    let result = explorer.run_resumable(&config, prior.as_ref(), |r, ms| {
        let s = domain.by_id(r.subdomain_id).expect("record in domain");
        log::info!("step {:>4}: {} -> {} ({ms} ms)", r.step, schema.describe(s), r.accuracy);
        writer
            .write(r, ms)
            .map_err(|e| EvalError::Process { message: format!("writing history: {e}"), raw: String::new() })
    });
    drop(writer);
    let history = match result {
        Ok(h) => h,
        Err(e) => {
            let class = match &e.failure {
                RunFailure::Evaluation { .. } => CliError::Evaluator,
                _ => CliError::Config,
            };
            return Err(class(format!(
                "{e}\n{} completed steps kept in {}; rerun with --resume to continue",
                e.partial.len(),
                history_path.display()
            )));
        }
    };
    write_run_exports(&domain, &history, table.as_ref(), &out, "")?;
    println!(
        "{} steps, mean accuracy {:.4}, history in {}",
        history.len(),
        metrics::mean(&history.accuracies()),
        history_path.display()
    );
    Ok(())
}

/// Curves and per-value summary for one history, prefixed by `stem`.
fn write_run_exports(
    domain: &Domain,
    history: &RunHistory,
    table: Option<&ReferenceTable>,
    out: &Path,
    stem: &str,
) -> Result<()> {
    let fp = domain.schema().fingerprint();
    let name = |metric: &str| out.join(format!("{stem}{metric}.csv"));
    let moving = metrics::moving_average_accuracy(history, metrics::DEFAULT_WINDOW)?;
    write_file(&name("moving_average_accuracy"), |w| Ok(moving.write(fp, w)?))?;
    let average = metrics::average_accuracy_curve(history);
    write_file(&name("average_accuracy"), |w| Ok(average.write(fp, w)?))?;
    if let Some(t) = table.filter(|t| t.ensure_complete(domain).is_ok()) {
        let cov = metrics::bottom_k_coverage(history, domain, t, metrics::DEFAULT_BOTTOM_FRACTION)?;
        write_file(&name("bottom_k_coverage"), |w| Ok(cov.write(fp, w)?))?;
    }
    if !history.is_empty() {
        let summary = metrics::per_value_summary(
            domain.schema(),
            &metrics::observations_from_history(domain, history),
        );
        write_file(&name("per_value_summary"), |w| {
            Ok(metrics::write_value_summary(fp, &summary, w)?)
        })?;
    }
    Ok(())
}

fn cmd_benchmark(
    settings: &Settings,
    strategies: &[String],
    histogram_steps: Option<usize>,
    train_sizes: &[usize],
) -> Result<()> {
    let domain = settings.domain()?;
    let table = settings.reference_table(domain.schema())?.ok_or_else(|| {
        CliError::Config(
            "benchmark compares strategies by table look-up and needs a complete reference table; \
             create one with `attrscout materialize --evaluator ...` and pass it with --table"
                .into(),
        )
    })?;
    if let Err(e) = table.ensure_complete(&domain) {
        return Err(CliError::Config(format!(
            "{e}; finish it with `attrscout materialize --resume`"
        )));
    }
    let b = &settings.file.benchmark;
    let specs: Vec<StrategySpec> = if !strategies.is_empty() {
        strategies
            .iter()
            .map(|s| StrategySpec::parse_short(s).map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<_>>()?
    } else if let Some(list) = &b.strategies {
        list.iter()
            .map(|s| s.resolve().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<_>>()?
    } else {
        vec![
            StrategySpec::Random,
            StrategySpec::Covering { strength: 3 },
            StrategySpec::genetic(),
            StrategySpec::bayesian(),
            StrategySpec::Oracle,
        ]
    };
    let mut bs = BenchmarkSettings::new(specs, settings.seeds.clone(), settings.budget.unwrap_or(domain.len()));
    if let Some(w) = b.window {
        bs.window = w;
    }
    if let Some(k) = b.bottom_fraction {
        bs.bottom_fraction = k;
    }
    if let Some(steps) = histogram_steps.or(b.histogram_steps) {
        bs.histogram_steps = steps;
    }
    if let Some(edges) = &b.bin_edges {
        bs.bin_edges = edges.clone();
    } else if let Some(bins) = b.bins {
        bs.bin_edges = metrics::uniform_edges(bins.max(1));
    }
    bs.train_sizes = if !train_sizes.is_empty() {
        train_sizes.to_vec()
    } else {
        b.train_sizes.clone().unwrap_or_default()
    };
    if let Some(p) = b.predictor {
        bs.predictor = p;
    }

    let report = run_benchmark(&domain, &table, &bs, settings.exec).map_err(|e| match e {
        BenchmarkError::Run { .. } | BenchmarkError::Predictor { .. } => CliError::Evaluator(e.to_string()),
        BenchmarkError::Metric(MetricError::Io(_)) => CliError::Io(e.to_string()),
        _ => CliError::Config(e.to_string()),
    })?;

    let out = settings.out_dir()?.to_path_buf();
    let fp = domain.schema().fingerprint();
    for s in &report.strategies {
        let dir = out.join(&s.label);
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for series in [&s.moving_average, &s.average_accuracy, &s.coverage] {
            write_file(&dir.join(format!("{}.csv", series.name)), |w| Ok(series.write(fp, w)?))?;
        }
        for h in &s.histories {
            h.save(&domain, dir.join(format!("history_seed{}.csv", h.config.seed)), settings.canonical)?;
        }
    }
    let histograms: Vec<_> = report.strategies.iter().map(|s| s.histogram.clone()).collect();
    write_file(&out.join("accuracy_histogram.csv"), |w| {
        Ok(metrics::write_histograms(fp, &histograms, w)?)
    })?;
    if !report.predictor.is_empty() {
        write_file(&out.join("predictor_spearman.csv"), |w| Ok(report.predictor.write(fp, w)?))?;
    }
    let mut summary = Vec::new();
    report.write_summary(&mut summary)?;
    fs::write(out.join("summary.txt"), &summary)?;
    io::stdout().write_all(&summary)?;
    println!("exports in {}", out.display());
    Ok(())
}

fn cmd_report(settings: &Settings, histories: &[PathBuf], heatmaps: &[String]) -> Result<()> {
    let domain = settings.domain()?;
    let schema = domain.schema();
    let fp = schema.fingerprint();
    let table = settings.reference_table(schema)?;
    let mut histories: Vec<PathBuf> = histories.to_vec();
    if histories.is_empty() {
        histories.extend(settings.file.history.clone());
    }
    if table.is_none() && histories.is_empty() {
        return Err(CliError::Config("report needs --table and/or --history".into()));
    }

    let pairs: Vec<(String, String)> = if !heatmaps.is_empty() {
        heatmaps
            .iter()
            .map(|h| {
                h.split_once(',')
                    .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                    .ok_or_else(|| CliError::Config(format!("--heatmap expects `a,b`, got `{h}`")))
            })
            .collect::<Result<_>>()?
    } else if let Some(list) = &settings.file.report.heatmaps {
        list.iter().map(|[a, b]| (a.clone(), b.clone())).collect()
    } else if schema.attribute_index("weather").is_some() && schema.attribute_index("location").is_some() {
        vec![("weather".into(), "location".into())]
    } else if schema.num_attributes() >= 2 {
        let a = schema.attributes();
        vec![(a[0].name.clone(), a[1].name.clone())]
    } else {
        Vec::new()
    };

    let out = settings.out_dir()?.to_path_buf();
    let loaded: Vec<(String, RunHistory)> = histories
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or("history".into(), |s| s.to_string_lossy().into_owned());
            load_history(&domain, p).map(|h| (stem, h))
        })
        .collect::<Result<_>>()?;

    let mut sources: Vec<(String, metrics::Observations)> = Vec::new();
    if let Some(t) = &table {
        sources.push(("table".into(), metrics::observations_from_table(&domain, t)));
    }
    for (stem, h) in &loaded {
        sources.push((stem.clone(), metrics::observations_from_history(&domain, h)));
    }
    let mut written = 0;
    for (stem, obs) in &sources {
        let summary = metrics::per_value_summary(schema, obs);
        write_file(&out.join(format!("{stem}_per_value_summary.csv")), |w| {
            Ok(metrics::write_value_summary(fp, &summary, w)?)
        })?;
        written += 1;
        for (a, b) in &pairs {
            let h = metrics::pair_heatmap(schema, obs, a, b)?;
            write_file(&out.join(format!("{stem}_heatmap_{a}_{b}.csv").replace(' ', "_")), |w| {
                Ok(h.write(fp, w)?)
            })?;
            written += 1;
        }
    }
    for (stem, h) in &loaded {
        write_run_exports(&domain, h, table.as_ref(), &out, &format!("{stem}_"))?;
        written += 1;
    }
    println!("wrote {written} export group(s) to {}", out.display());
    Ok(())
}
