//! `ruledfs`: train rule-based models, benchmark feature acquisition, run
//! the verification suites and serve interactive sessions.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or runtime error,
//! 3 verification failure.

pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use ruledfs_core::bench::{run_benchmark, run_dir_name, write_outputs, BenchError, BenchmarkConfig, BenchmarkResult};
use ruledfs_core::bundle::{rules_path, train_bundle, BundleConfig, BundleError, ModelBundle, TrainOutcome};
use ruledfs_core::cart::Resampling;
use ruledfs_core::data::{load_csv, DataError, Dataset, EmpiricalConditional};
use ruledfs_core::engine::{EngineError, Expectation, ValueSource};
use ruledfs_core::estimator::{EstimatorConfig, TrainConfig};
use ruledfs_core::model::{ModelConfig, ModelKind};
use ruledfs_service::{bind, serve_on, shutdown_signal, AppState};

pub use verify::{Suite, SuiteReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidPolicy(_) | EngineError::MissingEstimator => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Engine(e) => e.into(),
            BenchError::Invalid(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ruledfs", version, about = "Rule-based dynamic feature selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on a CSV dataset and write a bundle plus its rule listing.
    Train(TrainArgs),
    /// Run seeded acquisition episodes and write curves, summaries and calibration.
    Benchmark(BenchmarkArgs),
    /// Run the verification suites; exits with 3 if any fails.
    Verify(VerifyArgs),
    /// Serve interactive sessions over HTTP for one bundle.
    Serve(ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Benchmark(_) => "benchmark",
            Command::Verify(_) => "verify",
            Command::Serve(_) => "serve",
        }
    }

    fn config(&self) -> Option<&Path> {
        match self {
            Command::Train(a) => a.config.as_deref(),
            Command::Benchmark(a) => a.config.as_deref(),
            Command::Verify(a) => a.config.as_deref(),
            Command::Serve(a) => a.config.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Cart,
    Fuzzy,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Cart => ModelKind::Cart,
            KindArg::Fuzzy => ModelKind::Fuzzy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResamplingArg {
    Bootstrap,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValueSourceArg {
    Oracle,
    Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExpectationArg {
    FixedReference,
    Joint,
}

/// Dataset input shared by `train` and `benchmark`.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row; the label is the last column unless --label is given.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the label column.
    #[arg(long)]
    pub label: Option<String>,
    /// Dataset name used in outputs [default: file stem of --data]
    #[arg(long)]
    pub name: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, String), CliError> {
        if !self.data.is_file() {
            return Err(CliError::Data(format!("file not found: {}", self.data.display())));
        }
        let ds = load_csv(&self.data, self.label.as_deref())?;
        let name = self.name.clone().unwrap_or_else(|| {
            self.data.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
        });
        Ok((ds, name))
    }
}

/// Model, split and discretization settings.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Cart)]
    pub model: KindArg,
    /// Seed for the split and every randomized fit.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Held-out fraction, stratified by class.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Quantile bins per numeric feature for the empirical conditional.
    #[arg(long, default_value_t = 5)]
    pub bins: usize,
    /// Laplace smoothing of the empirical conditional.
    #[arg(long, default_value_t = EmpiricalConditional::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// CART: maximum tree depth.
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    /// CART: minimum samples per leaf.
    #[arg(long, default_value_t = 5)]
    pub min_samples_leaf: usize,
    /// CART: auxiliary trees used for epistemic uncertainty.
    #[arg(long, default_value_t = 10)]
    pub bootstrap_count: usize,
    /// CART: how auxiliary trees draw rows.
    #[arg(long, value_enum, default_value_t = ResamplingArg::Bootstrap)]
    pub resampling: ResamplingArg,
    /// Fuzzy GA: population size.
    #[arg(long, default_value_t = 30)]
    pub population_size: usize,
    /// Fuzzy GA: generations.
    #[arg(long, default_value_t = 50)]
    pub generations: usize,
    /// Fuzzy GA: maximum rules per base.
    #[arg(long, default_value_t = 15)]
    pub max_rules: usize,
    /// Fuzzy GA: maximum conditions per rule.
    #[arg(long, default_value_t = 3)]
    pub max_conditions: usize,
    /// Fuzzy GA: per-gene mutation probability.
    #[arg(long, default_value_t = 0.1)]
    pub mutation_rate: f64,
    /// Fuzzy GA: crossover probability.
    #[arg(long, default_value_t = 0.9)]
    pub crossover_rate: f64,
}

impl ModelArgs {
    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.model.into(), self.seed);
        cfg.cart.max_depth = self.max_depth;
        cfg.cart.min_samples_leaf = self.min_samples_leaf;
        cfg.cart.bootstrap_count = self.bootstrap_count;
        cfg.cart.resampling = match self.resampling {
            ResamplingArg::Bootstrap => Resampling::Bootstrap,
            ResamplingArg::Identity => Resampling::Identity,
        };
        cfg.ga.population_size = self.population_size;
        cfg.ga.generations = self.generations;
        cfg.ga.max_rules = self.max_rules;
        cfg.ga.max_conditions_per_rule = self.max_conditions;
        cfg.ga.mutation_rate = self.mutation_rate;
        cfg.ga.crossover_rate = self.crossover_rate;
        cfg
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.into()));
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("--test-fraction must lie in [0, 1)");
        }
        if self.bins < 2 {
            return bad("--bins must be >= 2");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("--alpha must be a finite number > 0");
        }
        if self.max_depth < 1 || self.min_samples_leaf < 1 {
            return bad("--max-depth and --min-samples-leaf must be >= 1");
        }
        if self.population_size < 2 || self.max_rules < 1 || self.max_conditions < 1 {
            return bad("--population-size must be >= 2, --max-rules and --max-conditions >= 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("--mutation-rate and --crossover-rate must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Also train a value network so sessions can use --value-source estimator.
    #[arg(long)]
    pub estimator: bool,
    /// Value network: training epochs.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Value network: minibatch size.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Value network: Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Value network: hidden units per layer.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Value network: random masks drawn per training sample.
    #[arg(long, default_value_t = 8)]
    pub masks_per_sample: usize,
    /// Value network: one head regressing u + lambda*e instead of two heads.
    #[arg(long)]
    pub single_head: bool,
}

impl EstimatorArgs {
    fn config(&self, seed: u64) -> Option<EstimatorConfig> {
        self.estimator.then(|| EstimatorConfig {
            masks_per_sample: self.masks_per_sample,
            hidden: self.hidden,
            single_head: self.single_head,
            seed,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                seed,
                ..TrainConfig::default()
            },
        })
    }
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Bundle path; the rule listing goes to <stem>.rules.txt beside it.
    #[arg(long, default_value = "model.bundle")]
    pub out: PathBuf,
    /// JSON file of flag values; flags on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Reuse the model, split and estimator settings of a trained bundle;
    /// model flags are then ignored. --seed still selects the repeats.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Maximum number of features acquired per episode.
    #[arg(long, default_value_t = 10)]
    pub budget: usize,
    /// Weight of epistemic uncertainty in q = E[u] + lambda*E[e].
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Rule pruning threshold [default: 0 for cart, 0.05 for fuzzy]
    #[arg(long)]
    pub theta: Option<f64>,
    /// Stop an episode once the current u is at or below this; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub u_halt_threshold: f64,
    #[arg(long, value_enum, default_value_t = ValueSourceArg::Oracle)]
    pub value_source: ValueSourceArg,
    /// How expected uncertainty is averaged over candidate values.
    #[arg(long, value_enum, default_value_t = ExpectationArg::FixedReference)]
    pub expectation: ExpectationArg,
    /// Seeded repeats; repeat r uses seed + r and refits everything.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Summaries average accuracy over k = 1..=first-k.
    #[arg(long, default_value_t = 10)]
    pub first_k: usize,
    /// Membership bins per rule in the calibration report.
    #[arg(long, default_value_t = 5)]
    pub calibration_bins: usize,
    /// Parent directory; results go to <out>/run_<unix time>_seed<seed>.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// JSON file of flag values; flags on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct VerifyArgs {
    #[arg(value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Trials per suite [default: cmi-equivalence 100, kl-decomposition 10000, cmi 1000, gradient 200]
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory holding wine.csv, heart.csv and yeast.csv.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    /// JSON file of flag values; flags on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of static files served at / (the web UI build).
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Session traces are written here as <session id>.jsonl when a session stops.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// JSON file of flag values; flags on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Parses arguments, expanding `--config` when present.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cli = Cli::try_parse_from(&argv)?;
    let Some(path) = cli.command.config().map(Path::to_path_buf) else {
        return Ok(cli);
    };
    let expanded = config::expand(&argv, cli.command.name(), &path)
        .map_err(|e| clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("{e}\n")))?;
    Cli::try_parse_from(expanded)
}

/// Runs the CLI and returns the process exit code.
pub fn run(argv: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match parse(argv.into_iter().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
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

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => {
            let (outcome, rules) = cmd_train(&a)?;
            let b = &outcome.bundle;
            let (n_rules, acl) = b.model.rule_base().complexity();
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} and {}", a.out.display(), rules.display());
            println!(
                "{} model on '{}': {n_rules} rules, average condition length {acl:.2}, test accuracy {:.4} on {} samples",
                a.model.model.to_possible_value().map_or_else(String::new, |v| v.get_name().to_string()),
                b.dataset.name,
                outcome.test_accuracy,
                b.split.test.len()
            );
            if let Some(r) = &outcome.estimator_report {
                println!("value network final epoch loss {:.6}", r.epoch_losses.last().copied().unwrap_or(f64::NAN));
            }
            Ok(())
        }
        Command::Benchmark(a) => {
            let (dir, result) = cmd_benchmark(&a)?;
            println!("{:<10} {:<12} {:>8} {:>7}", "dataset", "method", "mean %", "std");
            for row in &result.summary {
                println!("{:<10} {:<12} {:>8.2} {:>7.2}", row.dataset, row.method, row.mean, row.std);
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Verify(a) => {
            let reports = cmd_verify(&a)?;
            for r in &reports {
                println!("{r}");
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.suite.name()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Verification(format!("failed suites: {}", failed.join(", "))))
            }
        }
        Command::Serve(a) => cmd_serve(&a),
    }
}

/// Trains and saves a bundle; returns the outcome and the rule listing path.
pub fn cmd_train(a: &TrainArgs) -> Result<(TrainOutcome, PathBuf), CliError> {
    a.model.validate()?;
    let (ds, name) = a.data.load()?;
    let cfg = BundleConfig {
        model: a.model.model_config(),
        bins: a.model.bins,
        seed: a.model.seed,
        test_fraction: a.model.test_fraction,
        alpha: a.model.alpha,
        estimator: a.estimator.config(a.model.seed),
    };
    let outcome = train_bundle(&ds, &name, &cfg)?;
    let rules = outcome.bundle.save(&a.out)?;
    debug_assert_eq!(rules, rules_path(&a.out));
    Ok((outcome, rules))
}

/// Builds the benchmark configuration from flags and an optional bundle.
pub fn benchmark_config(a: &BenchmarkArgs) -> Result<BenchmarkConfig, CliError> {
    a.model.validate()?;
    let bundle = match &a.bundle {
        Some(p) if !p.is_file() => return Err(CliError::Data(format!("file not found: {}", p.display()))),
        Some(p) => Some(ModelBundle::load(p)?),
        None => None,
    };
    let kind = bundle.as_ref().map_or(a.model.model.into(), |b| b.config.model.kind);
    let mut cfg = BenchmarkConfig::new(kind, a.budget, a.model.seed);
    match &bundle {
        Some(b) => {
            cfg.model = b.config.model.clone();
            cfg.bins = b.config.bins;
            cfg.alpha = b.config.alpha;
            cfg.test_fraction = b.config.test_fraction;
            cfg.estimator = b.config.estimator.clone();
        }
        None => {
            cfg.model = a.model.model_config();
            cfg.bins = a.model.bins;
            cfg.alpha = a.model.alpha;
            cfg.test_fraction = a.model.test_fraction;
        }
    }
    cfg.repeats = a.repeats;
    cfg.first_k = a.first_k;
    cfg.calibration_bins = a.calibration_bins;
    cfg.policy.lambda = a.lambda;
    if let Some(t) = a.theta {
        cfg.policy.theta = t;
    }
    cfg.policy.u_halt_threshold = a.u_halt_threshold;
    cfg.policy.expectation = match a.expectation {
        ExpectationArg::FixedReference => Expectation::FixedReference,
        ExpectationArg::Joint => Expectation::Joint,
    };
    if a.value_source == ValueSourceArg::Estimator {
        if bundle.as_ref().and_then(|b| b.value_net.as_ref()).is_none() {
            return Err(CliError::Usage(
                "--value-source estimator needs --bundle pointing at a bundle trained with --estimator".into(),
            ));
        }
        cfg.policy.value_source = ValueSource::Estimator;
    }
    cfg.policy.validate()?;
    Ok(cfg)
}

/// Runs the benchmark and writes its artifacts; returns the run directory.
pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<(PathBuf, BenchmarkResult), CliError> {
    let cfg = benchmark_config(a)?;
    let (ds, name) = a.data.load()?;
    let result = run_benchmark(&ds, &name, &cfg)?;
    let dir = a.out.join(run_dir_name(cfg.seed));
    write_outputs(&result, &dir).map_err(|e| CliError::Data(format!("cannot write {}: {e}", dir.display())))?;
    Ok((dir, result))
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<Vec<SuiteReport>, CliError> {
    let opts = verify::VerifyOptions {
        trials: a.trials,
        seed: a.seed,
        data_dir: &a.data_dir,
        inject_fault: a.inject_fault,
    };
    verify::run_suites(a.suite, &opts)
}

pub fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    if !a.bundle.is_file() {
        return Err(CliError::Data(format!("file not found: {}", a.bundle.display())));
    }
    let bundle = ModelBundle::load(&a.bundle).map_err(|e| CliError::Data(format!("refusing to start: {e}")))?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("static directory not found: {}", dir.display())));
        }
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = bind(&a.host, a.port).await.map_err(|e| CliError::Data(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        println!(
            "ruledfs service ready on http://{addr} (dataset '{}', {} features)",
            bundle.dataset.name,
            bundle.n_features()
        );
        let state = Arc::new(AppState::new(Some(bundle), a.trace_dir.clone()));
        serve_on(listener, state, a.static_dir.clone(), shutdown_signal())
            .await
            .map_err(|e| CliError::Data(e.to_string()))
    })?;
    println!("ruledfs service stopped");
    Ok(())
}
