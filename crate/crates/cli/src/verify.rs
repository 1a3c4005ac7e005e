//! Verification suites. Each one is an independent oracle for a property the
//! library must satisfy; a failing suite makes `ruledfs verify` exit with 3.

use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;

use ruledfs_core::bench::{calibration_report, synthetic_three_feature, verify_pruning};
use ruledfs_core::data::{fit_discretization, load_csv, stratified_split, EmpiricalConditional};
use ruledfs_core::engine::{Expectation, PolicyConfig};
use ruledfs_core::estimator::{build_targets, ValueNet};
use ruledfs_core::infotheory::{cmi_self_check, kl_decomposition_check, verify_cmi_equivalence};
use ruledfs_core::model::{fit_model, ModelConfig, ModelKind};

use crate::CliError;

/// Identity residuals must stay below this.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Largest relative analytic-vs-numeric gradient error.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// CMI-greedy and expected-u-greedy pick the same feature in constructed worlds.
    #[value(name = "cmi-equivalence")]
    Equivalence,
    /// Expected KL decomposition identity on random distributions.
    KlDecomposition,
    /// KL and entropy forms of conditional mutual information agree.
    Cmi,
    /// Rule confidences reconstruct from membership-binned confidences (fuzzy, Wine).
    #[value(name = "rule-calibration")]
    Calibration,
    /// Active-set pruning never changes a prediction (CART, Wine/Heart/Yeast).
    Pruning,
    /// Value-network backpropagation matches central differences.
    Gradient,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] =
        [Suite::Equivalence, Suite::KlDecomposition, Suite::Cmi, Suite::Calibration, Suite::Pruning, Suite::Gradient];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Equivalence => "cmi-equivalence",
            Suite::KlDecomposition => "kl-decomposition",
            Suite::Cmi => "cmi",
            Suite::Calibration => "rule-calibration",
            Suite::Pruning => "pruning",
            Suite::Gradient => "gradient",
            Suite::All => "all",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            Suite::Equivalence => 100,
            Suite::KlDecomposition => 10_000,
            Suite::Cmi => 1_000,
            Suite::Gradient => 200,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {} ({:.2} s)", self.suite.name(), self.detail, self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions<'a> {
    /// Overrides each suite's default trial count.
    pub trials: Option<usize>,
    pub seed: u64,
    pub data_dir: &'a Path,
    /// Runs the gradient suite against a deliberately broken backward pass.
    pub inject_fault: bool,
}

pub fn run_suites(suite: Suite, opts: &VerifyOptions<'_>) -> Result<Vec<SuiteReport>, CliError> {
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    suites.into_iter().map(|s| run_one(s, opts)).collect()
}

fn run_one(suite: Suite, opts: &VerifyOptions<'_>) -> Result<SuiteReport, CliError> {
    let start = Instant::now();
    let trials = opts.trials.unwrap_or(suite.default_trials());
    let seed = opts.seed;
    let (passed, detail) = match suite {
        Suite::Equivalence => {
            let r = verify_cmi_equivalence(trials, seed, 4);
            let c = &r.consistent;
            let detail = format!(
                "{trials} worlds, {}/{} states agree, identity deviation {:.1e}, expectation deviation {:.1e}; control worlds agree at {}/{}",
                c.matched, c.states, c.max_identity_deviation, c.max_expectation_deviation, r.control.matched, r.control.states
            );
            (r.passed(), detail)
        }
        Suite::KlDecomposition => {
            let dev = kl_decomposition_check(trials, seed);
            (dev < IDENTITY_TOLERANCE, format!("{trials} triples, max deviation {dev:.1e}"))
        }
        Suite::Cmi => {
            let r = cmi_self_check(trials, seed);
            let detail = format!("{} tables, {} failures, max deviation {:.1e}", r.tables, r.failures, r.max_deviation);
            (r.passed(), detail)
        }
        Suite::Calibration => {
            let ds = load_csv(opts.data_dir.join("wine.csv"), None)?;
            let train = ds.subset(&stratified_split(&ds, 0.2, seed).train);
            let model = fit_model(&train, &ModelConfig::new(ModelKind::Fuzzy, seed))?;
            let reports = calibration_report(model.rule_base(), &train, 5);
            let worst = reports.iter().map(|r| r.residual).fold(0.0, f64::max);
            let ok = !reports.is_empty() && worst < IDENTITY_TOLERANCE;
            (ok, format!("{} fuzzy rules on Wine, max residual {worst:.1e}", reports.len()))
        }
        Suite::Pruning => {
            let mut parts = Vec::new();
            let mut ok = true;
            for name in ["wine", "heart", "yeast"] {
                let ds = load_csv(opts.data_dir.join(format!("{name}.csv")), None)?;
                let split = stratified_split(&ds, 0.2, seed);
                let (train, test) = (ds.subset(&split.train), ds.subset(&split.test));
                let model = fit_model(&train, &ModelConfig::new(ModelKind::Cart, seed))?;
                let scheme = fit_discretization(&train, 5)?;
                let ec = EmpiricalConditional::fit(&train, scheme, EmpiricalConditional::DEFAULT_ALPHA);
                let policy = PolicyConfig {
                    expectation: Expectation::FixedReference,
                    ..PolicyConfig::for_kind(ModelKind::Cart, ds.n_features())
                };
                let r = verify_pruning(&model, &ec, &test, &policy)?;
                ok &= r.passed();
                parts.push(format!("{name} {}/{} episodes exact", r.exact_episodes, r.episodes));
            }
            (ok, parts.join(", "))
        }
        Suite::Gradient => {
            let ds = synthetic_three_feature(300, seed);
            let model = fit_model(&ds, &ModelConfig::new(ModelKind::Cart, seed))?;
            let batch = build_targets(&ds, &model, 2, seed);
            let mut net = ValueNet::new(ds.n_features(), ds.n_classes(), 16, seed).with_standardization(&ds);
            net.corrupt_gradients = opts.inject_fault;
            let err = net.gradient_check(&batch, 1e-5, trials.max(1), seed);
            let fault = if opts.inject_fault { " (fault injected)" } else { "" };
            (err < GRADIENT_TOLERANCE, format!("{} weights, max relative error {err:.1e}{fault}", trials.max(1)))
        }
        Suite::All => unreachable!("expanded by run_suites"),
    };
    Ok(SuiteReport { suite, passed, detail, seconds: start.elapsed().as_secs_f64() })
}
