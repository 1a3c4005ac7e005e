//! Benchmark harness: accuracy and uncertainty against the number of
//! acquired features, first-k summaries over seeded repeats, complexity,
//! a logistic-regression baseline and membership-binned calibration.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fit_discretization, stratified_split, DataError, Dataset, EmpiricalConditional, PartialObservation};
use crate::engine::{
    active_features, run_episode, Expectation, select_next, surviving_rules, Decision, EngineError, PolicyConfig, Reference, SessionState,
    ValueSource,
};
use crate::estimator::{fit_value_net, EstimatorConfig, ValueNet};
use crate::infotheory::static_mi_ranking;
use crate::model::{fit_model, GlobalModel, ModelConfig, ModelKind};
use crate::rules::{Rule, RuleBase};
use crate::uncertainty::aleatoric_u;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub accuracy: f64,
    pub mean_u: f64,
    pub mean_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub model: ModelConfig,
    pub policy: PolicyConfig,
    pub repeats: usize,
    /// Repeat `r` uses seed `seed + r` for the split and all model fitting.
    pub seed: u64,
    pub test_fraction: f64,
    pub bins: usize,
    pub alpha: f64,
    /// Summary averages accuracy over `k = 1..=first_k`.
    pub first_k: usize,
    pub calibration_bins: usize,
    pub estimator: Option<EstimatorConfig>,
}

impl BenchmarkConfig {
    pub fn new(kind: ModelKind, budget: usize, seed: u64) -> Self {
        BenchmarkConfig {
            model: ModelConfig::new(kind, seed),
            policy: PolicyConfig {
                expectation: Expectation::FixedReference,
                ..PolicyConfig::for_kind(kind, budget)
            },
            repeats: 3,
            seed,
            test_fraction: 0.2,
            bins: 5,
            alpha: EmpiricalConditional::DEFAULT_ALPHA,
            first_k: 10,
            calibration_bins: 5,
            estimator: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticResult {
    pub accuracy: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub first_k_accuracy: f64,
    pub global_accuracy: f64,
    pub static_mi_first_k_accuracy: f64,
    pub logistic: LogisticResult,
    pub rules: usize,
    pub acl: f64,
    /// Episodes that stopped before using the whole budget.
    pub early_halts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub dataset: String,
    pub method: String,
    /// Which distribution played the global prediction.
    pub reference: String,
    pub expectation: Expectation,
    pub first_k: usize,
    pub repeats: Vec<RepeatResult>,
    pub mean_curve: Vec<CurvePoint>,
    pub summary: Vec<SummaryRow>,
    pub calibration: Vec<CalibrationReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Estimator(#[from] crate::estimator::EstimatorError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Per-sample outcome after `k` acquisitions, `k = 0..`.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    correct: bool,
    u: f64,
    e: f64,
}

/// Outcome at step `k`, carrying the final state forward past an early stop.
fn at(outcomes: &[Outcome], k: usize) -> Outcome {
    outcomes[k.min(outcomes.len() - 1)]
}

fn curve_from(outcomes: &[Vec<Outcome>], ks: impl Iterator<Item = usize>) -> Vec<CurvePoint> {
    let n = outcomes.len().max(1) as f64;
    ks.map(|k| {
        let (mut acc, mut u, mut e) = (0.0, 0.0, 0.0);
        for o in outcomes {
            let s = at(o, k);
            acc += f64::from(u8::from(s.correct));
            u += s.u;
            e += s.e;
        }
        CurvePoint { k, accuracy: acc / n, mean_u: u / n, mean_e: e / n }
    })
    .collect()
}

fn mean_accuracy(outcomes: &[Vec<Outcome>], first_k: usize) -> f64 {
    let c = curve_from(outcomes, 1..=first_k);
    c.iter().map(|p| p.accuracy).sum::<f64>() / c.len().max(1) as f64
}

/// Runs one acquisition episode per test sample.
pub fn episode_curve(
    model: &GlobalModel,
    ec: &EmpiricalConditional,
    test: &Dataset,
    policy: &PolicyConfig,
    net: Option<&ValueNet>,
    first_k: usize,
) -> Result<(Vec<CurvePoint>, f64, usize), BenchError> {
    let results: Vec<(Vec<Outcome>, bool)> = test
        .samples
        .par_iter()
        .zip(&test.labels)
        .map(|(x, &y)| {
            let state = run_episode(x, model, ec, policy, net)?;
            let reference = model.predict_full(x);
            let mut obs = PartialObservation::empty(x.len());
            let mut outcomes = Vec::with_capacity(state.trace.len() + 1);
            let outcome = |o: &PartialObservation| {
                let p = model.predict_partial(o);
                Outcome {
                    correct: p.argmax() == y,
                    u: aleatoric_u(&reference, &p),
                    e: model.epistemic(o),
                }
            };
            outcomes.push(outcome(&obs));
            for step in &state.trace {
                obs.observe(step.feature, step.value);
                outcomes.push(outcome(&obs));
            }
            Ok((outcomes, state.trace.len() < policy.budget))
        })
        .collect::<Result<_, EngineError>>()?;
    let early = results.iter().filter(|r| r.1).count();
    let outcomes: Vec<Vec<Outcome>> = results.into_iter().map(|r| r.0).collect();
    Ok((curve_from(&outcomes, 1..=policy.budget), mean_accuracy(&outcomes, first_k), early))
}

/// First-k accuracy when features are acquired in static MI order.
fn static_mi_accuracy(model: &GlobalModel, order: &[usize], test: &Dataset, first_k: usize) -> f64 {
    let outcomes: Vec<Vec<Outcome>> = test
        .samples
        .iter()
        .zip(&test.labels)
        .map(|(x, &y)| {
            let mut obs = PartialObservation::empty(x.len());
            let mut out = Vec::with_capacity(order.len() + 1);
            let mut push = |o: &PartialObservation| {
                out.push(Outcome { correct: model.predict_partial(o).argmax() == y, u: 0.0, e: 0.0 })
            };
            push(&obs);
            for &j in order {
                obs.observe(j, x[j]);
                push(&obs);
            }
            out
        })
        .collect();
    mean_accuracy(&outcomes, first_k)
}

pub fn global_accuracy(model: &GlobalModel, test: &Dataset) -> f64 {
    let correct = test
        .samples
        .iter()
        .zip(&test.labels)
        .filter(|(x, &y)| model.predict_full(x).argmax() == y)
        .count();
    correct as f64 / test.n_samples().max(1) as f64
}

/// Rule count and average antecedent length.
pub fn complexity_metrics(rb: &RuleBase) -> (usize, f64) {
    rb.complexity()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn method_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Cart => "CART-DFS",
        ModelKind::Fuzzy => "FRBC-DFS",
    }
}

/// Seeded repeats of split, fit and per-sample episodes.
pub fn run_benchmark(ds: &Dataset, dataset_name: &str, cfg: &BenchmarkConfig) -> Result<BenchmarkResult, BenchError> {
    if cfg.repeats == 0 {
        return Err(BenchError::Invalid("repeats must be >= 1".into()));
    }
    cfg.policy.validate()?;
    if cfg.policy.value_source == ValueSource::Estimator && cfg.estimator.is_none() {
        return Err(EngineError::MissingEstimator.into());
    }
    let mut repeats = Vec::with_capacity(cfg.repeats);
    let mut calibration = Vec::new();
    for r in 0..cfg.repeats {
        let seed = cfg.seed + r as u64;
        let split = stratified_split(ds, cfg.test_fraction, seed);
        let train = ds.subset(&split.train);
        let test = ds.subset(&split.test);
        let mut mcfg = cfg.model.clone();
        mcfg.cart.seed = seed;
        mcfg.ga.seed = seed;
        let model = fit_model(&train, &mcfg)?;
        let scheme = fit_discretization(&train, cfg.bins)?;
        let ec = EmpiricalConditional::fit(&train, scheme.clone(), cfg.alpha);
        let net = match (&cfg.estimator, cfg.policy.value_source) {
            (Some(ecfg), ValueSource::Estimator) => {
                let mut ecfg = ecfg.clone();
                ecfg.seed = seed;
                Some(fit_value_net(&train, &model, &ecfg)?.0)
            }
            _ => None,
        };
        let (curve, first_k_accuracy, early_halts) =
            episode_curve(&model, &ec, &test, &cfg.policy, net.as_ref(), cfg.first_k)?;
        let order: Vec<usize> = static_mi_ranking(&train, &scheme).into_iter().map(|(j, _)| j).collect();
        let (rules, acl) = complexity_metrics(model.rule_base());
        if r == 0 && model.kind() == ModelKind::Fuzzy {
            calibration = calibration_report(model.rule_base(), &train, cfg.calibration_bins);
        }
        repeats.push(RepeatResult {
            seed,
            global_accuracy: global_accuracy(&model, &test),
            static_mi_first_k_accuracy: static_mi_accuracy(&model, &order, &test, cfg.first_k),
            logistic: logistic_baseline(&train, &test),
            curve,
            first_k_accuracy,
            rules,
            acl,
            early_halts,
        });
    }
    let mean_curve: Vec<CurvePoint> = (0..repeats[0].curve.len())
        .map(|i| {
            let n = repeats.len() as f64;
            CurvePoint {
                k: repeats[0].curve[i].k,
                accuracy: repeats.iter().map(|r| r.curve[i].accuracy).sum::<f64>() / n,
                mean_u: repeats.iter().map(|r| r.curve[i].mean_u).sum::<f64>() / n,
                mean_e: repeats.iter().map(|r| r.curve[i].mean_e).sum::<f64>() / n,
            }
        })
        .collect();
    let method = method_name(cfg.model.kind);
    let row = |name: &str, values: Vec<f64>| {
        let (mean, std) = mean_std(&values);
        SummaryRow { dataset: dataset_name.to_string(), method: name.to_string(), mean, std }
    };
    let summary = vec![
        row(method, repeats.iter().map(|r| 100.0 * r.first_k_accuracy).collect()),
        row("global-model", repeats.iter().map(|r| 100.0 * r.global_accuracy).collect()),
        row("MI-static", repeats.iter().map(|r| 100.0 * r.static_mi_first_k_accuracy).collect()),
        row("LR", repeats.iter().map(|r| 100.0 * r.logistic.accuracy).collect()),
    ];
    Ok(BenchmarkResult {
        dataset: dataset_name.to_string(),
        method: method.to_string(),
        reference: "true-sample".into(),
        expectation: cfg.policy.expectation,
        first_k: cfg.first_k,
        repeats,
        mean_curve,
        summary,
        calibration,
    })
}

/// Multinomial logistic regression on standardized inputs, trained by
/// accelerated full-batch gradient descent on mean cross-entropy plus
/// `‖W‖² / (2N)`.
pub fn logistic_baseline(train: &Dataset, test: &Dataset) -> LogisticResult {
    const MAX_ITER: usize = 20_000;
    const TOL: f64 = 1e-6;
    let (n, m, c) = (train.n_samples(), train.n_features(), train.n_classes());
    let mean: Vec<f64> = (0..m).map(|j| train.samples.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let v = train.samples.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let design = |x: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = (0..m).map(|j| (x[j] - mean[j]) / scale[j]).collect();
        z.push(1.0);
        z
    };
    let xs: Vec<Vec<f64>> = train.samples.iter().map(|x| design(x)).collect();
    let d = m + 1;
    let logits = |w: &[f64], z: &[f64]| -> Vec<f64> {
        (0..c).map(|k| (0..d).map(|j| w[k * d + j] * z[j]).sum()).collect()
    };
    let softmax = |l: Vec<f64>| -> Vec<f64> {
        let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let gradient = |w: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; c * d];
        for (z, &y) in xs.iter().zip(&train.labels) {
            let p = softmax(logits(w, z));
            for k in 0..c {
                let r = p[k] - f64::from(u8::from(k == y));
                for j in 0..d {
                    g[k * d + j] += r * z[j] / n as f64;
                }
            }
        }
        for k in 0..c {
            for j in 0..m {
                g[k * d + j] += w[k * d + j] / n as f64;
            }
        }
        g
    };
    let step = 1.0 / (0.5 * d as f64 + 1.0 / n as f64);
    let mut w = vec![0.0; c * d];
    let mut prev = w.clone();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITER {
        iterations = it;
        let beta = (it as f64 - 1.0) / (it as f64 + 2.0);
        let look: Vec<f64> = w.iter().zip(&prev).map(|(a, b)| a + beta * (a - b)).collect();
        let g = gradient(&look);
        prev = w;
        w = look.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < TOL {
            converged = true;
            break;
        }
    }
    let correct = test
        .samples
        .iter()
        .zip(&test.labels)
        .filter(|(x, &y)| crate::rules::argmax(&logits(&w, &design(x))) == y)
        .count();
    LogisticResult {
        accuracy: correct as f64 / test.n_samples().max(1) as f64,
        converged,
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_membership: f64,
    /// `Σ_{D_k} μ·1[y=c] / |D_k|`; `None` for an empty bin.
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rule: usize,
    pub class: usize,
    pub support: f64,
    /// `Σ μ·1[y=c] / Σ μ` over the whole dataset.
    pub global_confidence: f64,
    pub bins: Vec<CalibrationBin>,
    /// `|global − Σ_k |D_k|·Confidence_k / Σ μ|`; 0 for a rule with no support.
    pub residual: f64,
}

/// Per-rule membership-binned confidence of the consequent class. Bin `k`
/// covers `[k/B, (k+1)/B)`, the last one closed at 1. Every sample lands in
/// some bin, including those with membership 0.
pub fn calibration_report(rb: &RuleBase, ds: &Dataset, bins: usize) -> Vec<CalibrationReport> {
    let bins = bins.max(2);
    rb.rules
        .iter()
        .enumerate()
        .map(|(index, rule)| calibrate_rule(rb, rule, index, ds, bins))
        .collect()
}

fn calibrate_rule(rb: &RuleBase, rule: &Rule, index: usize, ds: &Dataset, bins: usize) -> CalibrationReport {
    let c = rule.consequent;
    let mut count = vec![0usize; bins];
    let mut mu_sum = vec![0.0; bins];
    let mut hit = vec![0.0; bins];
    let mut total_mu = 0.0;
    let mut total_hit = 0.0;
    for (x, &y) in ds.samples.iter().zip(&ds.labels) {
        let mu = rb.truth_degree(rule, &PartialObservation::full(x));
        let k = ((mu * bins as f64).floor() as usize).min(bins - 1);
        count[k] += 1;
        mu_sum[k] += mu;
        total_mu += mu;
        if y == c {
            hit[k] += mu;
            total_hit += mu;
        }
    }
    let records: Vec<CalibrationBin> = (0..bins)
        .map(|k| CalibrationBin {
            lower: k as f64 / bins as f64,
            upper: (k + 1) as f64 / bins as f64,
            count: count[k],
            mean_membership: if count[k] > 0 { mu_sum[k] / count[k] as f64 } else { 0.0 },
            confidence: (count[k] > 0).then(|| hit[k] / count[k] as f64),
        })
        .collect();
    let (global, residual) = if total_mu > 0.0 {
        let global = total_hit / total_mu;
        let recombined: f64 = records
            .iter()
            .filter_map(|b| b.confidence.map(|conf| b.count as f64 * conf))
            .sum::<f64>()
            / total_mu;
        (global, (global - recombined).abs())
    } else {
        (0.0, 0.0)
    };
    CalibrationReport {
        rule: index,
        class: c,
        support: total_mu / ds.n_samples().max(1) as f64,
        global_confidence: global,
        bins: records,
        residual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningReport {
    pub episodes: usize,
    pub exact_episodes: usize,
    pub steps: usize,
    pub mismatched_steps: usize,
}

impl PruningReport {
    pub fn passed(&self) -> bool {
        self.episodes > 0 && self.exact_episodes == self.episodes
    }
}

/// Replays one episode per test sample and checks, at every visited state,
/// that the prediction from surviving rules alone is bit-identical to the
/// prediction from the whole base.
pub fn verify_pruning(
    model: &GlobalModel,
    ec: &EmpiricalConditional,
    test: &Dataset,
    policy: &PolicyConfig,
) -> Result<PruningReport, EngineError> {
    let rb = model.rule_base();
    let per_episode: Vec<(usize, usize)> = test
        .samples
        .par_iter()
        .map(|x| {
            let state = run_episode(x, model, ec, policy, None)?;
            let mut obs = PartialObservation::empty(x.len());
            let mut features = state.trace.iter().map(|s| s.feature);
            let (mut steps, mut bad) = (0, 0);
            loop {
                let alive = surviving_rules(rb, &obs, policy.theta);
                let pruned = model.predict_partial_among(&obs, |r| alive.binary_search(&r).is_ok());
                steps += 1;
                if pruned != model.predict_partial(&obs) {
                    bad += 1;
                }
                match features.next() {
                    Some(j) => obs.observe(j, x[j]),
                    None => break,
                }
            }
            Ok((steps, bad))
        })
        .collect::<Result<_, EngineError>>()?;
    Ok(PruningReport {
        episodes: per_episode.len(),
        exact_episodes: per_episode.iter().filter(|e| e.1 == 0).count(),
        steps: per_episode.iter().map(|e| e.0).sum(),
        mismatched_steps: per_episode.iter().map(|e| e.1).sum(),
    })
}

/// How often estimator-driven and oracle-driven selection pick the same
/// feature, over every state `(S, x_S)` with `|S| < M` of each test sample
/// that has at least two candidates. Both see the true-sample reference;
/// the oracle uses whichever expectation `policy` selects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub states: usize,
    pub matches: usize,
}

impl AgreementReport {
    pub fn rate(&self) -> f64 {
        self.matches as f64 / self.states.max(1) as f64
    }
}

pub fn estimator_agreement(
    model: &GlobalModel,
    ec: &EmpiricalConditional,
    net: &ValueNet,
    test: &Dataset,
    policy: &PolicyConfig,
) -> Result<AgreementReport, EngineError> {
    let m = test.n_features();
    let oracle = PolicyConfig { value_source: ValueSource::Oracle, budget: m, u_halt_threshold: 0.0, ..policy.clone() };
    let learned = PolicyConfig { value_source: ValueSource::Estimator, ..oracle.clone() };
    let counts: Vec<(usize, usize)> = test
        .samples
        .par_iter()
        .map(|x| {
            let (mut states, mut matches) = (0, 0);
            for mask in 0u64..(1 << m) {
                let observed: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
                if observed.len() >= m {
                    continue;
                }
                let obs = PartialObservation::from_sample(x, &observed);
                if active_features(model.rule_base(), &obs, oracle.theta).len() < 2 {
                    continue;
                }
                let reference = Reference::TrueSample { prediction: model.predict_full(x) };
                let mut a = SessionState::new(m, m, reference);
                a.observation = obs;
                let mut b = a.clone();
                let pick = |d: Decision| match d {
                    Decision::Query(s) => Some(s.feature),
                    Decision::Stop(_) => None,
                };
                let o = pick(select_next(&mut a, model, ec, &oracle, None)?);
                let l = pick(select_next(&mut b, model, ec, &learned, Some(net))?);
                states += 1;
                matches += usize::from(o.is_some() && o == l);
            }
            Ok((states, matches))
        })
        .collect::<Result<_, EngineError>>()?;
    Ok(AgreementReport {
        states: counts.iter().map(|c| c.0).sum(),
        matches: counts.iter().map(|c| c.1).sum(),
    })
}

/// Three discrete features with uniform values in `{0, 1, 2}`: `x0` decides
/// the label most of the time, `x1` breaks ties of `x0 = 1`, `x2` is noise.
/// A 10% label flip keeps every leaf impure.
pub fn synthetic_three_feature(n: usize, seed: u64) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..3).map(|_| f64::from(rng.gen_range(0u8..3))).collect();
        let clean = match x[0] as u8 {
            0 => 0,
            2 => 1,
            _ => usize::from(x[1] >= 1.0),
        };
        let y = if rng.gen_bool(0.1) { 1 - clean } else { clean };
        samples.push(x);
        labels.push(y);
    }
    Dataset::new(
        vec!["x0".into(), "x1".into(), "x2".into()],
        samples,
        labels,
        vec!["neg".into(), "pos".into()],
    )
    .expect("synthetic data is valid")
}

/// Directory name for a benchmark run: `run_<unix seconds>_seed<seed>`.
pub fn run_dir_name(seed: u64) -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("run_{secs}_seed{seed}")
}

pub fn curves_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("k,accuracy,mean_u,mean_e\n");
    for p in curve {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", p.k, p.accuracy, p.mean_u, p.mean_e);
    }
    s
}

pub fn summary_csv(result: &BenchmarkResult) -> String {
    let mut s = String::from("dataset,method,mean,std,repeats,first_k,reference,expectation\n");
    for r in &result.summary {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{},{},{},{}",
            r.dataset,
            r.method,
            r.mean,
            r.std,
            result.repeats.len(),
            result.first_k,
            result.reference,
            match result.expectation {
                Expectation::Joint => "joint",
                Expectation::FixedReference => "fixed-reference",
            }
        );
    }
    s
}

pub fn calibration_csv(report: &CalibrationReport) -> String {
    let mut s = String::from("bin_lower,bin_upper,count,mean_membership,confidence,global_confidence,residual\n");
    for b in &report.bins {
        let conf = b.confidence.map_or(String::new(), |c| format!("{c:.6}"));
        let _ = writeln!(
            s,
            "{:.4},{:.4},{},{:.6},{},{:.6},{:.3e}",
            b.lower, b.upper, b.count, b.mean_membership, conf, report.global_confidence, report.residual
        );
    }
    s
}

/// Line chart of accuracy (blue), mean u (green) and mean e (red) against k.
pub fn curves_svg(title: &str, curve: &[CurvePoint]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let k_max = curve.iter().map(|p| p.k).max().unwrap_or(1).max(1) as f64;
    let k_min = curve.iter().map(|p| p.k).min().unwrap_or(0) as f64;
    let y_max = curve
        .iter()
        .flat_map(|p| [p.accuracy, p.mean_u, p.mean_e])
        .fold(1.0, f64::max);
    let px = |k: usize| {
        let span = (k_max - k_min).max(1.0);
        pad + (k as f64 - k_min) / span * (w - 2.0 * pad)
    };
    let py = |v: f64| h - pad - v / y_max * (h - 2.0 * pad);
    let line = |f: &dyn Fn(&CurvePoint) -> f64, color: &str| {
        let pts: Vec<String> = curve.iter().map(|p| format!("{:.2},{:.2}", px(p.k), py(f(p)))).collect();
        format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" "))
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        escape(title),
        b = h - pad,
        r = w - pad
    );
    for p in curve {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            px(p.k),
            h - pad + 14.0,
            p.k
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"8\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{:.2}</text>",
        pad + 4.0,
        y_max
    );
    s += &line(&|p| p.accuracy, "#1f5fbf");
    s += &line(&|p| p.mean_u, "#2a9d3a");
    s += &line(&|p| p.mean_e, "#c62828");
    for (i, (label, color)) in [("accuracy", "#1f5fbf"), ("mean u", "#2a9d3a"), ("mean e", "#c62828")].iter().enumerate() {
        let y = pad + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>",
            w - pad - 70.0
        );
    }
    s += "</svg>\n";
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes all benchmark artifacts into `dir` (created if needed).
pub fn write_outputs(result: &BenchmarkResult, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put(format!("curves_{}.csv", result.dataset), curves_csv(&result.mean_curve))?;
    put(
        format!("curves_{}.svg", result.dataset),
        curves_svg(&format!("{} {}", result.dataset, result.method), &result.mean_curve),
    )?;
    put("summary.csv".into(), summary_csv(result))?;
    for report in &result.calibration {
        put(format!("calibration_R{}.csv", report.rule), calibration_csv(report))?;
    }
    let json = serde_json::to_string_pretty(result).map_err(io::Error::other)?;
    put("result.json".into(), json + "\n")?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::{FeaturePartition, FuzzyPartition};
    use crate::rules::{Condition, Logic, MembershipFunction, Predicate, PredictionDistribution, Structure};

    fn outcome(correct: bool, u: f64) -> Outcome {
        Outcome { correct, u, e: 0.0 }
    }

    #[test]
    fn carry_forward_past_early_stop() {
        let outcomes = vec![
            vec![outcome(false, 1.0), outcome(true, 0.0)],
            vec![outcome(false, 0.5), outcome(false, 0.4), outcome(true, 0.0)],
        ];
        let c = curve_from(&outcomes, 1..=4);
        assert_eq!(c.iter().map(|p| p.accuracy).collect::<Vec<_>>(), vec![0.5, 1.0, 1.0, 1.0]);
        assert!((c[0].mean_u - 0.2).abs() < 1e-12);
        assert!((mean_accuracy(&outcomes, 4) - 0.875).abs() < 1e-12);
    }

    #[test]
    fn complexity_example() {
        let rb = RuleBase {
            rules: vec![
                Rule::new(vec![Condition::new(0, Predicate::AtMost { threshold: 1.0 })], PredictionDistribution::uniform(2), 0.5),
                Rule::new(
                    vec![
                        Condition::new(0, Predicate::Above { threshold: 1.0 }),
                        Condition::new(1, Predicate::AtMost { threshold: 1.0 }),
                        Condition::new(2, Predicate::AtMost { threshold: 1.0 }),
                    ],
                    PredictionDistribution::uniform(2),
                    0.5,
                ),
            ],
            logic: Logic::Crisp,
            structure: Structure::Flat,
            partition: None,
            default_rule: None,
            prior: PredictionDistribution::uniform(2),
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            class_names: vec!["x".into(), "y".into()],
        };
        assert_eq!(complexity_metrics(&rb), (2, 2.0));
    }

    fn ramp_base() -> RuleBase {
        let terms = vec![MembershipFunction::trapezoidal("Ramp", 0.0, 1.0, 1.0, 1.0)];
        RuleBase {
            rules: vec![Rule::new(
                vec![Condition::new(0, Predicate::Is { term: 0 })],
                PredictionDistribution::new(vec![0.4, 0.6]).unwrap(),
                0.5,
            )],
            logic: Logic::Fuzzy,
            structure: Structure::Flat,
            partition: Some(FuzzyPartition { features: vec![FeaturePartition { lo: 0.0, hi: 1.0, terms }] }),
            default_rule: None,
            prior: PredictionDistribution::uniform(2),
            feature_names: vec!["x".into()],
            class_names: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn calibration_hand_tally() {
        // mu = x; consequent class 1.
        let ds = Dataset::new(
            vec!["x".into()],
            vec![vec![0.1], vec![0.3], vec![0.35], vec![0.9], vec![1.0]],
            vec![1, 0, 1, 1, 0],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let rb = ramp_base();
        let rep = &calibration_report(&rb, &ds, 5)[0];
        assert_eq!(rep.class, 1);
        let counts: Vec<usize> = rep.bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 2, 0, 0, 2]);
        assert!((rep.bins[0].confidence.unwrap() - 0.1).abs() < 1e-12);
        assert!((rep.bins[1].confidence.unwrap() - 0.35 / 2.0).abs() < 1e-12);
        assert_eq!(rep.bins[2].confidence, None);
        assert!((rep.bins[4].confidence.unwrap() - 0.9 / 2.0).abs() < 1e-12);
        assert!((rep.global_confidence - 1.35 / 2.65).abs() < 1e-12);
        assert!(rep.residual < 1e-12);
    }

    #[test]
    fn calibration_crisp_limit() {
        let ds = Dataset::new(
            vec!["x".into()],
            vec![vec![0.0], vec![1.0], vec![1.0], vec![1.0]],
            vec![1, 1, 0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let rep = &calibration_report(&ramp_base(), &ds, 5)[0];
        assert!((rep.bins[4].confidence.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.bins[0].confidence, Some(0.0));
        assert!((rep.global_confidence - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_separates_easy_data() {
        let samples: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i), f64::from(i % 3)]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let ds = Dataset::new(vec!["a".into(), "b".into()], samples, labels, vec!["n".into(), "y".into()]).unwrap();
        let r = logistic_baseline(&ds, &ds);
        assert!(r.accuracy >= 0.95);
        assert!(r.iterations >= 1);
    }

    #[test]
    fn svg_and_csv_render() {
        let curve = vec![
            CurvePoint { k: 1, accuracy: 0.5, mean_u: 0.7, mean_e: 0.1 },
            CurvePoint { k: 2, accuracy: 0.9, mean_u: 0.1, mean_e: 0.05 },
        ];
        let svg = curves_svg("wine <cart>", &curve);
        assert!(svg.starts_with("<svg") && svg.contains("&lt;cart&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(curves_csv(&curve).lines().count(), 3);
    }
}
