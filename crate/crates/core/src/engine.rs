//! Greedy acquisition: candidate values, search-space reduction, halting and
//! the session state shared by the CLI, benchmark and service.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, EmpiricalConditional, PartialObservation};
use crate::estimator::ValueNet;
use crate::model::{GlobalModel, ModelKind};
use crate::rules::{PredictionDistribution, RuleBase};
use crate::uncertainty::{aleatoric_u, CandidateValue, QualityBreakdown};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("feature {0} is out of range")]
    UnknownFeature(usize),
    #[error("feature {0} is already observed")]
    AlreadyObserved(usize),
    #[error("session is not active ({0})")]
    NotActive(String),
    #[error("value for feature {feature} is not finite")]
    NonFinite { feature: usize },
    #[error("value source is the estimator but no trained value network is available")]
    MissingEstimator,
    #[error("model has {model} features but the conditional has {conditional}")]
    FeatureMismatch { model: usize, conditional: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    #[default]
    Oracle,
    Estimator,
}

/// How the oracle forms the reference prediction inside `E[u]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// The reference varies with the unobserved features: matched training
    /// rows, overwritten with the observed values and the candidate's bin
    /// representative, supply the completions.
    #[default]
    Joint,
    /// The session reference is held fixed while only `x_i` varies.
    FixedReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub lambda: f64,
    pub theta: f64,
    pub budget: usize,
    /// Halt once the current `u` is at or below this value; 0 disables.
    pub u_halt_threshold: f64,
    pub value_source: ValueSource,
    #[serde(default)]
    pub expectation: Expectation,
}

impl PolicyConfig {
    pub const DEFAULT_LAMBDA: f64 = 0.1;

    /// Defaults for a model kind: θ = 0 for crisp bases, 0.05 for fuzzy ones.
    pub fn for_kind(kind: ModelKind, budget: usize) -> Self {
        PolicyConfig {
            lambda: Self::DEFAULT_LAMBDA,
            theta: match kind {
                ModelKind::Cart => 0.0,
                ModelKind::Fuzzy => 0.05,
            },
            budget,
            u_halt_threshold: 0.0,
            value_source: ValueSource::Oracle,
            expectation: Expectation::Joint,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidPolicy(m.into()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1)");
        }
        if self.budget < 1 {
            return bad("budget must be >= 1");
        }
        if !(self.u_halt_threshold >= 0.0) {
            return bad("u_halt_threshold must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// No surviving rule mentions an unobserved feature.
    ActiveSetEmpty,
    UncertaintyBelowThreshold,
    Budget,
}

impl std::fmt::Display for HaltReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HaltReason::ActiveSetEmpty => "active feature set empty",
            HaltReason::UncertaintyBelowThreshold => "uncertainty below threshold",
            HaltReason::Budget => "budget reached",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Status {
    Active,
    /// Every feature is observed.
    Exhausted,
    Halted(HaltReason),
}

/// Which distribution plays the role of the global prediction `p(ŷ|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reference", rename_all = "kebab-case")]
pub enum Reference {
    /// The model's prediction on the complete true sample (benchmarks).
    TrueSample { prediction: PredictionDistribution },
    /// The model's prediction on the imputed completion of the current
    /// observations, recomputed at every step (interactive sessions).
    ImputedGlobal,
}

impl Reference {
    pub fn label(&self) -> &'static str {
        match self {
            Reference::TrueSample { .. } => "true-sample",
            Reference::ImputedGlobal => "imputed-global",
        }
    }

    pub fn resolve(&self, model: &GlobalModel, obs: &PartialObservation) -> PredictionDistribution {
        match self {
            Reference::TrueSample { prediction } => prediction.clone(),
            Reference::ImputedGlobal => model.imputed_global(obs),
        }
    }
}

/// One acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub feature: usize,
    pub value: f64,
    /// Candidate values at decision time; `None` when the feature was observed
    /// without a preceding suggestion.
    pub breakdown: Option<QualityBreakdown>,
    /// Whether the acquired feature was the suggested one.
    pub followed_suggestion: bool,
    pub u_before: f64,
    pub e_before: f64,
    pub u_after: f64,
    pub e_after: f64,
    pub prediction: PredictionDistribution,
    pub winner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub feature: usize,
    pub breakdown: QualityBreakdown,
}

/// What `select_next` decided.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Query(Suggestion),
    Stop(Status),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub observation: PartialObservation,
    pub trace: Vec<TraceStep>,
    pub budget: usize,
    pub status: Status,
    pub reference: Reference,
    /// Latest suggestion, consumed by the next observation.
    pub pending: Option<Suggestion>,
}

impl SessionState {
    pub fn new(n_features: usize, budget: usize, reference: Reference) -> Self {
        SessionState {
            observation: PartialObservation::empty(n_features),
            trace: Vec::new(),
            budget,
            status: Status::Active,
            reference,
            pending: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    /// Current `(u, e)` of the observation.
    pub fn uncertainty(&self, model: &GlobalModel) -> (f64, f64) {
        let reference = self.reference.resolve(model, &self.observation);
        (
            aleatoric_u(&reference, model.predict_partial(&self.observation)),
            model.epistemic(&self.observation),
        )
    }

    /// Records an observed value, appending a trace step.
    pub fn observe(&mut self, model: &GlobalModel, feature: usize, value: f64) -> Result<&TraceStep, EngineError> {
        if let Status::Halted(_) | Status::Exhausted = self.status {
            return Err(EngineError::NotActive(status_text(self.status)));
        }
        if feature >= self.observation.len() {
            return Err(EngineError::UnknownFeature(feature));
        }
        if self.observation.is_observed(feature) {
            return Err(EngineError::AlreadyObserved(feature));
        }
        if !value.is_finite() {
            return Err(EngineError::NonFinite { feature });
        }
        let (u_before, e_before) = self.uncertainty(model);
        let pending = self.pending.take();
        let followed = pending.as_ref().is_some_and(|s| s.feature == feature);
        self.observation.observe(feature, value);
        let (u_after, e_after) = self.uncertainty(model);
        let rb = model.rule_base();
        self.trace.push(TraceStep {
            feature,
            value,
            breakdown: pending.map(|s| s.breakdown),
            followed_suggestion: followed,
            u_before,
            e_before,
            u_after,
            e_after,
            prediction: model.predict_partial(&self.observation),
            winner: model.winner_rule(&self.observation).map(|r| rb.render_rule(r)),
        });
        if self.observation.is_complete() {
            self.status = Status::Exhausted;
        }
        Ok(self.trace.last().expect("just pushed"))
    }
}

pub fn status_text(status: Status) -> String {
    match status {
        Status::Active => "active".into(),
        Status::Exhausted => "all features observed".into(),
        Status::Halted(r) => format!("halted: {r}"),
    }
}

/// Whether a rule survives: no observed condition is false and its degree exceeds θ.
fn rule_survives(rb: &RuleBase, rule_index: usize, obs: &PartialObservation, theta: f64) -> bool {
    let rule = &rb.rules[rule_index];
    let mut degree = 1.0;
    for cond in &rule.antecedent {
        if let Some(v) = obs.get(cond.feature) {
            let t = rb.condition_degree(cond, v);
            if t == 0.0 {
                return false;
            }
            degree *= t;
        }
    }
    degree > theta
}

/// Indices of rules that survive pruning at `theta`.
pub fn surviving_rules(rb: &RuleBase, obs: &PartialObservation, theta: f64) -> Vec<usize> {
    (0..rb.rules.len()).filter(|&r| rule_survives(rb, r, obs, theta)).collect()
}

/// Unobserved features mentioned by surviving rules, ascending.
pub fn active_features(rb: &RuleBase, obs: &PartialObservation, theta: f64) -> Vec<usize> {
    let mut active = vec![false; obs.len()];
    for r in surviving_rules(rb, obs, theta) {
        for j in rb.rules[r].features() {
            if !obs.is_observed(j) {
                active[j] = true;
            }
        }
    }
    (0..obs.len()).filter(|&j| active[j]).collect()
}

/// Expected `(u, e, q)` of observing feature `i`: each bin of `x_i`, weighted
/// by its empirical conditional probability, is substituted by its
/// representative value.
///
/// With `reference = Some(p)` the aleatoric term is `KL(p ‖ sub)` for a fixed
/// `p`. With `None` it is averaged over the matched training rows falling in
/// the bin (all matched rows if the bin has none), each completed with the
/// observed values and the representative, so the reference moves with the
/// completion.
pub fn oracle_value(
    i: usize,
    obs: &PartialObservation,
    model: &GlobalModel,
    ec: &EmpiricalConditional,
    reference: Option<&PredictionDistribution>,
    lambda: f64,
) -> Result<CandidateValue, EngineError> {
    if model.n_features() != ec.n_features() {
        return Err(EngineError::FeatureMismatch {
            model: model.n_features(),
            conditional: ec.n_features(),
        });
    }
    let dist = ec.conditional_distribution(obs, i)?;
    let rows = match reference {
        Some(_) => Vec::new(),
        None => ec.matching_rows(obs),
    };
    let observed = obs.observed_indices();
    let mut eu = 0.0;
    let mut ee = 0.0;
    for (b, p) in dist.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let rep = ec.representatives[i][b];
        let completed = obs.with(i, rep);
        let sub = model.predict_partial(&completed);
        let u = match reference {
            Some(r) => aleatoric_u(r, &sub),
            None => {
                let in_bin: Vec<usize> = rows.iter().copied().filter(|&r| ec.assignments[r][i] == b).collect();
                let pool = if in_bin.is_empty() { &rows } else { &in_bin };
                let total: f64 = pool
                    .iter()
                    .map(|&r| {
                        let mut x = ec.samples[r].clone();
                        for &j in &observed {
                            x[j] = obs.get(j).unwrap_or_default();
                        }
                        x[i] = rep;
                        aleatoric_u(model.predict_full(&x), &sub)
                    })
                    .sum();
                total / pool.len() as f64
            }
        };
        eu += p * u;
        ee += p * model.epistemic(&completed);
    }
    Ok(CandidateValue::new(i, eu, ee, lambda))
}

/// Evaluates every active candidate and picks the smallest `q` (lowest
/// feature index on ties), or halts. Halting precedence: all observed, empty
/// active set, `u` threshold, budget. Updates `state.status` and
/// `state.pending`.
pub fn select_next(
    state: &mut SessionState,
    model: &GlobalModel,
    ec: &EmpiricalConditional,
    cfg: &PolicyConfig,
    net: Option<&ValueNet>,
) -> Result<Decision, EngineError> {
    if !state.is_active() {
        return Ok(Decision::Stop(state.status));
    }
    let stop = |state: &mut SessionState, status: Status| {
        state.status = status;
        state.pending = None;
        Ok(Decision::Stop(status))
    };
    if state.observation.is_complete() {
        return stop(state, Status::Exhausted);
    }
    let candidates = active_features(model.rule_base(), &state.observation, cfg.theta);
    if candidates.is_empty() {
        return stop(state, Status::Halted(HaltReason::ActiveSetEmpty));
    }
    let reference = state.reference.resolve(model, &state.observation);
    let sub = model.predict_partial(&state.observation);
    if cfg.u_halt_threshold > 0.0 && aleatoric_u(&reference, &sub) <= cfg.u_halt_threshold {
        return stop(state, Status::Halted(HaltReason::UncertaintyBelowThreshold));
    }
    if state.trace.len() >= state.budget {
        return stop(state, Status::Halted(HaltReason::Budget));
    }
    let records = match cfg.value_source {
        ValueSource::Oracle => candidates
            .par_iter()
            .map(|&i| {
                let fixed = (cfg.expectation == Expectation::FixedReference).then_some(&reference);
                oracle_value(i, &state.observation, model, ec, fixed, cfg.lambda)
            })
            .collect::<Result<Vec<_>, _>>()?,
        ValueSource::Estimator => {
            let net = net.ok_or(EngineError::MissingEstimator)?;
            let values = net
                .predict_values(&state.observation, &sub)
                .map_err(|e| EngineError::InvalidPolicy(e.to_string()))?;
            candidates
                .iter()
                .map(|&i| {
                    let (u, e) = values[i].expect("unobserved candidate has a value");
                    CandidateValue::new(i, u, e, cfg.lambda)
                })
                .collect()
        }
    };
    let breakdown = QualityBreakdown::new(cfg.lambda, records);
    let feature = breakdown.best().expect("non-empty candidates").feature;
    let suggestion = Suggestion { feature, breakdown };
    state.pending = Some(suggestion.clone());
    Ok(Decision::Query(suggestion))
}

/// Runs a full episode on a known sample, revealing chosen features from it.
pub fn run_episode(
    sample: &[f64],
    model: &GlobalModel,
    ec: &EmpiricalConditional,
    cfg: &PolicyConfig,
    net: Option<&ValueNet>,
) -> Result<SessionState, EngineError> {
    cfg.validate()?;
    let reference = Reference::TrueSample {
        prediction: model.predict_full(sample),
    };
    let mut state = SessionState::new(sample.len(), cfg.budget, reference);
    while let Decision::Query(s) = select_next(&mut state, model, ec, cfg, net)? {
        state.observe(model, s.feature, sample[s.feature])?;
    }
    Ok(state)
}

/// One JSON object per trace step.
pub fn write_trace_jsonl(state: &SessionState, mut out: impl Write) -> std::io::Result<()> {
    for step in &state.trace {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
