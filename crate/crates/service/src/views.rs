//! JSON shapes returned by the service.

use serde::{Deserialize, Serialize};

use ruledfs_core::bundle::ModelBundle;
use ruledfs_core::data::FeatureKind;
use ruledfs_core::engine::{HaltReason, SessionState, Status, Suggestion, TraceStep};
use ruledfs_core::rules::Winner;
use ruledfs_core::uncertainty::CandidateValue;

use crate::SessionResource;

/// The session reference annotation carried by every prediction.
pub const REFERENCE: &str = "imputed-global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub feature: usize,
    pub name: String,
    pub expected_u: f64,
    pub expected_e: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionView {
    pub feature: usize,
    pub name: String,
    pub expected_u: f64,
    pub expected_e: f64,
    pub q: f64,
    pub lambda: f64,
    /// Every active candidate, ascending by feature index.
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureView {
    pub index: usize,
    pub name: String,
    pub categorical_levels: Option<Vec<String>>,
    pub observed: bool,
    pub value: Option<f64>,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionView {
    pub distribution: Vec<f64>,
    pub class: usize,
    pub class_name: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    /// `active`, `exhausted` or `halted`.
    pub status: String,
    pub halt_reason: Option<HaltReason>,
    pub halt_message: Option<String>,
    pub features: Vec<FeatureView>,
    pub prediction: PredictionView,
    pub u: f64,
    pub e: f64,
    pub lambda: f64,
    pub budget: usize,
    pub trace: Vec<TraceStep>,
    pub suggestion: Option<SuggestionView>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedView {
    pub session_id: String,
    pub feature_names: Vec<String>,
    pub initial_suggestion: Option<SuggestionView>,
    pub state: StateView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedView {
    pub state: StateView,
    pub suggestion: Option<SuggestionView>,
    pub halt_reason: Option<HaltReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerView {
    pub text: String,
    /// `None` for the default rule.
    pub rule_index: Option<usize>,
    pub degree: f64,
    pub confidence: Vec<f64>,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationView {
    pub session_id: String,
    /// `None` when no rule fires and the prior is used.
    pub winner: Option<WinnerView>,
    pub prediction: PredictionView,
    pub u: f64,
    pub e: f64,
    pub candidates: Vec<CandidateView>,
    pub trace: Vec<TraceStep>,
    pub status: String,
    pub halt_reason: Option<HaltReason>,
}

fn candidate(bundle: &ModelBundle, c: &CandidateValue) -> CandidateView {
    CandidateView {
        feature: c.feature,
        name: bundle.dataset.feature_names[c.feature].clone(),
        expected_u: c.expected_u,
        expected_e: c.expected_e,
        q: c.q,
    }
}

pub fn suggestion(bundle: &ModelBundle, s: &Suggestion) -> SuggestionView {
    let best = s
        .breakdown
        .get(s.feature)
        .expect("suggested feature has a record");
    SuggestionView {
        feature: s.feature,
        name: bundle.dataset.feature_names[s.feature].clone(),
        expected_u: best.expected_u,
        expected_e: best.expected_e,
        q: best.q,
        lambda: s.breakdown.lambda,
        candidates: s.breakdown.records.iter().map(|c| candidate(bundle, c)).collect(),
    }
}

pub fn status_parts(status: Status) -> (String, Option<HaltReason>, Option<String>) {
    match status {
        Status::Active => ("active".into(), None, None),
        Status::Exhausted => ("exhausted".into(), None, Some("every feature is observed".into())),
        Status::Halted(r) => ("halted".into(), Some(r), Some(r.to_string())),
    }
}

pub fn prediction(bundle: &ModelBundle, state: &SessionState) -> PredictionView {
    let p = bundle.model.predict_partial(&state.observation);
    let class = p.argmax();
    PredictionView {
        class,
        class_name: bundle.dataset.class_names[class].clone(),
        distribution: p.into_vec(),
        reference: REFERENCE.into(),
    }
}

pub fn state(bundle: &ModelBundle, s: &SessionResource) -> StateView {
    let obs = &s.state.observation;
    let features = (0..bundle.n_features())
        .map(|j| FeatureView {
            index: j,
            name: bundle.dataset.feature_names[j].clone(),
            categorical_levels: match &bundle.dataset.feature_kinds[j] {
                FeatureKind::Categorical { levels } => Some(levels.clone()),
                FeatureKind::Numeric => None,
            },
            observed: obs.is_observed(j),
            value: obs.get(j),
            min: bundle.feature_ranges[j].min,
            max: bundle.feature_ranges[j].max,
        })
        .collect();
    let (u, e) = s.state.uncertainty(&bundle.model);
    let (status, halt_reason, halt_message) = status_parts(s.state.status);
    StateView {
        session_id: s.id.clone(),
        status,
        halt_reason,
        halt_message,
        features,
        prediction: prediction(bundle, &s.state),
        u,
        e,
        lambda: s.policy.lambda,
        budget: s.policy.budget,
        trace: s.state.trace.clone(),
        suggestion: s.state.pending.as_ref().map(|p| suggestion(bundle, p)),
        created_at_ms: s.created_at_ms,
        updated_at_ms: s.updated_at_ms,
    }
}

pub fn explanation(bundle: &ModelBundle, s: &SessionResource) -> ExplanationView {
    let model = &bundle.model;
    let rb = model.rule_base();
    let obs = &s.state.observation;
    let w = model.winner(obs);
    let winner = rb.winner_rule(w).map(|rule| WinnerView {
        text: rb.render_rule(rule),
        rule_index: match w {
            Winner::Rule { index, .. } => Some(index),
            _ => None,
        },
        degree: w.degree(),
        confidence: rule.confidence.as_slice().to_vec(),
        support: rule.support,
    });
    let (u, e) = s.state.uncertainty(model);
    let (status, halt_reason, _) = status_parts(s.state.status);
    ExplanationView {
        session_id: s.id.clone(),
        winner,
        prediction: prediction(bundle, &s.state),
        u,
        e,
        candidates: s
            .state
            .pending
            .as_ref()
            .map(|p| p.breakdown.records.iter().map(|c| candidate(bundle, c)).collect())
            .unwrap_or_default(),
        trace: s.state.trace.clone(),
        status,
        halt_reason,
    }
}
