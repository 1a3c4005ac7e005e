//! Crisp and fuzzy rules, their truth degrees under partial observation,
//! winner-takes-all prediction and data-driven support/confidence.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, PartialObservation};
use crate::fuzzy::FuzzyPartition;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("probabilities must be non-negative and sum to 1 (sum = {sum})")]
    NotNormalized { sum: f64 },
    #[error("empty probability vector")]
    EmptyDistribution,
    #[error("rule {rule}: {message}")]
    InvalidRule { rule: usize, message: String },
    #[error("rule base: {0}")]
    InvalidBase(String),
}

/// Normalized class-probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionDistribution(Vec<f64>);

impl PredictionDistribution {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(probabilities: Vec<f64>) -> Result<Self, RuleError> {
        if probabilities.is_empty() {
            return Err(RuleError::EmptyDistribution);
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(RuleError::NotNormalized { sum });
        }
        Ok(PredictionDistribution(probabilities))
    }

    /// Normalizes non-negative weights; all-zero weights give the uniform distribution.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            PredictionDistribution(weights.iter().map(|w| w / total).collect())
        } else {
            Self::uniform(weights.len())
        }
    }

    pub fn uniform(n: usize) -> Self {
        PredictionDistribution(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, class: usize) -> Self {
        let mut p = vec![0.0; n];
        p[class] = 1.0;
        PredictionDistribution(p)
    }

    /// Most probable class; lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PredictionDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for PredictionDistribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Triangular or trapezoidal membership shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Triangular { l: f64, m: f64, r: f64 },
    Trapezoidal { l: f64, m1: f64, m2: f64, r: f64 },
}

/// A named linguistic term such as `Low`, `Medium` or `High`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipFunction {
    pub name: String,
    #[serde(flatten)]
    pub shape: Shape,
}

impl MembershipFunction {
    pub fn triangular(name: impl Into<String>, l: f64, m: f64, r: f64) -> Self {
        MembershipFunction {
            name: name.into(),
            shape: Shape::Triangular { l, m, r },
        }
    }

    pub fn trapezoidal(name: impl Into<String>, l: f64, m1: f64, m2: f64, r: f64) -> Self {
        MembershipFunction {
            name: name.into(),
            shape: Shape::Trapezoidal { l, m1, m2, r },
        }
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        match self.shape {
            Shape::Triangular { l, m, r } => (l, m, m, r),
            Shape::Trapezoidal { l, m1, m2, r } => (l, m1, m2, r),
        }
    }

    /// Membership degree in `[0, 1]`; the plateau `[m1, m2]` evaluates to 1.
    pub fn eval(&self, x: f64) -> f64 {
        let (l, m1, m2, r) = self.corners();
        if (m1..=m2).contains(&x) {
            1.0
        } else if x < l || x > r {
            0.0
        } else if x < m1 {
            (x - l) / (m1 - l)
        } else {
            (r - x) / (r - m2)
        }
    }

    pub fn is_valid(&self) -> bool {
        let (l, m1, m2, r) = self.corners();
        [l, m1, m2, r].iter().all(|v| v.is_finite()) && l <= m1 && m1 <= m2 && m2 <= r
    }
}

/// What a condition asserts about its feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum Predicate {
    /// `lo < x <= hi`; the half-open form keeps merged tree paths exact.
    Interval { lo: f64, hi: f64 },
    AtMost { threshold: f64 },
    Above { threshold: f64 },
    /// `x is <term>` where `term` indexes the feature's fuzzy partition.
    Is { term: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    #[serde(flatten)]
    pub predicate: Predicate,
}

impl Condition {
    pub fn new(feature: usize, predicate: Predicate) -> Self {
        Condition { feature, predicate }
    }
}

/// A conjunction of conditions implying a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub antecedent: Vec<Condition>,
    pub consequent: usize,
    pub confidence: PredictionDistribution,
    pub support: f64,
}

impl Rule {
    /// A rule whose consequent is the argmax of its confidence vector.
    pub fn new(antecedent: Vec<Condition>, confidence: PredictionDistribution, support: f64) -> Self {
        Rule {
            consequent: confidence.argmax(),
            antecedent,
            confidence,
            support,
        }
    }

    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        self.antecedent.iter().map(|c| c.feature)
    }

    pub fn len(&self) -> usize {
        self.antecedent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antecedent.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Logic {
    Crisp,
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Flat,
    /// Rules are root-to-leaf paths of a tree; exactly one fires on a full sample.
    TreePartitioned,
}

/// Outcome of winner selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Winner {
    Rule { index: usize, degree: f64 },
    /// Every rule had degree 0 and the base declares a default rule.
    Default,
    /// Every rule had degree 0 and there is no default rule.
    NoFire,
}

impl Winner {
    pub fn degree(&self) -> f64 {
        match *self {
            Winner::Rule { degree, .. } => degree,
            Winner::Default | Winner::NoFire => 0.0,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            Winner::Rule { index, .. } => Some(index),
            _ => None,
        }
    }
}

/// A set of rules evaluated winner-takes-all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBase {
    pub rules: Vec<Rule>,
    pub logic: Logic,
    pub structure: Structure,
    /// Membership functions per feature (fuzzy bases only).
    pub partition: Option<FuzzyPartition>,
    /// Fires only when every other rule has degree 0.
    pub default_rule: Option<Rule>,
    /// Training class prior, returned on a no-fire outcome.
    pub prior: PredictionDistribution,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl RuleBase {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Degree to which `value` satisfies a single condition.
    pub fn condition_degree(&self, cond: &Condition, value: f64) -> f64 {
        match cond.predicate {
            Predicate::Interval { lo, hi } => f64::from(u8::from(value > lo && value <= hi)),
            Predicate::AtMost { threshold } => f64::from(u8::from(value <= threshold)),
            Predicate::Above { threshold } => f64::from(u8::from(value > threshold)),
            Predicate::Is { term } => self
                .partition
                .as_ref()
                .map_or(0.0, |p| p.membership(cond.feature, term, value)),
        }
    }

    /// Product t-norm over the antecedent; unobserved conditions contribute 1.
    pub fn truth_degree(&self, rule: &Rule, obs: &PartialObservation) -> f64 {
        let mut degree = 1.0;
        for cond in &rule.antecedent {
            if let Some(v) = obs.get(cond.feature) {
                degree *= self.condition_degree(cond, v);
                if degree == 0.0 {
                    break;
                }
            }
        }
        degree
    }

    pub fn truth_degrees(&self, obs: &PartialObservation) -> Vec<f64> {
        self.rules.iter().map(|r| self.truth_degree(r, obs)).collect()
    }

    /// Rule with maximal truth degree, lowest index on ties.
    pub fn winner(&self, obs: &PartialObservation) -> Winner {
        self.winner_among(obs, |_| true)
    }

    /// Winner restricted to the rules for which `allowed` holds.
    pub fn winner_among(&self, obs: &PartialObservation, allowed: impl Fn(usize) -> bool) -> Winner {
        let mut best: Option<(usize, f64)> = None;
        for (index, rule) in self.rules.iter().enumerate() {
            if !allowed(index) {
                continue;
            }
            let degree = self.truth_degree(rule, obs);
            if degree > 0.0 && best.is_none_or(|(_, d)| degree > d) {
                best = Some((index, degree));
            }
        }
        match best {
            Some((index, degree)) => Winner::Rule { index, degree },
            None if self.default_rule.is_some() => Winner::Default,
            None => Winner::NoFire,
        }
    }

    /// Confidence vector of the winner (or default rule / prior).
    pub fn prediction_for(&self, winner: Winner) -> PredictionDistribution {
        match winner {
            Winner::Rule { index, .. } => self.rules[index].confidence.clone(),
            Winner::Default => self
                .default_rule
                .as_ref()
                .map_or_else(|| self.prior.clone(), |r| r.confidence.clone()),
            Winner::NoFire => self.prior.clone(),
        }
    }

    pub fn predict(&self, obs: &PartialObservation) -> PredictionDistribution {
        self.prediction_for(self.winner(obs))
    }

    /// The rule a winner refers to, if any.
    pub fn winner_rule(&self, winner: Winner) -> Option<&Rule> {
        match winner {
            Winner::Rule { index, .. } => self.rules.get(index),
            Winner::Default => self.default_rule.as_ref(),
            Winner::NoFire => None,
        }
    }

    /// Number of rules (excluding any default) and average antecedent length.
    pub fn complexity(&self) -> (usize, f64) {
        let n = self.rules.len();
        if n == 0 {
            return (0, 0.0);
        }
        let total: usize = self.rules.iter().map(Rule::len).sum();
        (n, total as f64 / n as f64)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        let m = self.n_features();
        let c = self.n_classes();
        if self.prior.len() != c {
            return Err(RuleError::InvalidBase("prior length differs from class count".into()));
        }
        if self.logic == Logic::Fuzzy && self.partition.is_none() {
            return Err(RuleError::InvalidBase("fuzzy base without partition".into()));
        }
        let all = self.rules.iter().chain(self.default_rule.iter());
        for (i, rule) in all.enumerate() {
            let bad = |message: String| RuleError::InvalidRule { rule: i, message };
            PredictionDistribution::new(rule.confidence.as_slice().to_vec())
                .map_err(|e| bad(e.to_string()))?;
            if rule.confidence.len() != c {
                return Err(bad("confidence length differs from class count".into()));
            }
            if rule.consequent != rule.confidence.argmax() {
                return Err(bad("consequent is not the argmax of the confidence vector".into()));
            }
            let mut seen = vec![false; m];
            for cond in &rule.antecedent {
                if cond.feature >= m {
                    return Err(bad(format!("feature {} out of range", cond.feature)));
                }
                if std::mem::replace(&mut seen[cond.feature], true) {
                    return Err(bad(format!("feature {} used twice", cond.feature)));
                }
                match cond.predicate {
                    Predicate::Interval { lo, hi } if lo > hi => {
                        return Err(bad(format!("empty interval ({lo}, {hi}]")));
                    }
                    Predicate::Is { term } => {
                        let ok = self
                            .partition
                            .as_ref()
                            .is_some_and(|p| term < p.terms(cond.feature).len());
                        if !ok {
                            return Err(bad(format!("unknown fuzzy term {term}")));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Human-readable rendering of one condition.
    pub fn render_condition(&self, cond: &Condition) -> String {
        let name = self
            .feature_names
            .get(cond.feature)
            .cloned()
            .unwrap_or_else(|| format!("x{}", cond.feature));
        match cond.predicate {
            Predicate::Interval { lo, hi } => format!("{name} ∈ ({}, {}]", num(lo), num(hi)),
            Predicate::AtMost { threshold } => format!("{name} ≤ {}", num(threshold)),
            Predicate::Above { threshold } => format!("{name} > {}", num(threshold)),
            Predicate::Is { term } => {
                let label = self
                    .partition
                    .as_ref()
                    .and_then(|p| p.terms(cond.feature).get(term))
                    .map_or_else(|| format!("term{term}"), |mf| mf.name.clone());
                format!("{name} is {label}")
            }
        }
    }

    /// `IF ... THEN <class> [conf 0.91, supp 0.12]`.
    pub fn render_rule(&self, rule: &Rule) -> String {
        let class = self
            .class_names
            .get(rule.consequent)
            .cloned()
            .unwrap_or_else(|| rule.consequent.to_string());
        let body = if rule.antecedent.is_empty() {
            "TRUE".to_string()
        } else {
            rule.antecedent
                .iter()
                .map(|c| self.render_condition(c))
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        format!(
            "IF {body} THEN {class} [conf {:.2}, supp {:.2}]",
            rule.confidence[rule.consequent], rule.support
        )
    }
}

impl fmt::Display for RuleBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, rule) in self.rules.iter().enumerate() {
            writeln!(f, "R{i}: {}", self.render_rule(rule))?;
        }
        if let Some(rule) = &self.default_rule {
            writeln!(f, "DEFAULT: {}", self.render_rule(rule))?;
        }
        Ok(())
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Support and confidence of a rule measured on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportConfidence {
    pub support: f64,
    pub confidence: PredictionDistribution,
    /// Set when no sample fires the rule; confidence is then the class prior.
    pub zero_support: bool,
}

/// Membership-weighted support `Σμ/|D|` and confidence `Σμ·1[y=c] / Σμ`.
/// For crisp rules `μ ∈ {0, 1}` and these reduce to counting.
pub fn rule_support_confidence(rb: &RuleBase, rule: &Rule, ds: &Dataset) -> SupportConfidence {
    let mut mass = vec![0.0; ds.n_classes()];
    for (x, &y) in ds.samples.iter().zip(&ds.labels) {
        mass[y] += rb.truth_degree(rule, &PartialObservation::full(x));
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        SupportConfidence {
            support: total / ds.n_samples() as f64,
            confidence: PredictionDistribution::from_weights(&mass),
            zero_support: false,
        }
    } else {
        SupportConfidence {
            support: 0.0,
            confidence: PredictionDistribution::from_weights(&ds.class_prior()),
            zero_support: true,
        }
    }
}
