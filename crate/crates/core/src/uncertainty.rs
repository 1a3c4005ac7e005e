//! Aleatoric and epistemic uncertainty of rule-based sub-models and the
//! combined selection quality `q = u + λe`.

use serde::{Deserialize, Serialize};

use crate::cart::{CartEnsemble, Member};
use crate::data::PartialObservation;
use crate::rules::{RuleBase, Winner};

/// Added to every probability before the smoothed KL divergence.
pub const EPSILON: f64 = 1e-9;

fn smoothed(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().map(|v| v + EPSILON).sum();
    p.iter().map(|v| (v + EPSILON) / total).collect()
}

/// `Σ p ln(p/q)` in nats after ε-smoothing both arguments.
pub fn kl_divergence(p: impl AsRef<[f64]>, q: impl AsRef<[f64]>) -> f64 {
    let (p, q) = (p.as_ref(), q.as_ref());
    assert_eq!(p.len(), q.len(), "kl_divergence: length mismatch");
    let (ps, qs) = (smoothed(p), smoothed(q));
    ps.iter()
        .zip(&qs)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Unsmoothed KL divergence; `0 ln 0 = 0`, infinite when `q` misses mass of `p`.
pub fn kl_exact(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

/// `u(x_S) = KL(p(ŷ|x) ‖ p(ŷ|x_S))`.
pub fn aleatoric_u(global_pred: impl AsRef<[f64]>, sub_pred: impl AsRef<[f64]>) -> f64 {
    kl_divergence(global_pred, sub_pred)
}

/// One minus the winner's truth degree (1 when nothing fires). Diagnostic only.
pub fn epistemic_naive(rb: &RuleBase, obs: &PartialObservation) -> f64 {
    1.0 - rb.winner(obs).degree()
}

/// `Σ_r r(x_S) · KL(p_r ‖ p_r*)` over every rule, including the zero self-term.
pub fn epistemic_fuzzy(rb: &RuleBase, obs: &PartialObservation) -> f64 {
    let winner = rb.winner(obs);
    if matches!(winner, Winner::NoFire | Winner::Default) {
        return 0.0;
    }
    let star = rb.prediction_for(winner);
    rb.rules
        .iter()
        .map(|r| {
            let d = rb.truth_degree(r, obs);
            if d == 0.0 {
                0.0
            } else {
                d * kl_divergence(&r.confidence, &star)
            }
        })
        .sum()
}

/// Mean over auxiliary members of `KL(p^i_r* ‖ p_r*)`, all under mean imputation.
pub fn epistemic_cart(e: &CartEnsemble, obs: &PartialObservation) -> f64 {
    if e.auxiliary.is_empty() {
        return 0.0;
    }
    let star = e.predict_imputed(obs, Member::Primary);
    let total: f64 = (0..e.auxiliary.len())
        .map(|i| kl_divergence(e.predict_imputed(obs, Member::Auxiliary(i)), &star))
        .sum();
    total / e.auxiliary.len() as f64
}

pub fn quality(u_val: f64, e_val: f64, lambda: f64) -> f64 {
    u_val + lambda * e_val
}

/// Expected uncertainties of acquiring one candidate feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub feature: usize,
    pub expected_u: f64,
    pub expected_e: f64,
    pub q: f64,
}

impl CandidateValue {
    pub fn new(feature: usize, expected_u: f64, expected_e: f64, lambda: f64) -> Self {
        CandidateValue {
            feature,
            expected_u,
            expected_e,
            q: quality(expected_u, expected_e, lambda),
        }
    }
}

/// Candidate values at one decision, ordered by feature index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityBreakdown {
    pub lambda: f64,
    pub records: Vec<CandidateValue>,
}

impl QualityBreakdown {
    pub fn new(lambda: f64, mut records: Vec<CandidateValue>) -> Self {
        records.sort_by_key(|r| r.feature);
        QualityBreakdown { lambda, records }
    }

    /// Record with the smallest `q`, lowest feature index on ties.
    pub fn best(&self) -> Option<&CandidateValue> {
        let mut best: Option<&CandidateValue> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.q < b.q) {
                best = Some(r);
            }
        }
        best
    }

    pub fn get(&self, feature: usize) -> Option<&CandidateValue> {
        self.records.iter().find(|r| r.feature == feature)
    }

    /// Largest `|q − (u + λe)|` over the records.
    pub fn max_identity_residual(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.q - quality(r.expected_u, r.expected_e, self.lambda)).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::{FeaturePartition, FuzzyPartition};
    use crate::rules::{Condition, Logic, MembershipFunction, Predicate, PredictionDistribution, Rule, Structure};
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> PredictionDistribution {
        PredictionDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence([0.3, 0.7], [0.3, 0.7]), 0.0);
        assert!((kl_divergence([1.0, 0.0], [0.5, 0.5]) - 2f64.ln()).abs() < 1e-7);
        let hand = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl_divergence([0.5, 0.5], [0.25, 0.75]) - hand).abs() < 1e-8);
        assert!((hand - 0.1438).abs() < 1e-4);
    }

    #[test]
    fn aleatoric_examples() {
        let hand = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((aleatoric_u([0.9, 0.1], [0.5, 0.5]) - hand).abs() < 1e-8);
        assert!((hand - 0.3681).abs() < 1e-4);
        assert_eq!(aleatoric_u([0.2, 0.8], [0.2, 0.8]), 0.0);
    }

    #[test]
    fn quality_examples() {
        assert_eq!(quality(0.5, 0.2, 0.0), 0.5);
        assert!((quality(0.5, 0.2, 1.0) - 0.7).abs() < 1e-15);
        assert_eq!(quality(0.0, 0.0, 0.3), 0.0);
    }

    /// Feature 0 with terms Ramp (0→1 over [0,1]) and Peak (triangle at 0.5).
    fn base(rules: Vec<Rule>) -> RuleBase {
        let terms = vec![
            MembershipFunction::trapezoidal("Ramp", 0.0, 1.0, 1.0, 1.0),
            MembershipFunction::triangular("Peak", 0.0, 0.5, 1.0),
            MembershipFunction::trapezoidal("Fall", 0.0, 0.0, 0.0, 1.0),
        ];
        RuleBase {
            rules,
            logic: Logic::Fuzzy,
            structure: Structure::Flat,
            partition: Some(FuzzyPartition {
                features: vec![FeaturePartition { lo: 0.0, hi: 1.0, terms }; 2],
            }),
            default_rule: None,
            prior: dist(&[0.5, 0.5]),
            feature_names: vec!["a".into(), "b".into()],
            class_names: vec!["n".into(), "y".into()],
        }
    }

    fn rule(feature: usize, term: usize, conf: &[f64]) -> Rule {
        Rule::new(vec![Condition::new(feature, Predicate::Is { term })], dist(conf), 0.1)
    }

    #[test]
    fn naive_examples() {
        let rb = base(vec![rule(0, 0, &[0.9, 0.1])]);
        assert_eq!(epistemic_naive(&rb, &PartialObservation::full(&[1.0, 0.0])), 0.0);
        assert!((epistemic_naive(&rb, &PartialObservation::full(&[0.3, 0.0])) - 0.7).abs() < 1e-12);
        assert_eq!(epistemic_naive(&rb, &PartialObservation::empty(2)), 0.0);
        assert_eq!(epistemic_naive(&rb, &PartialObservation::full(&[0.0, 0.0])), 1.0);
    }

    #[test]
    fn fuzzy_epistemic_examples() {
        let single = base(vec![rule(0, 0, &[0.9, 0.1])]);
        assert_eq!(epistemic_fuzzy(&single, &PartialObservation::full(&[0.6, 0.0])), 0.0);
        let shared = base(vec![rule(0, 0, &[0.7, 0.3]), rule(0, 1, &[0.7, 0.3]), rule(1, 2, &[0.7, 0.3])]);
        assert_eq!(epistemic_fuzzy(&shared, &PartialObservation::full(&[0.6, 0.2])), 0.0);

        // At a = 1: Ramp = 1 (winner), Peak = 0; b = 0.5: Fall = 0.5.
        let rb = base(vec![rule(0, 0, &[0.8, 0.2]), rule(1, 2, &[0.4, 0.6]), rule(0, 1, &[0.1, 0.9])]);
        let obs = PartialObservation::full(&[1.0, 0.5]);
        assert_eq!(rb.truth_degrees(&obs), vec![1.0, 0.5, 0.0]);
        let hand = 0.5 * (0.4 * (0.4f64 / 0.8).ln() + 0.6 * (0.6f64 / 0.2).ln());
        assert!((epistemic_fuzzy(&rb, &obs) - hand).abs() < 1e-8);
    }

    #[test]
    fn breakdown_best_breaks_ties_low() {
        let b = QualityBreakdown::new(
            0.0,
            vec![
                CandidateValue::new(7, 0.1, 0.0, 0.0),
                CandidateValue::new(2, 0.3, 0.0, 0.0),
                CandidateValue::new(4, 0.1, 0.0, 0.0),
            ],
        );
        assert_eq!(b.best().unwrap().feature, 4);
        assert_eq!(b.max_identity_residual(), 0.0);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
        })
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_identity(p in simplex(4), q in simplex(4)) {
            prop_assert!(kl_divergence(&p, &q) >= 0.0);
            prop_assert!(kl_divergence(&p, &p).abs() < 1e-12);
        }

        #[test]
        fn fuzzy_epistemic_vanishes_for_shared_confidence(a in 0.0f64..1.0, b in 0.0f64..1.0, c in simplex(2)) {
            let rb = base(vec![rule(0, 0, &c), rule(0, 1, &c), rule(1, 2, &c), rule(1, 1, &c)]);
            prop_assert_eq!(epistemic_fuzzy(&rb, &PartialObservation::full(&[a, b])), 0.0);
        }
    }
}
