//! Property tests for invariants that span modules.

use proptest::prelude::*;

use ruledfs_core::cart::{fit_cart, fit_ensemble, CartConfig, Member, Resampling};
use ruledfs_core::data::{fit_discretization, Dataset, EmpiricalConditional, PartialObservation};
use ruledfs_core::engine::{run_episode, select_next, Expectation, PolicyConfig, Reference, SessionState};
use ruledfs_core::infotheory::{expected_kl_closed_form, expected_kl_direct};
use ruledfs_core::model::{fit_model, GlobalModel, ModelConfig, ModelKind};
use ruledfs_core::rules::PredictionDistribution;
use ruledfs_core::uncertainty::{aleatoric_u, epistemic_cart, epistemic_fuzzy};

/// Small labelled datasets on a coarse grid, every class present.
fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..=4, 2usize..=3, 24usize..=48).prop_flat_map(|(m, c, n)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..6, m), n),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(rows, mut labels)| {
                for (k, l) in labels.iter_mut().take(c).enumerate() {
                    *l = k;
                }
                let samples = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                Dataset::new(
                    (0..m).map(|j| format!("f{j}")).collect(),
                    samples,
                    labels,
                    (0..c).map(|k| format!("c{k}")).collect(),
                )
                .unwrap()
            })
    })
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn small_fuzzy(seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(ModelKind::Fuzzy, seed);
    cfg.ga.population_size = 8;
    cfg.ga.generations = 4;
    cfg
}

/// Observation of `x` on the features whose bit is set in `mask`.
fn masked(x: &[f64], mask: u32) -> PartialObservation {
    let features: Vec<usize> = (0..x.len()).filter(|j| mask >> j & 1 == 1).collect();
    PartialObservation::from_sample(x, &features)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn conditional_is_a_distribution_and_discretization_is_deterministic(
        ds in dataset(), bins in 2usize..6, mask in 0u32..16, row in 0usize..24,
    ) {
        let scheme = fit_discretization(&ds, bins).unwrap();
        prop_assert_eq!(&scheme, &fit_discretization(&ds, bins).unwrap());
        let ec = EmpiricalConditional::fit(&ds, scheme, 1.0);
        let x = &ds.samples[row % ds.n_samples()];
        let obs = masked(x, mask % (1 << ds.n_features()));
        for i in obs.unobserved_indices() {
            let p = ec.conditional_distribution(&obs, i).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn truth_degrees_are_bounded_and_shrink_as_features_arrive(
        ds in dataset(), seed in 0u64..4, order_seed in any::<u64>(), row in 0usize..24, fuzzy in any::<bool>(),
    ) {
        let cfg = if fuzzy { small_fuzzy(seed) } else { ModelConfig::new(ModelKind::Cart, seed) };
        let model = fit_model(&ds, &cfg).unwrap();
        let rb = model.rule_base();
        let x = &ds.samples[row % ds.n_samples()];
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by_key(|&j| (order_seed.rotate_left(j as u32 * 7) ^ j as u64, j));
        let mut obs = PartialObservation::empty(x.len());
        let mut previous = vec![1.0; rb.rules.len()];
        for j in order {
            obs.observe(j, x[j]);
            for (r, rule) in rb.rules.iter().enumerate() {
                let d = rb.truth_degree(rule, &obs);
                let bound = rule
                    .antecedent
                    .iter()
                    .filter_map(|c| obs.get(c.feature).map(|v| rb.condition_degree(c, v)))
                    .fold(1.0, f64::min);
                prop_assert!(d <= bound + 1e-15);
                prop_assert!(d <= previous[r]);
                previous[r] = d;
            }
        }
    }

    #[test]
    fn cart_rules_partition_space_and_match_the_tree(
        ds in dataset(), seed in 0u64..4, probe in prop::collection::vec(-1.0f64..7.0, 4),
    ) {
        let cfg = CartConfig { seed, bootstrap_count: 3, ..CartConfig::default() };
        let e = fit_ensemble(&ds, &cfg).unwrap();
        prop_assert_eq!(&e.primary.rules, &fit_cart(&ds, &cfg));
        let rb = &e.primary.rules;
        let x = &probe[..ds.n_features()];
        let full = PartialObservation::full(x);
        let firing = rb.truth_degrees(&full).iter().filter(|&&d| d == 1.0).count();
        prop_assert_eq!(firing, 1);
        prop_assert_eq!(rb.predict(&full), e.primary.tree.predict(x));
        prop_assert_eq!(e.predict_imputed(&full, Member::Primary), rb.predict(&full));
    }

    #[test]
    fn fuzzy_rules_respect_condition_limits(ds in dataset(), seed in 0u64..4, max_c in 1usize..3) {
        let mut cfg = small_fuzzy(seed);
        cfg.ga.max_conditions_per_rule = max_c;
        let model = fit_model(&ds, &cfg).unwrap();
        prop_assert_eq!(&model, &fit_model(&ds, &cfg).unwrap());
        for rule in &model.rule_base().rules {
            prop_assert!(rule.antecedent.len() <= max_c);
            let mut features: Vec<usize> = rule.features().collect();
            features.sort_unstable();
            features.dedup();
            prop_assert_eq!(features.len(), rule.antecedent.len());
        }
    }

    #[test]
    fn epistemic_terms_vanish_when_members_agree(ds in dataset(), seed in 0u64..4, mask in 0u32..16, row in 0usize..24) {
        let x = &ds.samples[row % ds.n_samples()];
        let obs = masked(x, mask % (1 << ds.n_features()));

        let cfg = CartConfig { seed, bootstrap_count: 3, resampling: Resampling::Identity, ..CartConfig::default() };
        let e = fit_ensemble(&ds, &cfg).unwrap();
        prop_assert_eq!(epistemic_cart(&e, &obs), 0.0);

        let GlobalModel::Fuzzy(mut f) = fit_model(&ds, &small_fuzzy(seed)).unwrap() else { unreachable!() };
        let shared = PredictionDistribution::uniform(ds.n_classes());
        for r in &mut f.rule_base.rules {
            r.confidence = shared.clone();
        }
        prop_assert_eq!(epistemic_fuzzy(&f.rule_base, &obs), 0.0);
    }

    #[test]
    fn expected_kl_decomposes(g in simplex(4), a in simplex(4), b in simplex(4)) {
        prop_assert!((expected_kl_direct(&g, &a, &b) - expected_kl_closed_form(&g, &a, &b)).abs() < 1e-9);
    }

    #[test]
    fn episodes_never_repeat_features_and_end_at_zero_u(
        ds in dataset(), seed in 0u64..4, row in 0usize..24, joint in any::<bool>(), fuzzy in any::<bool>(),
    ) {
        let kind = if fuzzy { ModelKind::Fuzzy } else { ModelKind::Cart };
        let cfg = if fuzzy { small_fuzzy(seed) } else { ModelConfig::new(kind, seed) };
        let model = fit_model(&ds, &cfg).unwrap();
        let ec = EmpiricalConditional::fit(&ds, fit_discretization(&ds, 3).unwrap(), 1.0);
        let m = ds.n_features();
        let policy = PolicyConfig {
            theta: 0.0,
            expectation: if joint { Expectation::Joint } else { Expectation::FixedReference },
            ..PolicyConfig::for_kind(kind, m)
        };
        let x = &ds.samples[row % ds.n_samples()];

        let a = run_episode(x, &model, &ec, &policy, None).unwrap();
        let b = run_episode(x, &model, &ec, &policy, None).unwrap();
        prop_assert_eq!(&a.trace, &b.trace);

        let mut seen: Vec<usize> = a.trace.iter().map(|s| s.feature).collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), a.trace.len());

        let full = PartialObservation::full(x);
        prop_assert_eq!(aleatoric_u(model.predict_full(x), model.predict_partial(&full)), 0.0);

        let mut s1 = SessionState::new(m, m, Reference::ImputedGlobal);
        let mut s2 = s1.clone();
        let d1 = select_next(&mut s1, &model, &ec, &policy, None).unwrap();
        let d2 = select_next(&mut s2, &model, &ec, &policy, None).unwrap();
        prop_assert_eq!(format!("{d1:?}"), format!("{d2:?}"));
    }
}
