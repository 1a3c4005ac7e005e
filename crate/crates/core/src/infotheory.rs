//! Discrete entropy and conditional mutual information, static MI ranking,
//! and an exhaustive check that CMI-greedy and expected-KL-greedy selection
//! agree on constructed discrete worlds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DiscretizationScheme};
use crate::uncertainty::kl_exact;

/// Agreement required between the two CMI formulations.
pub const CMI_TOLERANCE: f64 = 1e-9;
/// Values closer than this count as tied when comparing argmax and argmin.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("CMI formulations disagree: KL form {kl}, entropy form {entropy}")]
    Inconsistent { kl: f64, entropy: f64 },
    #[error("invalid joint table: {0}")]
    InvalidTable(String),
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Dense joint `p(s, x, y)` over a conditioning configuration `s`, a feature
/// value `x` and a class `y`. A single configuration gives `p(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub n_conditions: usize,
    pub n_values: usize,
    pub n_classes: usize,
    /// Row-major over `(s, x, y)`.
    pub p: Vec<f64>,
}

impl JointTable {
    pub fn new(n_conditions: usize, n_values: usize, n_classes: usize, p: Vec<f64>) -> Result<Self, InfoError> {
        if p.len() != n_conditions * n_values * n_classes || p.is_empty() {
            return Err(InfoError::InvalidTable("shape does not match entries".into()));
        }
        let total: f64 = p.iter().sum();
        if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(InfoError::InvalidTable(format!("entries must be non-negative and sum to 1 (sum = {total})")));
        }
        Ok(JointTable { n_conditions, n_values, n_classes, p })
    }

    /// Normalizes non-negative counts into a table.
    pub fn from_counts(n_conditions: usize, n_values: usize, n_classes: usize, counts: &[f64]) -> Result<Self, InfoError> {
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(InfoError::InvalidTable("empty counts".into()));
        }
        Self::new(n_conditions, n_values, n_classes, counts.iter().map(|c| c / total).collect())
    }

    fn at(&self, s: usize, x: usize, y: usize) -> f64 {
        self.p[(s * self.n_values + x) * self.n_classes + y]
    }

    fn p_s(&self, s: usize) -> f64 {
        (0..self.n_values).map(|x| self.p_sx(s, x)).sum()
    }

    fn p_sx(&self, s: usize, x: usize) -> f64 {
        (0..self.n_classes).map(|y| self.at(s, x, y)).sum()
    }

    fn p_sy(&self, s: usize, y: usize) -> f64 {
        (0..self.n_values).map(|x| self.at(s, x, y)).sum()
    }

    /// `Σ_s p(s) KL(p(x,y|s) ‖ p(x|s) p(y|s))`.
    pub fn cmi_kl_form(&self) -> f64 {
        let mut total = 0.0;
        for s in 0..self.n_conditions {
            let ps = self.p_s(s);
            for x in 0..self.n_values {
                let psx = self.p_sx(s, x);
                for y in 0..self.n_classes {
                    let pj = self.at(s, x, y);
                    if pj > 0.0 {
                        total += pj * (pj * ps / (psx * self.p_sy(s, y))).ln();
                    }
                }
            }
        }
        total
    }

    /// `H(y | s) − H(y | s, x)`.
    pub fn cmi_entropy_form(&self) -> f64 {
        let mut h_s = 0.0;
        let mut h_sx = 0.0;
        for s in 0..self.n_conditions {
            let ps = self.p_s(s);
            if ps > 0.0 {
                let cond: Vec<f64> = (0..self.n_classes).map(|y| self.p_sy(s, y) / ps).collect();
                h_s += ps * entropy(&cond);
            }
            for x in 0..self.n_values {
                let psx = self.p_sx(s, x);
                if psx > 0.0 {
                    let cond: Vec<f64> = (0..self.n_classes).map(|y| self.at(s, x, y) / psx).collect();
                    h_sx += psx * entropy(&cond);
                }
            }
        }
        h_s - h_sx
    }
}

/// `I(y; x | s)` computed both ways; errors if the forms disagree.
pub fn cmi(jt: &JointTable) -> Result<f64, InfoError> {
    let kl = jt.cmi_kl_form();
    let entropy = jt.cmi_entropy_form();
    if (kl - entropy).abs() > CMI_TOLERANCE {
        return Err(InfoError::Inconsistent { kl, entropy });
    }
    Ok(kl.max(0.0))
}

/// Unconditional `I(x_i; y)` on discretized data.
pub fn mutual_information(ds: &Dataset, scheme: &DiscretizationScheme, i: usize) -> f64 {
    let (nb, nc) = (scheme.n_bins(i), ds.n_classes());
    let mut counts = vec![0.0; nb * nc];
    for (x, &y) in ds.samples.iter().zip(&ds.labels) {
        counts[scheme.bin(i, x[i]) * nc + y] += 1.0;
    }
    JointTable::from_counts(1, nb, nc, &counts)
        .and_then(|jt| cmi(&jt))
        .unwrap_or(0.0)
}

/// Features by decreasing `I(x_i; y)`, lower index first on ties.
pub fn static_mi_ranking(ds: &Dataset, scheme: &DiscretizationScheme) -> Vec<(usize, f64)> {
    let mut scores: Vec<(usize, f64)> = (0..ds.n_features())
        .map(|i| (i, mutual_information(ds, scheme, i)))
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Summary of the CMI dual-form self-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiCheckReport {
    pub tables: usize,
    pub failures: usize,
    pub max_deviation: f64,
}

impl CmiCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_deviation < CMI_TOLERANCE
    }
}

/// Evaluates both CMI forms on random tables of random shape, some with zero cells.
pub fn cmi_self_check(tables: usize, seed: u64) -> CmiCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CmiCheckReport { tables, failures: 0, max_deviation: 0.0 };
    for _ in 0..tables {
        let (s, x, y) = (rng.gen_range(1..=4), rng.gen_range(2..=5), rng.gen_range(2..=4));
        let mut counts: Vec<f64> = (0..s * x * y).map(|_| rng.gen::<f64>()).collect();
        for c in counts.iter_mut() {
            if rng.gen_bool(0.1) {
                *c = 0.0;
            }
        }
        let Ok(jt) = JointTable::from_counts(s, x, y, &counts) else {
            continue;
        };
        let dev = (jt.cmi_kl_form() - jt.cmi_entropy_form()).abs();
        report.max_deviation = report.max_deviation.max(dev);
        if cmi(&jt).is_err() {
            report.failures += 1;
        }
    }
    report
}

/// `u(x_S ∪ {x_i}) − u(x_S)` computed from the two KL divergences.
pub fn expected_kl_direct(global: &[f64], sub_s: &[f64], sub_si: &[f64]) -> f64 {
    kl_exact(global, sub_si) - kl_exact(global, sub_s)
}

/// `−Σ p(ŷ|x) ln(p(ŷ|x_S,x_i) / p(ŷ|x_S))`.
pub fn expected_kl_closed_form(global: &[f64], sub_s: &[f64], sub_si: &[f64]) -> f64 {
    -global
        .iter()
        .zip(sub_s.iter().zip(sub_si))
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, (a, b))| g * (b / a).ln())
        .sum::<f64>()
}

/// Largest gap between the two sides of the difference identity on random
/// strictly positive distribution triples.
pub fn kl_decomposition_check(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let c = rng.gen_range(2..=6);
            let g = random_simplex(&mut rng, c);
            let a = random_simplex(&mut rng, c);
            let b = random_simplex(&mut rng, c);
            (expected_kl_direct(&g, &a, &b) - expected_kl_closed_form(&g, &a, &b)).abs()
        })
        .fold(0.0, f64::max)
}

/// A random discrete world: a positive joint over feature configurations and
/// a global model `p(ŷ|x)` for every configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub cards: Vec<usize>,
    pub n_classes: usize,
    /// `p(x)` over configurations in mixed-radix order (feature 0 fastest).
    pub p_x: Vec<f64>,
    /// `p(ŷ|x)` per configuration.
    pub global: Vec<Vec<f64>>,
}

impl World {
    pub fn random(rng: &mut ChaCha8Rng, n_features: usize) -> Self {
        let cards: Vec<usize> = (0..n_features).map(|_| rng.gen_range(2..=3)).collect();
        let n_classes = rng.gen_range(2..=3);
        let n: usize = cards.iter().product();
        let p_x = random_simplex(rng, n);
        let global = (0..n).map(|_| random_simplex(rng, n_classes)).collect();
        World { cards, n_classes, p_x, global }
    }

    pub fn n_features(&self) -> usize {
        self.cards.len()
    }

    fn decode(&self, mut index: usize) -> Vec<usize> {
        self.cards
            .iter()
            .map(|&c| {
                let v = index % c;
                index /= c;
                v
            })
            .collect()
    }

    fn configurations(&self) -> Vec<Vec<usize>> {
        (0..self.p_x.len()).map(|k| self.decode(k)).collect()
    }

    /// Sub-model prediction as the renormalized global expectation
    /// `Σ_x p(x | x_S) p(ŷ|x)` over configurations consistent with `fixed`.
    pub fn sub_prediction(&self, fixed: &[(usize, usize)]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        let mut mass = 0.0;
        for (k, x) in self.configurations().iter().enumerate() {
            if fixed.iter().all(|&(j, v)| x[j] == v) {
                mass += self.p_x[k];
                for (a, g) in acc.iter_mut().zip(&self.global[k]) {
                    *a += self.p_x[k] * g;
                }
            }
        }
        acc.into_iter().map(|a| a / mass).collect()
    }
}

/// Counts from the exhaustive comparison over one or more worlds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub states: usize,
    pub matched: usize,
    /// Largest gap between the direct and closed-form difference identity.
    pub max_identity_deviation: f64,
    /// Largest `|E[Δu] + CMI|` over states and candidates.
    pub max_expectation_deviation: f64,
}

impl AgreementCounts {
    fn merge(&mut self, other: &AgreementCounts) {
        self.states += other.states;
        self.matched += other.matched;
        self.max_identity_deviation = self.max_identity_deviation.max(other.max_identity_deviation);
        self.max_expectation_deviation = self.max_expectation_deviation.max(other.max_expectation_deviation);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub seed: u64,
    pub consistent: AgreementCounts,
    /// Worlds whose sub-models ignore the global model; mismatches are expected.
    pub control: AgreementCounts,
    /// First world that failed, for reproduction.
    pub failing_world: Option<World>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.consistent.matched == self.consistent.states
            && self.consistent.max_identity_deviation < CMI_TOLERANCE
            && self.consistent.max_expectation_deviation < CMI_TOLERANCE
            && self.failing_world.is_none()
    }
}

/// Whether `argmax cmi` and `argmin expected_u` agree up to ties.
fn choices_agree(cmi_values: &[f64], expected_u: &[f64]) -> bool {
    let by_cmi = (0..cmi_values.len())
        .max_by(|&a, &b| cmi_values[a].total_cmp(&cmi_values[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let by_u = (0..expected_u.len())
        .min_by(|&a, &b| expected_u[a].total_cmp(&expected_u[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    by_cmi == by_u
        || ((cmi_values[by_cmi] - cmi_values[by_u]).abs() < TIE_TOLERANCE
            && (expected_u[by_cmi] - expected_u[by_u]).abs() < TIE_TOLERANCE)
}

/// Visits every state `(S, x_S)` with `|S| < M`, by subset size. With
/// `sub_model = None` the sub-models are the world's consistent expectations;
/// otherwise `sub_model(S ∪ {i}, assignment)` supplies them.
fn compare_world(
    world: &World,
    sub_model: Option<&dyn Fn(&[(usize, usize)]) -> Vec<f64>>,
) -> Result<AgreementCounts, InfoError> {
    let m = world.n_features();
    let configs = world.configurations();
    let mut subsets: Vec<u32> = (0..1u32 << m).filter(|s| s.count_ones() < m as u32).collect();
    subsets.sort_by_key(|s| (s.count_ones(), *s));
    let mut counts = AgreementCounts::default();
    for subset in subsets {
        let members: Vec<usize> = (0..m).filter(|j| subset & (1 << j) != 0).collect();
        let candidates: Vec<usize> = (0..m).filter(|j| subset & (1 << j) == 0).collect();
        let n_assign: usize = members.iter().map(|&j| world.cards[j]).product();
        for a in 0..n_assign {
            let mut rest = a;
            let fixed: Vec<(usize, usize)> = members
                .iter()
                .map(|&j| {
                    let v = rest % world.cards[j];
                    rest /= world.cards[j];
                    (j, v)
                })
                .collect();
            let consistent: Vec<usize> = (0..configs.len())
                .filter(|&k| fixed.iter().all(|&(j, v)| configs[k][j] == v))
                .collect();
            let mass: f64 = consistent.iter().map(|&k| world.p_x[k]).sum();
            let sub_s = world.sub_prediction(&fixed);
            let mut cmi_values = Vec::with_capacity(candidates.len());
            let mut expected_u = Vec::with_capacity(candidates.len());
            for &i in &candidates {
                let card = world.cards[i];
                let nc = world.n_classes;
                let mut joint = vec![0.0; card * nc];
                for &k in &consistent {
                    let w = world.p_x[k] / mass;
                    for (y, g) in world.global[k].iter().enumerate() {
                        joint[configs[k][i] * nc + y] += w * g;
                    }
                }
                let jt = JointTable::new(1, card, nc, joint)?;
                let info = cmi(&jt)?;
                let sub_si: Vec<Vec<f64>> = (0..card)
                    .map(|v| {
                        let mut f = fixed.clone();
                        f.push((i, v));
                        match sub_model {
                            Some(model) => model(&f),
                            None => world.sub_prediction(&f),
                        }
                    })
                    .collect();
                let mut eu = 0.0;
                let mut edelta = 0.0;
                for &k in &consistent {
                    let w = world.p_x[k] / mass;
                    let g = &world.global[k];
                    let si = &sub_si[configs[k][i]];
                    eu += w * kl_exact(g, si);
                    let direct = expected_kl_direct(g, &sub_s, si);
                    edelta += w * direct;
                    if sub_model.is_none() {
                        let dev = (direct - expected_kl_closed_form(g, &sub_s, si)).abs();
                        counts.max_identity_deviation = counts.max_identity_deviation.max(dev);
                    }
                }
                if sub_model.is_none() {
                    counts.max_expectation_deviation = counts.max_expectation_deviation.max((edelta + info).abs());
                }
                cmi_values.push(info);
                expected_u.push(eu);
            }
            counts.states += 1;
            if choices_agree(&cmi_values, &expected_u) {
                counts.matched += 1;
            }
        }
    }
    Ok(counts)
}

/// Builds `trials` random worlds with up to `max_features` features (seeded
/// per trial) and checks CMI-greedy against expected-u-greedy selection at
/// every reachable state, plus a control world per trial whose sub-models are
/// independent random distributions.
pub fn verify_cmi_equivalence(trials: usize, seed: u64, max_features: usize) -> EquivalenceReport {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| master.gen()).collect();
    let max_features = max_features.clamp(1, 4);
    let results: Vec<(World, Result<AgreementCounts, InfoError>, AgreementCounts)> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let m = rng.gen_range(1..=max_features);
            let world = World::random(&mut rng, m);
            let consistent = compare_world(&world, None);
            let control_seed: u64 = rng.gen();
            let random_sub = move |fixed: &[(usize, usize)]| {
                let mut key = control_seed;
                for &(j, v) in fixed {
                    key = key.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((j * 7 + v + 1) as u64);
                }
                random_simplex(&mut ChaCha8Rng::seed_from_u64(key), world.n_classes)
            };
            let control = compare_world(&world, Some(&random_sub)).unwrap_or_default();
            (world, consistent, control)
        })
        .collect();

    let mut report = EquivalenceReport {
        trials,
        seed,
        consistent: AgreementCounts::default(),
        control: AgreementCounts::default(),
        failing_world: None,
    };
    for (world, consistent, control) in results {
        report.control.merge(&control);
        match consistent {
            Ok(c) => {
                let bad = c.matched != c.states
                    || c.max_identity_deviation >= CMI_TOLERANCE
                    || c.max_expectation_deviation >= CMI_TOLERANCE;
                report.consistent.merge(&c);
                if bad && report.failing_world.is_none() {
                    report.failing_world = Some(world);
                }
            }
            Err(_) => {
                if report.failing_world.is_none() {
                    report.failing_world = Some(world);
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fit_discretization;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
        let hand = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((entropy(&[0.25, 0.75]) - hand).abs() < 1e-15);
        assert!((hand - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn xor_table() {
        // s, x uniform bits; y = s XOR x.
        let mut p = vec![0.0; 8];
        for s in 0..2 {
            for x in 0..2 {
                p[(s * 2 + x) * 2 + (s ^ x)] = 0.25;
            }
        }
        let conditional = JointTable::new(2, 2, 2, p.clone()).unwrap();
        assert!((cmi(&conditional).unwrap() - 2f64.ln()).abs() < 1e-12);
        // Marginalizing s leaves x independent of y.
        let mut q = vec![0.0; 4];
        for s in 0..2 {
            for k in 0..4 {
                q[k] += p[s * 4 + k];
            }
        }
        let marginal = JointTable::new(1, 2, 2, q).unwrap();
        assert!(cmi(&marginal).unwrap().abs() < 1e-12);
    }

    #[test]
    fn independence_and_copy() {
        let indep = JointTable::new(1, 2, 2, vec![0.12, 0.28, 0.18, 0.42]).unwrap();
        assert!(cmi(&indep).unwrap().abs() < 1e-12);
        let copy = JointTable::new(1, 2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((cmi(&copy).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    fn ds(samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
        Dataset::new(
            (0..samples[0].len()).map(|j| format!("f{j}")).collect(),
            samples,
            labels,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn ranking_puts_copied_label_first() {
        let labels: Vec<usize> = (0..40).map(|i| (i * 7 % 5) % 2).collect();
        let samples: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![f64::from(i % 3), f64::from(i % 4), f64::from(i % 5), labels[i as usize] as f64])
            .collect();
        let d = ds(samples, labels);
        let scheme = fit_discretization(&d, 5).unwrap();
        assert_eq!(static_mi_ranking(&d, &scheme)[0].0, 3);
    }

    #[test]
    fn ranking_matches_brute_force_and_ties_by_index() {
        // f0 noisy copy, f1 weaker, f2 constant.
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let samples: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let y = (i % 2) as f64;
                let f0 = if i % 10 == 0 { 1.0 - y } else { y };
                let f1 = if i % 3 == 0 { 1.0 - y } else { y };
                vec![f0, f1, 0.0, 0.0]
            })
            .collect();
        let d = ds(samples, labels);
        let scheme = fit_discretization(&d, 2).unwrap();
        let brute = |j: usize| {
            let n = d.n_samples() as f64;
            let mut mi = 0.0;
            for xv in [0.0, 1.0] {
                for y in 0..2 {
                    let pxy = d.samples.iter().zip(&d.labels).filter(|(x, l)| x[j] == xv && **l == y).count() as f64 / n;
                    let px = d.samples.iter().filter(|x| x[j] == xv).count() as f64 / n;
                    let py = d.labels.iter().filter(|l| **l == y).count() as f64 / n;
                    if pxy > 0.0 {
                        mi += pxy * (pxy / (px * py)).ln();
                    }
                }
            }
            mi
        };
        let ranking = static_mi_ranking(&d, &scheme);
        assert_eq!(ranking.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        for &(j, v) in &ranking {
            assert!((v - brute(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_feature_world_is_trivially_matched() {
        let report = verify_cmi_equivalence(1, 0, 1);
        assert_eq!(report.consistent.states, 1);
        assert!(report.passed());
    }

    #[test]
    fn constructed_worlds_agree_and_control_is_reported() {
        let report = verify_cmi_equivalence(25, 7, 4);
        assert!(report.passed(), "{report:?}");
        assert!(report.consistent.states > 25);
        assert!(report.control.states > 0);
        assert!(report.control.matched <= report.control.states);
    }

    #[test]
    fn control_world_can_disagree() {
        let report = verify_cmi_equivalence(200, 3, 4);
        assert!(report.control.matched < report.control.states);
    }

    #[test]
    fn kl_decomposition_and_cmi_checks() {
        assert!(kl_decomposition_check(500, 1) < 1e-12);
        let r = cmi_self_check(200, 2);
        assert!(r.passed(), "{r:?}");
    }

    proptest! {
        #[test]
        fn cmi_nonnegative_and_forms_agree(cells in prop::collection::vec(0.0f64..1.0, 12)) {
            prop_assume!(cells.iter().sum::<f64>() > 1e-6);
            let jt = JointTable::from_counts(2, 3, 2, &cells).unwrap();
            let v = cmi(&jt).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!((jt.cmi_kl_form() - jt.cmi_entropy_form()).abs() < 1e-9);
        }

        #[test]
        fn product_tables_have_zero_cmi(px in prop::collection::vec(0.01f64..1.0, 3), py in prop::collection::vec(0.01f64..1.0, 2)) {
            let (sx, sy): (f64, f64) = (px.iter().sum(), py.iter().sum());
            let p: Vec<f64> = px.iter().flat_map(|a| py.iter().map(move |b| a / sx * b / sy)).collect();
            let jt = JointTable::new(1, 3, 2, p).unwrap();
            prop_assert!(cmi(&jt).unwrap() < 1e-12);
        }
    }
}
