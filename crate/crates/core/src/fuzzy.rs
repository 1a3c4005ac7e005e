//! Quantile-anchored linguistic partitions and a genetic algorithm that
//! selects compact fuzzy rule sets by Matthews correlation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{nearest_rank, stratified_split, DataError, Dataset};
use crate::rules::{
    argmax, rule_support_confidence, Condition, Logic, MembershipFunction, Predicate,
    PredictionDistribution, Rule, RuleBase, Structure,
};

pub const TERM_NAMES: [&str; 3] = ["Low", "Medium", "High"];

/// Linguistic terms of one feature over its training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePartition {
    pub lo: f64,
    pub hi: f64,
    pub terms: Vec<MembershipFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyPartition {
    pub features: Vec<FeaturePartition>,
}

impl FuzzyPartition {
    /// Low / Medium / High per feature, anchored at the 0/25/50/75/100th
    /// percentiles. Low and High are shoulders so the whole range is covered.
    pub fn from_quantiles(ds: &Dataset) -> Self {
        let features = (0..ds.n_features())
            .map(|j| {
                let mut col = ds.column(j);
                col.sort_by(f64::total_cmp);
                let q = |p: f64| nearest_rank(&col, p);
                let (p0, p25, p50, p75, p100) = (q(0.0), q(0.25), q(0.5), q(0.75), q(1.0));
                FeaturePartition {
                    lo: p0,
                    hi: p100,
                    terms: vec![
                        MembershipFunction::trapezoidal(TERM_NAMES[0], p0, p0, p25, p50),
                        MembershipFunction::triangular(TERM_NAMES[1], p25, p50, p75),
                        MembershipFunction::trapezoidal(TERM_NAMES[2], p50, p75, p100, p100),
                    ],
                }
            })
            .collect();
        FuzzyPartition { features }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn terms(&self, feature: usize) -> &[MembershipFunction] {
        self.features.get(feature).map_or(&[], |f| f.terms.as_slice())
    }

    /// Membership of `value` (clamped to the feature's training range) in a term.
    pub fn membership(&self, feature: usize, term: usize, value: f64) -> f64 {
        let Some(fp) = self.features.get(feature) else {
            return 0.0;
        };
        fp.terms
            .get(term)
            .map_or(0.0, |mf| mf.eval(value.clamp(fp.lo, fp.hi)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub max_rules: usize,
    pub max_conditions_per_rule: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 30,
            generations: 50,
            max_rules: 15,
            max_conditions_per_rule: 3,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.population_size == 0 || self.max_rules == 0 || self.max_conditions_per_rule == 0 {
            return Err(DataError::Invalid(
                "population_size, max_rules and max_conditions_per_rule must be positive".into(),
            ));
        }
        for (name, rate) in [("mutation_rate", self.mutation_rate), ("crossover_rate", self.crossover_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(DataError::Invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Result of fitting a fuzzy rule base.
#[derive(Debug, Clone)]
pub struct FuzzyFit {
    pub rule_base: RuleBase,
    /// Best fitness (validation MCC) after each generation, starting with the initial population.
    pub fitness_history: Vec<f64>,
    /// Set when some training sample fired no rule and a prior default rule was appended.
    pub default_appended: bool,
}

/// A genome is a list of antecedents; each antecedent lists (feature, term) pairs.
type Antecedent = Vec<(usize, usize)>;
type Genome = Vec<Antecedent>;

/// Per-sample membership table `mu[sample][feature][term]`.
struct Memberships {
    mu: Vec<Vec<Vec<f64>>>,
    labels: Vec<usize>,
}

impl Memberships {
    fn new(ds: &Dataset, rows: &[usize], partition: &FuzzyPartition) -> Self {
        let mu = rows
            .iter()
            .map(|&r| {
                (0..ds.n_features())
                    .map(|j| {
                        (0..partition.terms(j).len())
                            .map(|t| partition.membership(j, t, ds.samples[r][j]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Memberships {
            mu,
            labels: rows.iter().map(|&r| ds.labels[r]).collect(),
        }
    }

    fn degree(&self, sample: usize, ant: &Antecedent) -> f64 {
        ant.iter().map(|&(j, t)| self.mu[sample][j][t]).product()
    }
}

/// Rule confidences estimated on `fold`; zero-support rules fall back to `prior`.
fn consequents(genome: &Genome, fold: &Memberships, n_classes: usize, prior: &[f64]) -> Vec<Vec<f64>> {
    genome
        .iter()
        .map(|ant| {
            let mut mass = vec![0.0; n_classes];
            for (s, &y) in fold.labels.iter().enumerate() {
                mass[y] += fold.degree(s, ant);
            }
            if mass.iter().sum::<f64>() > 0.0 {
                mass
            } else {
                prior.to_vec()
            }
        })
        .collect()
}

/// Winner-takes-all predictions; a sample firing nothing gets the extra label `n_classes`.
fn predict_fold(genome: &Genome, conf: &[Vec<f64>], fold: &Memberships, n_classes: usize) -> Vec<usize> {
    (0..fold.labels.len())
        .map(|s| {
            let mut best: Option<(usize, f64)> = None;
            for (r, ant) in genome.iter().enumerate() {
                let d = fold.degree(s, ant);
                if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((r, d));
                }
            }
            best.map_or(n_classes, |(r, _)| argmax(&conf[r]))
        })
        .collect()
}

/// Ordering key: higher MCC first, then fewer rules, then fewer conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Fitness {
    mcc: f64,
    rules: usize,
    conditions: usize,
}

impl Fitness {
    fn better_than(&self, other: &Fitness) -> bool {
        if self.mcc != other.mcc {
            return self.mcc > other.mcc;
        }
        (self.rules, self.conditions) < (other.rules, other.conditions)
    }
}

struct Problem<'a> {
    train: Memberships,
    valid: Memberships,
    n_features: usize,
    n_terms: Vec<usize>,
    n_classes: usize,
    prior: Vec<f64>,
    cfg: &'a GaConfig,
}

impl Problem<'_> {
    fn fitness(&self, genome: &Genome) -> Fitness {
        let conf = consequents(genome, &self.train, self.n_classes, &self.prior);
        let pred = predict_fold(genome, &conf, &self.valid, self.n_classes);
        Fitness {
            mcc: mcc(&pred, &self.valid.labels),
            rules: genome.len(),
            conditions: genome.iter().map(Vec::len).sum(),
        }
    }

    fn random_literal(&self, rng: &mut ChaCha8Rng, exclude: &Antecedent) -> Option<(usize, usize)> {
        let free: Vec<usize> = (0..self.n_features)
            .filter(|j| self.n_terms[*j] > 0 && !exclude.iter().any(|&(f, _)| f == *j))
            .collect();
        let &j = free.choose(rng)?;
        Some((j, rng.gen_range(0..self.n_terms[j])))
    }

    fn random_antecedent(&self, rng: &mut ChaCha8Rng) -> Antecedent {
        let len = rng.gen_range(1..=self.cfg.max_conditions_per_rule);
        let mut ant = Vec::with_capacity(len);
        for _ in 0..len {
            if let Some(lit) = self.random_literal(rng, &ant) {
                ant.push(lit);
            }
        }
        ant
    }

    fn random_genome(&self, rng: &mut ChaCha8Rng) -> Genome {
        let n = rng.gen_range(1..=self.cfg.max_rules);
        (0..n).map(|_| self.random_antecedent(rng)).collect()
    }

    /// Enforces one condition per feature, the size limits, sorted literals,
    /// no duplicate or empty antecedents and at least one rule.
    fn repair(&self, genome: &mut Genome, rng: &mut ChaCha8Rng) {
        for ant in genome.iter_mut() {
            let mut seen = vec![false; self.n_features];
            ant.retain(|&(j, _)| !std::mem::replace(&mut seen[j], true));
            ant.truncate(self.cfg.max_conditions_per_rule);
            ant.sort_unstable();
        }
        genome.retain(|a| !a.is_empty());
        let mut unique: Genome = Vec::with_capacity(genome.len());
        for ant in genome.drain(..) {
            if !unique.contains(&ant) {
                unique.push(ant);
            }
        }
        *genome = unique;
        genome.truncate(self.cfg.max_rules);
        if genome.is_empty() {
            let ant = self.random_antecedent(rng);
            if !ant.is_empty() {
                genome.push(ant);
            }
        }
    }

    fn crossover(&self, a: &Genome, b: &Genome, rng: &mut ChaCha8Rng) -> Genome {
        let cut_a = rng.gen_range(0..=a.len());
        let cut_b = rng.gen_range(0..=b.len());
        a[..cut_a].iter().chain(&b[cut_b..]).cloned().collect()
    }

    fn mutate(&self, genome: &mut Genome, rng: &mut ChaCha8Rng) {
        let rate = self.cfg.mutation_rate;
        for ant in genome.iter_mut() {
            if !rng.gen_bool(rate) {
                continue;
            }
            match rng.gen_range(0..4) {
                0 if !ant.is_empty() => {
                    let k = rng.gen_range(0..ant.len());
                    let j = ant[k].0;
                    ant[k].1 = rng.gen_range(0..self.n_terms[j]);
                }
                1 if ant.len() < self.cfg.max_conditions_per_rule => {
                    if let Some(lit) = self.random_literal(rng, ant) {
                        ant.push(lit);
                    }
                }
                2 if ant.len() > 1 => {
                    let k = rng.gen_range(0..ant.len());
                    ant.remove(k);
                }
                _ => *ant = self.random_antecedent(rng),
            }
        }
        if rng.gen_bool(rate) {
            if genome.len() < self.cfg.max_rules && rng.gen_bool(0.5) {
                genome.push(self.random_antecedent(rng));
            } else if genome.len() > 1 {
                let k = rng.gen_range(0..genome.len());
                genome.remove(k);
            }
        }
    }

    fn tournament<'g>(&self, pop: &'g [Genome], fit: &[Fitness], rng: &mut ChaCha8Rng) -> &'g Genome {
        let mut best = rng.gen_range(0..pop.len());
        for _ in 1..3 {
            let c = rng.gen_range(0..pop.len());
            if fit[c].better_than(&fit[best]) {
                best = c;
            }
        }
        &pop[best]
    }
}

fn best_index(fit: &[Fitness]) -> usize {
    let mut best = 0;
    for i in 1..fit.len() {
        if fit[i].better_than(&fit[best]) {
            best = i;
        }
    }
    best
}

/// Evolves a flat fuzzy rule base. Antecedents are evolved; consequents come
/// from the data. Fitness is MCC on a stratified 25% validation fold.
pub fn fit_fuzzy(ds: &Dataset, partition: &FuzzyPartition, cfg: &GaConfig) -> Result<FuzzyFit, DataError> {
    cfg.validate()?;
    if partition.n_features() != ds.n_features() {
        return Err(DataError::Invalid(format!(
            "partition covers {} features, dataset has {}",
            partition.n_features(),
            ds.n_features()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<usize> = (0..ds.n_samples()).collect();
    let (ga_train, ga_valid) = if ds.n_samples() >= 4 {
        let split = stratified_split(ds, 0.25, rng.gen());
        if split.test.is_empty() {
            (all.clone(), all.clone())
        } else {
            (split.train, split.test)
        }
    } else {
        (all.clone(), all.clone())
    };
    let prior = ds.class_prior();
    let problem = Problem {
        train: Memberships::new(ds, &ga_train, partition),
        valid: Memberships::new(ds, &ga_valid, partition),
        n_features: ds.n_features(),
        n_terms: (0..ds.n_features()).map(|j| partition.terms(j).len()).collect(),
        n_classes: ds.n_classes(),
        prior: prior.clone(),
        cfg,
    };

    let mut population: Vec<Genome> = (0..cfg.population_size)
        .map(|_| {
            let mut g = problem.random_genome(&mut rng);
            problem.repair(&mut g, &mut rng);
            g
        })
        .collect();
    let mut fitness: Vec<Fitness> = population.par_iter().map(|g| problem.fitness(g)).collect();
    let mut history = vec![fitness[best_index(&fitness)].mcc];

    for _ in 0..cfg.generations {
        let elite = population[best_index(&fitness)].clone();
        let mut next = vec![elite];
        while next.len() < cfg.population_size {
            let a = problem.tournament(&population, &fitness, &mut rng);
            let b = problem.tournament(&population, &fitness, &mut rng);
            let mut child = if rng.gen_bool(cfg.crossover_rate) {
                problem.crossover(a, b, &mut rng)
            } else {
                a.clone()
            };
            problem.mutate(&mut child, &mut rng);
            problem.repair(&mut child, &mut rng);
            next.push(child);
        }
        population = next;
        fitness = population.par_iter().map(|g| problem.fitness(g)).collect();
        history.push(fitness[best_index(&fitness)].mcc);
    }

    let best = &population[best_index(&fitness)];
    Ok(assemble(ds, partition, best, prior, history))
}

/// Builds the rule base with supports and confidences measured on all of `ds`.
fn assemble(ds: &Dataset, partition: &FuzzyPartition, genome: &Genome, prior: Vec<f64>, history: Vec<f64>) -> FuzzyFit {
    let prior = PredictionDistribution::from_weights(&prior);
    let mut rb = RuleBase {
        rules: Vec::new(),
        logic: Logic::Fuzzy,
        structure: Structure::Flat,
        partition: Some(partition.clone()),
        default_rule: None,
        prior: prior.clone(),
        feature_names: ds.feature_names.clone(),
        class_names: ds.class_names.clone(),
    };
    for ant in genome {
        let antecedent = ant
            .iter()
            .map(|&(feature, term)| Condition::new(feature, Predicate::Is { term }))
            .collect();
        let mut rule = Rule::new(antecedent, prior.clone(), 0.0);
        let sc = rule_support_confidence(&rb, &rule, ds);
        rule = Rule::new(rule.antecedent, sc.confidence, sc.support);
        rb.rules.push(rule);
    }
    let silent = ds
        .samples
        .iter()
        .filter(|x| {
            let obs = crate::data::PartialObservation::full(x);
            rb.rules.iter().all(|r| rb.truth_degree(r, &obs) == 0.0)
        })
        .count();
    let default_appended = silent > 0;
    if default_appended {
        rb.default_rule = Some(Rule::new(Vec::new(), prior, silent as f64 / ds.n_samples() as f64));
    }
    FuzzyFit {
        rule_base: rb,
        fitness_history: history,
        default_appended,
    }
}

/// Multiclass Matthews correlation (confusion-matrix generalization).
/// Predicted labels outside the true label range count as their own column.
pub fn mcc(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "mcc: length mismatch");
    let k = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut t = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut correct = 0.0;
    for (&yp, &y) in predictions.iter().zip(labels) {
        t[y] += 1.0;
        p[yp] += 1.0;
        if yp == y {
            correct += 1.0;
        }
    }
    let s = labels.len() as f64;
    let dot: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (correct * s - dot) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(values: &[f64], labels: &[usize]) -> Dataset {
        Dataset::new(
            vec!["x".into()],
            values.iter().map(|v| vec![*v]).collect(),
            labels.to_vec(),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn mcc_examples() {
        assert_eq!(mcc(&[0, 1, 2, 1], &[0, 1, 2, 1]), 1.0);
        assert_eq!(mcc(&[1, 1, 1, 1], &[0, 1, 0, 1]), 0.0);
        // TP=4, TN=3, FP=1, FN=2 with class 1 as positive.
        let labels = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let preds = [1, 1, 1, 1, 0, 0, 0, 0, 0, 1];
        let expected = (4.0 * 3.0 - 1.0 * 2.0) / (5.0f64 * 6.0 * 5.0 * 4.0).sqrt();
        assert!((mcc(&preds, &labels) - expected).abs() < 1e-12);
        assert!((expected - 0.408).abs() < 1e-3);
        assert!((mcc(&[1, 0, 1, 0], &[0, 1, 0, 1]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_covers_range_with_shoulders() {
        let ds = toy(&(0..=100).map(f64::from).collect::<Vec<_>>(), &[0; 101]);
        let p = FuzzyPartition::from_quantiles(&ds);
        let fp = &p.features[0];
        assert_eq!((fp.lo, fp.hi), (0.0, 100.0));
        assert_eq!(fp.terms.len(), 3);
        for x in [-5.0, 0.0, 10.0, 33.0, 50.0, 77.0, 100.0, 140.0] {
            let total: f64 = (0..3).map(|t| p.membership(0, t, x)).sum();
            assert!(total > 0.0, "x = {x} uncovered");
        }
        assert_eq!(p.membership(0, 0, -5.0), 1.0);
        assert_eq!(p.membership(0, 2, 140.0), 1.0);
        assert_eq!(p.membership(0, 1, 50.0), 1.0);
        assert_eq!(p.terms(0)[1].name, "Medium");
    }

    #[test]
    fn separable_toy_finds_two_single_condition_rules() {
        let ds = toy(
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            &[0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
        );
        let partition = FuzzyPartition::from_quantiles(&ds);
        let cfg = GaConfig { seed: 3, ..GaConfig::default() };
        let fit = fit_fuzzy(&ds, &partition, &cfg).unwrap();
        let rb = &fit.rule_base;
        assert_eq!(rb.rules.len(), 2);
        assert!(rb.rules.iter().all(|r| r.len() == 1));

        // Exhaustive oracle over sets of single-condition rules.
        let mu = Memberships::new(&ds, &(0..ds.n_samples()).collect::<Vec<_>>(), &partition);
        let prior = ds.class_prior();
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for mask in 1u32..8 {
            let genome: Genome = (0..3).filter(|t| mask & (1 << t) != 0).map(|t| vec![(0, t)]).collect();
            let conf = consequents(&genome, &mu, 2, &prior);
            let m = mcc(&predict_fold(&genome, &conf, &mu, 2), &mu.labels);
            if m > best.0 || (m == best.0 && genome.len() < best.1) {
                best = (m, genome.len());
            }
        }
        assert_eq!(best, (1.0, 2));
        let preds: Vec<usize> = ds
            .samples
            .iter()
            .map(|x| rb.predict(&crate::data::PartialObservation::full(x)).argmax())
            .collect();
        assert_eq!(mcc(&preds, &ds.labels), 1.0);
    }

    #[test]
    fn no_evolution_returns_repaired_initial_individual() {
        let ds = toy(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[0, 0, 0, 1, 1, 1]);
        let partition = FuzzyPartition::from_quantiles(&ds);
        let cfg = GaConfig {
            population_size: 1,
            generations: 0,
            seed: 11,
            ..GaConfig::default()
        };
        let fit = fit_fuzzy(&ds, &partition, &cfg).unwrap();
        assert_eq!(fit.fitness_history.len(), 1);
        assert!(!fit.rule_base.rules.is_empty());
        fit.rule_base.validate().unwrap();
    }

    #[test]
    fn fitness_history_is_monotone_and_seeded() {
        let values: Vec<f64> = (0..40).map(|i| f64::from(i % 17) + f64::from(i) * 0.1).collect();
        let labels: Vec<usize> = values.iter().map(|v| usize::from(*v > 8.0)).collect();
        let ds = toy(&values, &labels);
        let partition = FuzzyPartition::from_quantiles(&ds);
        let cfg = GaConfig { generations: 15, seed: 5, ..GaConfig::default() };
        let a = fit_fuzzy(&ds, &partition, &cfg).unwrap();
        let b = fit_fuzzy(&ds, &partition, &cfg).unwrap();
        assert!(a.fitness_history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(a.rule_base, b.rule_base);
        assert_eq!(a.fitness_history, b.fitness_history);
    }

    #[test]
    fn default_rule_appended_when_something_never_fires() {
        let ds = toy(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[0, 0, 0, 1, 1, 1]);
        let partition = FuzzyPartition::from_quantiles(&ds);
        // High is zero at x = 0, so the 0-samples fire nothing.
        let fit = assemble(&ds, &partition, &vec![vec![(0, 2)]], ds.class_prior(), vec![]);
        assert!(fit.default_appended);
        let default = fit.rule_base.default_rule.as_ref().unwrap();
        assert!(default.antecedent.is_empty());
        assert_eq!(default.support, 0.5);
    }

    #[test]
    fn rejects_invalid_config() {
        let ds = toy(&[0.0, 1.0], &[0, 1]);
        let p = FuzzyPartition::from_quantiles(&ds);
        let cfg = GaConfig { mutation_rate: 1.5, ..GaConfig::default() };
        assert!(fit_fuzzy(&ds, &p, &cfg).is_err());
    }
}
