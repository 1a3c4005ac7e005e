//! CART with Gini impurity, flattening into tree-partitioned rule bases, and
//! bootstrap ensembles evaluated under mean imputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{imputation_values, DataError, Dataset, PartialObservation};
use crate::rules::{
    Condition, Logic, Predicate, PredictionDistribution, Rule, RuleBase, Structure,
};

/// How auxiliary members draw their training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Bootstrap,
    /// Every member sees the original rows; members equal the primary.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub bootstrap_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            max_depth: 8,
            min_samples_leaf: 5,
            bootstrap_count: 10,
            seed: 0,
            resampling: Resampling::Bootstrap,
        }
    }
}

impl CartConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.max_depth < 1 || self.min_samples_leaf < 1 || self.bootstrap_count < 2 {
            return Err(DataError::Invalid(
                "cart config needs max_depth >= 1, min_samples_leaf >= 1, bootstrap_count >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { counts: Vec<f64> },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_train: usize,
}

impl Tree {
    /// Class counts of the leaf reached by `x`.
    pub fn leaf_counts(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> PredictionDistribution {
        PredictionDistribution::from_weights(self.leaf_counts(x))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn gini(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

struct Builder<'a> {
    ds: &'a Dataset,
    cfg: &'a CartConfig,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.ds.n_classes()];
        for &r in rows {
            c[self.ds.labels[r]] += 1.0;
        }
        c
    }

    /// Lowest weighted Gini over midpoints of sorted unique values; ties keep
    /// the lower feature index, then the lower threshold.
    fn best_split(&self, rows: &[usize], parent: &[f64]) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for j in 0..self.ds.n_features() {
            let value = |r: usize| self.ds.samples[r][j];
            sorted.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
            let mut left = vec![0.0; parent.len()];
            for k in 0..sorted.len() - 1 {
                left[self.ds.labels[sorted[k]]] += 1.0;
                let (v, next) = (value(sorted[k]), value(sorted[k + 1]));
                let n_left = k + 1;
                if v == next || n_left < min_leaf || rows.len() - n_left < min_leaf {
                    continue;
                }
                let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let nl = n_left as f64;
                let nr = n - nl;
                let impurity = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n;
                if best.as_ref().is_none_or(|b| impurity < b.impurity - 1e-12) {
                    let mid = 0.5 * (v + next);
                    let threshold = if mid < next { mid } else { v };
                    best = Some(BestSplit { feature: j, threshold, impurity });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let parent_impurity = gini(&counts, rows.len() as f64);
        if depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_samples_leaf || parent_impurity == 0.0 {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        if split.impurity >= parent_impurity - 1e-12 {
            return id;
        }
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.ds.samples[r][split.feature] <= split.threshold);
        let left = self.grow(l_rows, depth + 1);
        let right = self.grow(r_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a Gini tree on the given rows (duplicates allowed).
pub fn fit_tree(ds: &Dataset, rows: &[usize], cfg: &CartConfig) -> Tree {
    let mut b = Builder { ds, cfg, nodes: Vec::new() };
    b.grow(rows.to_vec(), 0);
    Tree { nodes: b.nodes, n_train: rows.len() }
}

/// One rule per leaf, left-first. Conditions on the same feature merge into
/// one predicate and antecedents are sorted by feature index.
pub fn flatten(tree: &Tree, ds: &Dataset, prior: PredictionDistribution) -> RuleBase {
    let mut rules = Vec::new();
    let mut stack: Vec<(usize, Vec<(usize, bool, f64)>)> = vec![(0, Vec::new())];
    while let Some((id, path)) = stack.pop() {
        match &tree.nodes[id] {
            Node::Leaf { counts } => {
                let n: f64 = counts.iter().sum();
                rules.push(Rule::new(
                    merge_path(&path),
                    PredictionDistribution::from_weights(counts),
                    n / tree.n_train.max(1) as f64,
                ));
            }
            Node::Split { feature, threshold, left, right } => {
                let mut r = path.clone();
                r.push((*feature, false, *threshold));
                stack.push((*right, r));
                let mut l = path;
                l.push((*feature, true, *threshold));
                stack.push((*left, l));
            }
        }
    }
    RuleBase {
        rules,
        logic: Logic::Crisp,
        structure: Structure::TreePartitioned,
        partition: None,
        default_rule: None,
        prior,
        feature_names: ds.feature_names.clone(),
        class_names: ds.class_names.clone(),
    }
}

/// Path steps are `(feature, went_left, threshold)`.
fn merge_path(path: &[(usize, bool, f64)]) -> Vec<Condition> {
    let mut features: Vec<usize> = path.iter().map(|p| p.0).collect();
    features.sort_unstable();
    features.dedup();
    features
        .into_iter()
        .map(|j| {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for &(f, went_left, t) in path {
                if f != j {
                    continue;
                }
                if went_left {
                    hi = hi.min(t);
                } else {
                    lo = lo.max(t);
                }
            }
            let predicate = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => Predicate::Interval { lo, hi },
                (false, true) => Predicate::AtMost { threshold: hi },
                _ => Predicate::Above { threshold: lo },
            };
            Condition::new(j, predicate)
        })
        .collect()
}

/// Fits a tree on all of `ds` and flattens it.
pub fn fit_cart(ds: &Dataset, cfg: &CartConfig) -> RuleBase {
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    let tree = fit_tree(ds, &rows, cfg);
    flatten(&tree, ds, PredictionDistribution::from_weights(&ds.class_prior()))
}

/// One fitted tree with its rule-base form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartMember {
    pub tree: Tree,
    pub rules: RuleBase,
}

impl CartMember {
    fn fit(ds: &Dataset, rows: &[usize], cfg: &CartConfig) -> Self {
        let tree = fit_tree(ds, rows, cfg);
        let rules = flatten(&tree, ds, PredictionDistribution::from_weights(&ds.class_prior()));
        CartMember { tree, rules }
    }
}

/// Selects an ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Member {
    Primary,
    Auxiliary(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartEnsemble {
    pub config: CartConfig,
    pub primary: CartMember,
    pub auxiliary: Vec<CartMember>,
    /// Per-member resampling seeds, drawn from the config seed.
    pub member_seeds: Vec<u64>,
    /// Fill values for unobserved features (means; modes for categoricals).
    pub imputation: Vec<f64>,
}

/// Primary tree on all rows plus `bootstrap_count` auxiliary trees on
/// seeded N-row resamples. Members are fitted in parallel; the result does
/// not depend on scheduling.
pub fn fit_ensemble(ds: &Dataset, cfg: &CartConfig) -> Result<CartEnsemble, DataError> {
    cfg.validate()?;
    let n = ds.n_samples();
    let all: Vec<usize> = (0..n).collect();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let member_seeds: Vec<u64> = (0..cfg.bootstrap_count).map(|_| master.gen()).collect();
    let auxiliary = member_seeds
        .par_iter()
        .map(|&s| {
            let rows = match cfg.resampling {
                Resampling::Bootstrap => {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                }
                Resampling::Identity => all.clone(),
            };
            CartMember::fit(ds, &rows, cfg)
        })
        .collect();
    Ok(CartEnsemble {
        config: cfg.clone(),
        primary: CartMember::fit(ds, &all, cfg),
        auxiliary,
        member_seeds,
        imputation: imputation_values(ds),
    })
}

impl CartEnsemble {
    pub fn member(&self, which: Member) -> &CartMember {
        match which {
            Member::Primary => &self.primary,
            Member::Auxiliary(i) => &self.auxiliary[i],
        }
    }

    pub fn impute(&self, obs: &PartialObservation) -> Vec<f64> {
        obs.impute(&self.imputation)
    }

    /// Fills unobserved features with the imputation values and evaluates the
    /// selected member's rule base on the completed sample.
    pub fn predict_imputed(&self, obs: &PartialObservation, which: Member) -> PredictionDistribution {
        let x = self.impute(obs);
        self.member(which).rules.predict(&PartialObservation::full(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
        let m = samples[0].len();
        let c = labels.iter().max().unwrap() + 1;
        Dataset::new(
            (0..m).map(|j| format!("f{j}")).collect(),
            samples,
            labels,
            (0..c.max(2)).map(|k| format!("c{k}")).collect(),
        )
        .unwrap()
    }

    fn small_cfg() -> CartConfig {
        CartConfig { min_samples_leaf: 1, ..CartConfig::default() }
    }

    #[test]
    fn pure_data_gives_single_prior_rule() {
        let d = ds(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1, 1, 1]);
        let rb = fit_cart(&d, &small_cfg());
        assert_eq!(rb.rules.len(), 1);
        assert!(rb.rules[0].antecedent.is_empty());
        assert_eq!(rb.rules[0].confidence, PredictionDistribution::point_mass(2, 1));
        assert_eq!(rb.rules[0].support, 1.0);
    }

    #[test]
    fn threshold_separable_data_gives_complementary_rules() {
        let x = [0.5, 1.0, 2.0, 3.5, 4.0, 6.0];
        let d = ds(x.iter().map(|v| vec![*v]).collect(), vec![0, 0, 0, 1, 1, 1]);
        // Exhaustive oracle: the only zero-impurity cut lies between 2.0 and 3.5.
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..x.len() - 1 {
            let t = 0.5 * (x[k] + x[k + 1]);
            let (l, r): (Vec<usize>, Vec<usize>) = (0..6).partition(|&i| x[i] <= t);
            let g = |rows: &[usize]| {
                let p = rows.iter().filter(|&&i| d.labels[i] == 1).count() as f64 / rows.len() as f64;
                rows.len() as f64 * (1.0 - p * p - (1.0 - p) * (1.0 - p))
            };
            let imp = (g(&l) + g(&r)) / 6.0;
            if imp < best.0 {
                best = (imp, t);
            }
        }
        let rb = fit_cart(&d, &small_cfg());
        assert_eq!(rb.rules.len(), 2);
        assert_eq!(rb.rules[0].antecedent, vec![Condition::new(0, Predicate::AtMost { threshold: best.1 })]);
        assert_eq!(rb.rules[1].antecedent, vec![Condition::new(0, Predicate::Above { threshold: best.1 })]);
        assert_eq!(rb.rules[0].consequent, 0);
        assert_eq!(rb.rules[1].consequent, 1);
    }

    #[test]
    fn equal_gini_ties_prefer_lower_feature() {
        // Both features separate the classes perfectly.
        let d = ds(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![0, 0, 1, 1],
        );
        let tree = fit_tree(&d, &[0, 1, 2, 3], &small_cfg());
        assert!(matches!(tree.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 0.5));
    }

    #[test]
    fn merged_path_becomes_interval() {
        let path = [(2, false, 1.0), (0, true, 5.0), (2, true, 4.0), (2, false, 2.0)];
        assert_eq!(
            merge_path(&path),
            vec![
                Condition::new(0, Predicate::AtMost { threshold: 5.0 }),
                Condition::new(2, Predicate::Interval { lo: 2.0, hi: 4.0 }),
            ]
        );
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let samples: Vec<Vec<f64>> = (0..64).map(|i| vec![f64::from(i), f64::from(i % 7)]).collect();
        let labels: Vec<usize> = (0..64).map(|i| (i / 3) % 2).collect();
        let d = ds(samples, labels);
        let cfg = CartConfig { max_depth: 3, min_samples_leaf: 4, ..CartConfig::default() };
        let tree = fit_tree(&d, &(0..64).collect::<Vec<_>>(), &cfg);
        assert!(tree.n_leaves() <= 8);
        for node in &tree.nodes {
            if let Node::Leaf { counts } = node {
                assert!(counts.iter().sum::<f64>() >= 4.0);
            }
        }
        let rb = flatten(&tree, &d, PredictionDistribution::uniform(2));
        assert!(rb.rules.iter().all(|r| r.len() <= 3));
        rb.validate().unwrap();
    }

    #[test]
    fn ensemble_counts_and_determinism() {
        let samples: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i % 11), f64::from(i % 5)]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 11 > 5)).collect();
        let d = ds(samples, labels);
        let cfg = CartConfig { bootstrap_count: 2, min_samples_leaf: 2, seed: 9, ..CartConfig::default() };
        let a = fit_ensemble(&d, &cfg).unwrap();
        let b = fit_ensemble(&d, &cfg).unwrap();
        assert_eq!(a.auxiliary.len(), 2);
        assert_eq!(a, b);
        let ident = fit_ensemble(&d, &CartConfig { resampling: Resampling::Identity, ..cfg }).unwrap();
        assert!(ident.auxiliary.iter().all(|m| m.rules == ident.primary.rules));
    }

    #[test]
    fn zero_variance_members_identical() {
        let d = ds(vec![vec![2.0, 3.0]; 12], vec![0; 12]);
        let e = fit_ensemble(&d, &CartConfig::default()).unwrap();
        for m in &e.auxiliary {
            assert_eq!(m.rules.rules.len(), 1);
            assert_eq!(m.rules, e.primary.rules);
        }
    }

    #[test]
    fn imputed_prediction_matches_manual_fill_and_traversal() {
        let samples: Vec<Vec<f64>> = (0..30).map(|i| vec![f64::from(i % 10), f64::from((i * 7) % 13)]).collect();
        let labels: Vec<usize> = (0..30).map(|i| usize::from(i % 10 >= 5 && (i * 7) % 13 > 4)).collect();
        let d = ds(samples.clone(), labels);
        let e = fit_ensemble(&d, &CartConfig { min_samples_leaf: 2, ..CartConfig::default() }).unwrap();
        let means = crate::data::training_means(&d);
        for x in &samples {
            let full = PartialObservation::full(x);
            assert_eq!(e.predict_imputed(&full, Member::Primary), e.primary.rules.predict(&full));
            let half = PartialObservation::from_sample(x, &[0]);
            let filled = vec![x[0], means[1]];
            assert_eq!(e.predict_imputed(&half, Member::Primary), e.primary.tree.predict(&filled));
            for (i, m) in e.auxiliary.iter().enumerate() {
                assert_eq!(e.predict_imputed(&half, Member::Auxiliary(i)), m.tree.predict(&filled));
            }
        }
        let none = PartialObservation::empty(2);
        assert_eq!(e.predict_imputed(&none, Member::Primary), e.primary.tree.predict(&means));
    }
}
