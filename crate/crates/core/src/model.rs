//! The global classifier driving acquisition: a CART ensemble or a fuzzy
//! rule base, behind one interface for sub-model predictions and epistemic
//! uncertainty.

use serde::{Deserialize, Serialize};

use crate::cart::{fit_ensemble, CartConfig, CartEnsemble, Member};
use crate::data::{imputation_values, DataError, Dataset, PartialObservation};
use crate::fuzzy::{fit_fuzzy, FuzzyPartition, GaConfig};
use crate::rules::{PredictionDistribution, Rule, RuleBase, Winner};
use crate::uncertainty::{epistemic_cart, epistemic_fuzzy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyModel {
    pub rule_base: RuleBase,
    /// Fill values used only for the imputed-global reference.
    pub imputation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cart,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalModel {
    Cart(CartEnsemble),
    Fuzzy(FuzzyModel),
}

impl GlobalModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            GlobalModel::Cart(_) => ModelKind::Cart,
            GlobalModel::Fuzzy(_) => ModelKind::Fuzzy,
        }
    }

    /// The rule base whose rules define the active feature set and explanations.
    pub fn rule_base(&self) -> &RuleBase {
        match self {
            GlobalModel::Cart(e) => &e.primary.rules,
            GlobalModel::Fuzzy(f) => &f.rule_base,
        }
    }

    pub fn n_features(&self) -> usize {
        self.rule_base().n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.rule_base().n_classes()
    }

    pub fn imputation(&self) -> &[f64] {
        match self {
            GlobalModel::Cart(e) => &e.imputation,
            GlobalModel::Fuzzy(f) => &f.imputation,
        }
    }

    /// The observation with unobserved entries filled, as the rule base sees it.
    /// CART evaluates the mean-imputed completion; fuzzy rules treat
    /// unobserved conditions as satisfied.
    fn effective(&self, obs: &PartialObservation) -> PartialObservation {
        match self {
            GlobalModel::Cart(e) => PartialObservation::full(&e.impute(obs)),
            GlobalModel::Fuzzy(_) => obs.clone(),
        }
    }

    /// Sub-model prediction `p(ŷ|x_S)`.
    pub fn predict_partial(&self, obs: &PartialObservation) -> PredictionDistribution {
        match self {
            GlobalModel::Cart(e) => e.predict_imputed(obs, Member::Primary),
            GlobalModel::Fuzzy(f) => f.rule_base.predict(obs),
        }
    }

    /// Prediction restricted to the rules for which `allowed` holds.
    pub fn predict_partial_among(
        &self,
        obs: &PartialObservation,
        allowed: impl Fn(usize) -> bool,
    ) -> PredictionDistribution {
        let rb = self.rule_base();
        rb.prediction_for(rb.winner_among(&self.effective(obs), allowed))
    }

    /// Global prediction `p(ŷ|x)` on a complete sample.
    pub fn predict_full(&self, x: &[f64]) -> PredictionDistribution {
        self.predict_partial(&PartialObservation::full(x))
    }

    /// Prediction of the model on the imputed completion of `obs`.
    pub fn imputed_global(&self, obs: &PartialObservation) -> PredictionDistribution {
        self.predict_full(&obs.impute(self.imputation()))
    }

    pub fn epistemic(&self, obs: &PartialObservation) -> f64 {
        match self {
            GlobalModel::Cart(e) => epistemic_cart(e, obs),
            GlobalModel::Fuzzy(f) => epistemic_fuzzy(&f.rule_base, obs),
        }
    }

    pub fn winner(&self, obs: &PartialObservation) -> Winner {
        self.rule_base().winner(&self.effective(obs))
    }

    pub fn winner_rule(&self, obs: &PartialObservation) -> Option<&Rule> {
        self.rule_base().winner_rule(self.winner(obs))
    }
}

/// Everything needed to refit a global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub cart: CartConfig,
    pub ga: GaConfig,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        ModelConfig {
            kind,
            cart: CartConfig { seed, ..CartConfig::default() },
            ga: GaConfig { seed, ..GaConfig::default() },
        }
    }
}

/// Fits the configured model on `ds`.
pub fn fit_model(ds: &Dataset, cfg: &ModelConfig) -> Result<GlobalModel, DataError> {
    match cfg.kind {
        ModelKind::Cart => Ok(GlobalModel::Cart(fit_ensemble(ds, &cfg.cart)?)),
        ModelKind::Fuzzy => {
            let partition = FuzzyPartition::from_quantiles(ds);
            let fit = fit_fuzzy(ds, &partition, &cfg.ga)?;
            Ok(GlobalModel::Fuzzy(FuzzyModel {
                rule_base: fit.rule_base,
                imputation: imputation_values(ds),
            }))
        }
    }
}
