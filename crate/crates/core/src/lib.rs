//! Rule-based dynamic feature selection.
//!
//! A global rule-based classifier (a CART ensemble or a GA-tuned fuzzy rule
//! base) is queried one feature at a time. At each step the engine picks the
//! unobserved feature minimizing expected aleatoric plus weighted epistemic
//! uncertainty, restricted to features that can still affect a surviving rule.

pub mod bench;
pub mod bundle;
pub mod cart;
pub mod data;
pub mod engine;
pub mod estimator;
pub mod fuzzy;
pub mod infotheory;
pub mod model;
pub mod rules;
pub mod uncertainty;

pub use bundle::{BundleConfig, ModelBundle};
pub use data::{load_csv, Dataset, PartialObservation};
pub use engine::{select_next, Decision, HaltReason, PolicyConfig, SessionState, Status};
pub use model::{fit_model, GlobalModel, ModelConfig, ModelKind};
pub use rules::{PredictionDistribution, Rule, RuleBase};
