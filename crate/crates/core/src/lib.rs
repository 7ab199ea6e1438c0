//! Partial dependence explanations for tabular models and data-poisoning
//! attacks that reshape them without touching the model.
//!
//! The two attacks share [`attack::AttackConfig`] and return an
//! [`attack::AttackResult`]: [`genetic::genetic_attack`] works with any
//! [`models::Predictor`], [`gradient::gradient_attack`] needs a
//! [`models::Differentiable`] model.

pub mod attack;
pub mod data;
pub mod error;
pub mod genetic;
pub mod gradient;
pub mod harness;
pub mod models;
pub mod optim;
pub mod pd;
pub mod plot;

pub use attack::{attack_loss, distance, AttackConfig, AttackResult, Strategy, TargetKind};
pub use data::{load_csv, ColumnKind, Dataset, LabeledData};
pub use error::{Error, Result};
pub use genetic::{genetic_attack, GeneticParams};
pub use gradient::{gradient_attack, GradientParams};
pub use models::{fit, Differentiable, Model, ModelSpec, Predictor, Task};
pub use pd::{build_grid, partial_dependence, Grid, PdProfile};
