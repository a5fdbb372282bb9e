//! Supervised fitting on `(x, ẋ)` pairs and rollout evaluation.

mod adam;
mod eval;
mod fit;
mod model;

pub use adam::AdamState;
pub use eval::{eval_initial_states, eval_rollout_error, eval_with_field, EvalConfig, EvalSeries, ERROR_CLAMP};
pub use fit::{fit, fit_with, mse_loss, mse_loss_and_grad, train_model, FitOutcome, TrainConfig};
pub use model::{DynamicsModel, ModelKind};
