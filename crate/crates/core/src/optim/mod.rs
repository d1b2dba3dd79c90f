//! Losses and the Adam optimizer shared by all three models.

pub mod adam;
pub mod loss;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use loss::{bce, mae, mse, quantile_loss, LossKind, QuantileSpec};
