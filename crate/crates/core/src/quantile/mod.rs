//! Feature-conditioned prediction of the `(1 - alpha)` quantile of absolute
//! forecast errors.

mod checkpoint;
mod kernel;
mod net;
mod pinball;
mod train;

pub use checkpoint::{load, save, CHECKPOINT_VERSION, META_FILE, WEIGHTS_FILE};
pub use kernel::{constant_quantile_model, higher_quantile, higher_quantile_sorted};
pub use net::{Dense, Gradients, NetConfig, QuantileNet};
pub use pinball::{pinball_grad, pinball_loss};
pub use train::{train, train_rows, AdamParams, EpochRecord, TrainLog};
