//! Parameter-update rules and the training loop.

mod em;
mod gradient;
mod schedule;
mod train;

pub use em::{full_batch_em_step, minibatch_em_step_baseline, minibatch_em_step_proposed, momentum_update, MomentumFlows};
pub use gradient::{adam_step, sgd_step, AdamConfig, AdamState};
pub use schedule::cosine_alpha;
pub use train::{metrics_csv, train_loop, MetricsRow, Optimizer, TrainConfig, TrainOutcome, METRICS_HEADER};
