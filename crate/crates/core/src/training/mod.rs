//! Desk-scale supervised training and gradient checking.

mod data;
mod gradcheck;
mod loss;
mod optim;
mod schedule;
mod train;

pub use data::{synthetic_separable, Dataset};
pub use gradcheck::{gradcheck, projection_objective, relative_error, GradEntry, GradcheckReport};
pub use loss::cross_entropy;
pub use optim::{sgd_step, OptimState};
pub use schedule::Schedule;
pub use train::{dataset_loss, evaluate, train_loop, train_loop_with, EpochRecord, TrainOptions};
