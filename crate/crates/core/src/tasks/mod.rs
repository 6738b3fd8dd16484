//! Datasets, batching and closed-form objectives.

mod batch;
mod data;
mod model;

pub use batch::{make_batches, Batch};
pub use data::{gen_synthetic, load_libsvm, parse_libsvm, Dataset, Labels, SyntheticKind};
pub use model::{objective_eval_grad, ModelKind, ModelObjective, ModelSpec};
