//! Training loops for the supervised baseline and the six unsupervised
//! domain-adaptation methods.

mod config;
mod data;
mod history;
pub mod losses;
mod tni;
mod train;

pub use config::{Method, TrainRunConfig};
pub use data::{concat_batches, crop_frames, stack_batch, DomainSplits, Featurizer, Sample, TrainData};
pub use history::{EpochRecord, EvalRecord, TrainHistory};
pub use tni::{build_noise_pool, tni_augment};
pub use train::{adapt_bn, evaluate, test_metrics, train, train_from, window_frames, RunMetrics, RunOutput, SplitEval};
