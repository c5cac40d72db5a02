//! Synthetic tasks, toy network, training and A/B comparison.

pub mod compare;
pub mod data;
pub mod metrics;
pub mod net;
pub mod train;

pub use compare::{ab_compare, median, run_seeds, AbSummary, Medians, SeedRow};
pub use data::{gen_keypoint_dataset, gen_mask_dataset, Dataset, SyntheticSample, Task};
pub use metrics::{evaluate, mean_iou, pck};
pub use net::{build_toy_net, ToyNet, ToyNetConfig, Variant};
pub use train::{run_experiment, train, MetricsRecord, Optimizer, RunResult, TrainConfig};
