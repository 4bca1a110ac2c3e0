//! Dataset ingestion, synthetic generation, Non-IID partitioning, and
//! trigger machinery.

mod dataset;
mod idx;
mod partition;
mod synth;
mod trigger;

pub use dataset::{Dataset, UnlabeledData};
pub use idx::{load_idx, write_idx};
pub use partition::{dirichlet_partition, holdout_distillation_set, PartitionPlan};
pub use synth::synth_blobs;
pub use trigger::{
    apply_trigger, build_poisoned_testset, choose_poison_rows, poison_client_data, poison_rows,
    PoisonedTestset, TriggerSpec,
};
