//! Task-sequence training, feature statistics and classifier alignment.

mod align;
mod pretrain;
mod run;
mod stats;
mod train;

pub use align::{align_classifier, align_head, generate_features, AlignConfig, AlignLog};
pub use pretrain::{pretrain_backbone, PretrainConfig};
pub use run::{run_sequence, AlignSchedule, LoraConfig, Method, RunConfig, RunOutcome, StageHook, StageLog};
pub use stats::{collect_stats, lambda, mean_and_cov, scale_means, ClassCov, ClassStats, CovVariant, StatsStore};
pub use train::{train_task, HeadView, TrainLog, TrainLoss};
