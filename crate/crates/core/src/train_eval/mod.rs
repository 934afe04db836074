//! Splitting, training, evaluation and persistence.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod sampling;
pub mod split;
pub mod stage;

pub use checkpoint::{audit_leakage, load_checkpoint, save_checkpoint, Checkpoint, LeakageReport, Manifest};
pub use config::{ModelKind, TrainConfig};
pub use metrics::{ndcg, ndcg_at, random_ndcg, recall_at_n, summarize, MetricSummary};
pub use model::{train_model, SourceCache, TrainedModel};
pub use pipeline::{train_hcdir, train_source, HcdirModel, SourceStage, TrainOutcome};
pub use report::{evaluate_cold, write_recommendations, Evaluation, MetricsRecord};
pub use run::{evaluate_run, model_label, run_name, train_run};
pub use sampling::negative_sample;
pub use split::{split_dataset, Split, SplitSpec};
