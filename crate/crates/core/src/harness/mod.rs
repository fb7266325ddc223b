//! Training loop, evaluation, significance testing and reporting.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod pca;
pub mod permtest;
pub mod report;
pub mod train;

pub use config::{apply_override, DataConfig, OptimizerConfig, RunConfig, Selection, SourceConfig, SourceType, Task};
pub use metrics::{eval_accuracy, eval_span_f1, eval_token_accuracy, SpanCounts, SpanScores};
pub use pca::{pca_export, Pca};
pub use permtest::{monte_carlo_permutation_test, paired_permutation_test, paired_permutation_test_counts, PermMethod, PermTestResult, DEFAULT_PERMUTATIONS};
pub use train::{
    build_model, checkpoint_meta, evaluate, last_column, load_corpora, load_dataset, load_input, load_sources, predict_pairs, predict_tags, score_nli, score_tagging, train, train_from_config, Corpora, Dataset, EvalResult, MetricReport, Model,
    ModelData, NamedSource, SourceData, Trained, Units,
};
pub use report::{attention_report, export_space, space_points, write_space_csv, AttentionTable, BucketBy, SpacePoint, SpaceRow};
pub use experiments::{
    alignment_experiment, informed_attention_run, informed_task, median, overfit_experiment, AlignmentOutcome,
    AlignmentSetup, InformedOutcome, InformedSetup, InformedTask, OverfitOutcome, OverfitSetup,
};
