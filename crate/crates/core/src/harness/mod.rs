//! Experiment harness: configs, multi-seed strategy comparisons, pool-size
//! ablations and their reports.

mod config;
mod experiment;
mod report;

pub use config::{
    ExperimentConfig, ModelOverrides, PretrainOverrides, Regime, Sampling, ScheduleOverrides, TaskConfig, TemplateFile,
};
pub use experiment::{
    emit_comparison, prepare, run_arm, run_comparison, run_pool_ablation, seed_context, task_pool, worker_count,
    ArmOutcome, Comparison, Prepared, PreparedTask, SeedContext, SeedTask, THREADS_ENV,
};
pub use report::{
    format_improvement, AblationCurve, AblationPoint, AblationRun, Report, RunRecord, SummaryRow, TaskInfo,
};
