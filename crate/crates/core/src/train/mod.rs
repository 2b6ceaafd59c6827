mod config;
mod eval;
mod log;
mod optim;
mod probe;
mod trainer;

pub use config::TrainConfig;
pub use eval::{average_reports, evaluate, generate_all, EvalReport, Probe, SweepEvaluator};
pub use log::{detect_balance, format_row, metrics_csv, EpochRecord, MetricsWriter, TrainingLog, METRICS_HEADER};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use probe::{ExternalProbe, ProbeConfig};
pub use trainer::{train, EpochSink, StepMetrics, Trainer, UpdateMetrics};

#[cfg(test)]
mod tests;
