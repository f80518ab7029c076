//! Evaluation harness: dialog files, metrics, batch runs, synthetic data,
//! the corruption benchmark and the memory trend report.

pub mod batch;
pub mod corrupt;
pub mod dialog;
pub mod evolve;
pub mod gold;
pub mod metrics;
pub mod synth;
pub mod table;

pub use batch::{run_batch, BatchReport, TurnRecord};
pub use corrupt::{run_corruption_bench, CorruptionReport};
pub use dialog::{Dialog, DialogError, DialogFile, GoldAnswer, GoldTurn};
pub use evolve::{constructed_evolve_report, evolve_stream, run_evolve_report, EvolveReport};
pub use gold::{GoldGateway, GoldMode};
pub use metrics::{score_turn, MetricsReport, TurnScore};
pub use synth::{gen_synthetic, SynthSpec, SyntheticSet};
