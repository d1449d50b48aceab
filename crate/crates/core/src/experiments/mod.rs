//! Deblurring sweeps over images × blur strength × noise level, their CSV
//! and manifest outputs, and SVG reports.

pub mod config;
pub mod idx;
pub mod report;
pub mod run;

pub use config::{Dataset, ExperimentConfig, GuideConfig, LambdaGrid, Method};
pub use idx::load_idx_images;
pub use report::{parse_csv, summarize, write_report, GroupSummary};
pub use run::{load_input, run_experiment, run_sweep, ExperimentRecord, RunSummary, SweepInput, SweepOutput};
