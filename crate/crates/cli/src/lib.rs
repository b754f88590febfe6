//! Experiment harness: kernel generation, saliency export, training,
//! evaluation, robustness sweeps and reporting. `main.rs` is a thin clap
//! front end over these functions.

pub mod config;
pub mod eval;
pub mod kernel_cmd;
pub mod report;
pub mod train;

use std::path::Path;

use oocs_core::OocsError;

pub use config::{NetworkVariant, TrainConfig};
pub use eval::{cmd_eval, cmd_robustness, EvalRow, Model, Perturbation, RobustnessGrid, TestSet};
pub use kernel_cmd::{cmd_filter, cmd_gen_kernel, FilterOutputs};
pub use report::{cmd_report, read_report, ReportOutput};
pub use train::{cmd_train, EpochRecord, TrainOutcome};

/// Derives an independent stream seed from a base seed and a counter
/// (splitmix64 finalizer).
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> OocsError {
    OocsError::Format(format!("{}: {e}", path.display()))
}
