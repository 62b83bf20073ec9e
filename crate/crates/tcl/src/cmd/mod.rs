//! Subcommand implementations. Each takes its parsed arguments and a sink
//! for the human-readable report.

mod analyze;
mod eval;
mod train;
mod verify;

pub use analyze::{analyze, AnalyzeArgs, AnalyzeOutcome, REPORT_FILE};
pub use eval::{eval, EvalArgs, EvalOutcome};
pub use train::{train, TrainArgs, TrainOutcome};
pub use verify::{verify, VerifyArgs};

use clap::ValueEnum;
use tcl_core::env::TaskSpec;
use tcl_core::trainer::Checkpoint;

/// Which half of the task split to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
}

impl SplitChoice {
    pub fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Test => "test",
        }
    }

    pub fn tasks(self, ckpt: &Checkpoint) -> &[TaskSpec] {
        match self {
            SplitChoice::Train => &ckpt.split.train_tasks,
            SplitChoice::Test => &ckpt.split.test_tasks,
        }
    }
}
