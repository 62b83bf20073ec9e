use std::io::Write;
use std::time::Instant;

use clap::Args;
use tcl_core::verify::{self, VerifyHooks};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    /// Print the detail of passing checks too.
    #[arg(long)]
    pub verbose: bool,
}

/// Runs the self-test suite and prints a pass/fail table. Any failure is
/// an error.
pub fn verify(args: &VerifyArgs, hooks: &VerifyHooks, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let results = verify::run(hooks);
    let w = |e| CliError::io("stdout")(e);
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status}  {}", r.name).map_err(w)?;
        if args.verbose || !r.passed {
            writeln!(out, "      {}", r.detail).map_err(w)?;
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(
        out,
        "{} of {} checks passed in {:.1} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    )
    .map_err(w)?;
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::VerifyFailed { failed, total: results.len() })
    }
}
