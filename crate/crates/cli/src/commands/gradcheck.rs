use std::fs;
use std::path::Path;

use cpseg::gradcheck::run_gradcheck;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::GradcheckArgs;

pub const REPORT: &str = "gradcheck.txt";

pub fn run(cfg: &RunConfig, args: &GradcheckArgs, out: &Path) -> CliResult<()> {
    cfg.write_next_to(out)?;
    let report = run_gradcheck(cfg.seed, args.inject_fault.as_deref())?;
    let table = report.to_table();
    print!("{table}");
    let path = out.join(REPORT);
    fs::write(&path, &table).map_err(|e| CliError::io(&path, e))?;
    if report.passed() {
        return Ok(());
    }
    let names: Vec<_> = report.failures().map(|r| r.name).collect();
    Err(CliError::numerical(format!("gradient check failed: {}", names.join(", "))))
}
