use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cpseg::data::{read_mask, write_volume};
use cpseg::metrics::{evaluate_case, surface_error_map, MetricsReport};

use super::mask_case_key;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::EvalArgs;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TOML: &str = "metrics.toml";
pub const TTEST_CSV: &str = "ttest.csv";

/// Mask files in `dir` keyed by case name.
pub fn mask_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        if let Some(key) = mask_case_key(&path) {
            if let Some(prev) = out.get(&key) {
                eprintln!("warning: {} and {} share case `{key}`; using the first", prev.display(), path.display());
                continue;
            }
            out.insert(key, path);
        }
    }
    Ok(out)
}

/// Evaluates every prediction with a matching reference. Unmatched cases on
/// either side are reported on stderr.
pub fn evaluate_dir(pred: &Path, gt: &Path, cfg: &RunConfig, error_maps: Option<&Path>) -> CliResult<MetricsReport> {
    let preds = mask_files(pred)?;
    let refs = mask_files(gt)?;
    for key in preds.keys().filter(|k| !refs.contains_key(*k)) {
        eprintln!("skipping {key}: no reference in {}", gt.display());
    }
    for key in refs.keys().filter(|k| !preds.contains_key(*k)) {
        eprintln!("skipping {key}: no prediction in {}", pred.display());
    }
    let mut report = MetricsReport {
        method: pred.file_name().map(|n| n.to_string_lossy().into_owned()),
        cases: Vec::new(),
    };
    for (key, ppath) in &preds {
        let Some(rpath) = refs.get(key) else { continue };
        let p = read_mask(ppath)?;
        let r = read_mask(rpath)?;
        report.cases.push(evaluate_case(key, &p, &r, cfg.metrics.asd)?);
        if let Some(dir) = error_maps {
            if p.count() > 0 && r.count() > 0 {
                write_volume(&surface_error_map(&p, &r)?, &dir.join(format!("{key}_error.nii")))?;
            }
        }
    }
    if report.cases.is_empty() {
        return Err(CliError::data(format!(
            "no case in {} matches a reference in {}",
            pred.display(),
            gt.display()
        )));
    }
    Ok(report)
}

fn write(path: PathBuf, text: String) -> CliResult<()> {
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn run(cfg: &RunConfig, args: &EvalArgs, out: &Path) -> CliResult<()> {
    let mut cfg = cfg.clone();
    cfg.metrics.error_maps |= args.error_maps;
    cfg.write_next_to(out)?;
    let maps = cfg.metrics.error_maps.then_some(out);
    let report = evaluate_dir(&args.pred, &args.gt, &cfg, maps)?;
    write(out.join(METRICS_CSV), report.to_csv())?;
    write(out.join(METRICS_TOML), report.to_toml()?)?;
    print!("{}", report.to_csv());

    if let Some(other_dir) = &args.compare {
        let other = evaluate_dir(other_dir, &args.gt, &cfg, None)?;
        let mut csv = String::from("metric,t,df,p\n");
        for (m, t) in report.compare(&other) {
            let _ = writeln!(csv, "{},{},{},{}", m.column(), t.t, t.df, t.p);
        }
        print!("{csv}");
        write(out.join(TTEST_CSV), csv)?;
    }
    Ok(())
}
