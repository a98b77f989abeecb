//! Collects run records into a scatter file and per-configuration tables of
//! medians.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::RunRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateSummary {
    pub records: usize,
    pub skipped: usize,
    pub tables: Vec<PathBuf>,
    pub pruned_checkpoints: usize,
}

fn find_results(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_results(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "results.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Median of the values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn is_checkpoint(name: &str) -> bool {
    name.starts_with("task_") && (name.ends_with(".model.json") || name.ends_with(".progress.json"))
}

/// Reads every `results.json` below `runs`, writing `scatter.csv` and one
/// `table_<dataset>_<variant>_l<layers>_h<width>.csv` per configuration to
/// `out`. Unreadable records are skipped with a warning. Unless
/// `keep_checkpoints` is set, the per-task checkpoints of aggregated runs are
/// deleted.
pub fn aggregate(runs: &Path, out: &Path, keep_checkpoints: bool) -> Result<AggregateSummary> {
    let mut paths = Vec::new();
    find_results(runs, &mut paths)?;
    let mut summary = AggregateSummary::default();
    let mut records = Vec::new();
    for p in &paths {
        match RunRecord::load(p) {
            Ok(r) => records.push((p.clone(), r)),
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                summary.skipped += 1;
            }
        }
    }
    records.sort_by(|(_, a), (_, b)| {
        (&a.dataset, a.variant(), a.architecture.layer_count, a.architecture.hidden_dim, a.method(), a.strategy.epochs, a.seed, &a.run_id).cmp(&(
            &b.dataset,
            b.variant(),
            b.architecture.layer_count,
            b.architecture.hidden_dim,
            b.method(),
            b.strategy.epochs,
            b.seed,
            &b.run_id,
        ))
    });
    summary.records = records.len();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let scatter = out.join("scatter.csv");
    let mut w = csv::Writer::from_path(&scatter)?;
    w.write_record(["method", "epochs", "layers", "width", "ordering", "ap", "af", "fin", "seed", "dataset", "granularity"])?;
    for (_, r) in &records {
        w.write_record([
            r.method().to_string(),
            r.strategy.epochs.to_string(),
            r.architecture.layer_count.to_string(),
            r.architecture.hidden_dim.to_string(),
            r.ordering.map(|o| o.to_string()).unwrap_or_default(),
            fmt(Some(r.ap)),
            fmt(r.af),
            fmt(Some(r.fin)),
            r.seed.to_string(),
            r.dataset.clone(),
            r.granularity.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&scatter, e))?;

    type TableKey = (String, String, usize, usize);
    let mut tables: BTreeMap<TableKey, BTreeMap<(usize, crate::strategy::Method), Vec<&RunRecord>>> = BTreeMap::new();
    for (_, r) in &records {
        tables
            .entry((r.dataset.clone(), r.variant(), r.architecture.layer_count, r.architecture.hidden_dim))
            .or_default()
            .entry((r.strategy.epochs, r.method()))
            .or_default()
            .push(r);
    }
    for ((dataset, variant, layers, width), cells) in &tables {
        let path = out.join(format!("table_{dataset}_{variant}_l{layers}_h{width}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["epochs", "method", "runs", "ap", "af", "fin"])?;
        for ((epochs, method), rs) in cells {
            let ap: Vec<f64> = rs.iter().map(|r| r.ap).collect();
            let af: Vec<f64> = rs.iter().filter_map(|r| r.af).collect();
            let fin: Vec<f64> = rs.iter().map(|r| r.fin).collect();
            w.write_record([
                epochs.to_string(),
                method.to_string(),
                rs.len().to_string(),
                fmt(median(&ap)),
                fmt(median(&af)),
                fmt(median(&fin)),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        summary.tables.push(path);
    }

    if !keep_checkpoints {
        for (p, _) in &records {
            let dir = p.parent().unwrap_or(Path::new("."));
            for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.flatten() {
                if e.file_name().to_str().is_some_and(is_checkpoint) {
                    fs::remove_file(e.path()).map_err(|err| Error::io(e.path(), err))?;
                    summary.pruned_checkpoints += 1;
                }
            }
        }
    }
    Ok(summary)
}
