//! Grid expansion and parallel execution of many runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_dataset, run_experiment, DatasetConfig, ExperimentConfig, LoadedData, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::ScoredSet;
use crate::strategy::{Method, StrategyConfig};
use crate::tasks::{Ordering, SplitPolicy};

fn default_layers() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_widths() -> Vec<usize> {
    vec![64, 128, 256]
}
fn default_epochs() -> Vec<usize> {
    vec![1, 2, 5, 10]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Bare, Method::Ewc, Method::Lwf, Method::Mas, Method::Twp, Method::Gem]
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Axes of the hyperparameter grid. Orderings apply to pattern datasets and
/// granularities to Elliptic; when absent they default to all five orderings
/// and to both granularities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orderings: Option<Vec<Ordering>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularities: Option<Vec<usize>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            layers: default_layers(),
            widths: default_widths(),
            epochs: default_epochs(),
            methods: default_methods(),
            orderings: None,
            granularities: None,
            seeds: default_seeds(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: DatasetConfig,
    /// Only `dropout` is used; depth and width come from the grid.
    #[serde(default)]
    pub model: ModelConfig,
    /// Strategy settings shared by every run; `method` and `epochs` are set
    /// by the grid.
    #[serde(default)]
    pub strategy: toml::Table,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub scored_set: ScoredSet,
    #[serde(default)]
    pub split: SplitPolicy,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = SweepConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.dataset.resolve_paths(base);
        if c.out_dir.is_relative() {
            c.out_dir = base.join(&c.out_dir);
        }
        Ok(c)
    }
}

fn non_empty<T>(axis: &[T], name: &str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Config(format!("grid axis `{name}` is empty")));
    }
    Ok(())
}

/// One single-seed config per grid point, in a fixed order.
pub fn expand_sweep(sweep: &SweepConfig) -> Result<Vec<ExperimentConfig>> {
    let g = &sweep.grid;
    non_empty(&g.layers, "layers")?;
    non_empty(&g.widths, "widths")?;
    non_empty(&g.epochs, "epochs")?;
    non_empty(&g.methods, "methods")?;
    non_empty(&g.seeds, "seeds")?;
    if sweep.strategy.contains_key("method") || sweep.strategy.contains_key("epochs") {
        return Err(Error::Config("set `method` and `epochs` through the grid".into()));
    }

    let datasets: Vec<DatasetConfig> = match &sweep.dataset {
        DatasetConfig::Elliptic { .. } => {
            if g.orderings.is_some() {
                return Err(Error::Config("orderings do not apply to elliptic".into()));
            }
            let gs = g.granularities.clone().unwrap_or_else(|| vec![7, 49]);
            non_empty(&gs, "granularities")?;
            gs.into_iter()
                .map(|v| {
                    let mut d = sweep.dataset.clone();
                    if let DatasetConfig::Elliptic { granularity, .. } = &mut d {
                        *granularity = v;
                    }
                    d
                })
                .collect()
        }
        DatasetConfig::Ibm { .. } | DatasetConfig::Synthetic { .. } => {
            if g.granularities.is_some() {
                return Err(Error::Config("granularities apply to elliptic only".into()));
            }
            let os = g.orderings.clone().unwrap_or_else(|| Ordering::ALL.to_vec());
            non_empty(&os, "orderings")?;
            os.into_iter()
                .map(|o| {
                    let mut d = sweep.dataset.clone();
                    if let DatasetConfig::Ibm { ordering, .. } | DatasetConfig::Synthetic { ordering, .. } = &mut d {
                        *ordering = o;
                    }
                    d
                })
                .collect()
        }
    };

    let mut out = Vec::new();
    for d in &datasets {
        for &layers in &g.layers {
            for &hidden in &g.widths {
                for &epochs in &g.epochs {
                    for &method in &g.methods {
                        let mut table = sweep.strategy.clone();
                        table.insert("method".into(), toml::Value::String(method.to_string()));
                        table.insert("epochs".into(), toml::Value::Integer(epochs as i64));
                        let strategy: StrategyConfig = toml::Value::Table(table).try_into()?;
                        for &seed in &g.seeds {
                            let c = ExperimentConfig {
                                name: sweep.name.clone(),
                                dataset: d.clone(),
                                model: ModelConfig {
                                    layers,
                                    hidden,
                                    dropout: sweep.model.dropout,
                                },
                                strategy: strategy.clone(),
                                seeds: vec![seed],
                                out_dir: sweep.out_dir.clone(),
                                scored_set: sweep.scored_set,
                                split: sweep.split,
                            };
                            c.validate()?;
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSummary {
    pub completed: usize,
    /// `(run id, error message)` per failed run.
    pub failures: Vec<(String, String)>,
}

/// Runs every config on a pool of `workers` threads. Each dataset is loaded
/// once. A failing run is logged and recorded; the others continue.
pub fn run_sweep(configs: &[ExperimentConfig], workers: usize) -> Result<SweepSummary> {
    let mut cache: BTreeMap<String, LoadedData> = BTreeMap::new();
    for c in configs {
        let key = c.dataset.source_key();
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(key) {
            info!("loading {}", slot.key());
            slot.insert(load_dataset(&c.dataset)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(String, std::result::Result<(), String>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let seed = c.seeds[0];
                let id = c.run_id(seed);
                let data = &cache[&c.dataset.source_key()];
                let r = run_experiment(c, seed, data).map(|_| ()).map_err(|e| e.to_string());
                if let Err(e) = &r {
                    error!("{id} failed: {e}");
                }
                (id, r)
            })
            .collect()
    });
    let mut summary = SweepSummary::default();
    for (id, r) in outcomes {
        match r {
            Ok(()) => summary.completed += 1,
            Err(e) => summary.failures.push((id, e)),
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ibm_sweep(grid: &str) -> SweepConfig {
        SweepConfig::from_toml(&format!(
            r#"
[dataset]
kind = "ibm"
transactions = "t.csv"
patterns = "p.txt"
{grid}
"#
        ))
        .unwrap()
    }

    #[test]
    fn default_grid_size() {
        let runs = expand_sweep(&ibm_sweep("")).unwrap();
        assert_eq!(runs.len(), 5 * 1080);
        let seed0 = runs.iter().filter(|c| c.seeds == [0]).count();
        assert_eq!(seed0, 1080);
        let ids: std::collections::BTreeSet<_> = runs.iter().map(|c| c.run_id(c.seeds[0])).collect();
        assert_eq!(ids.len(), runs.len());
    }

    #[test]
    fn strategy_table_is_shared() {
        let mut s = ibm_sweep("[grid]\nmethods = [\"ewc\"]\nseeds = [0]\nlayers=[1]\nwidths=[8]\nepochs=[3]\norderings=[\"fixed-random\"]");
        s.strategy.insert("lambda".into(), toml::Value::Float(5.0));
        let runs = expand_sweep(&s).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].strategy.lambda(), 5.0);
        assert_eq!(runs[0].strategy.epochs, 3);
    }

    #[test]
    fn empty_or_misplaced_axes() {
        assert!(expand_sweep(&ibm_sweep("[grid]\nmethods = []")).is_err());
        assert!(expand_sweep(&ibm_sweep("[grid]\ngranularities = [7]")).is_err());
        let mut s = ibm_sweep("");
        s.strategy.insert("epochs".into(), toml::Value::Integer(2));
        assert!(expand_sweep(&s).is_err());
    }
}
