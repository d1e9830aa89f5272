//! Report arithmetic and table emission.
//!
//! Everything here is a pure function of the record set: records are
//! deduplicated (latest wins) and sorted before any output is produced, so
//! the same set always yields byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ftlab_core::strategy::StrategyKind;
use ftlab_core::train::{mean_se, MeanSe};

use crate::records::{latest, RunRecord};
use crate::BenchError;

pub const BASELINE: &str = "FT";

/// Percent change of `method` relative to the full fine-tuning value.
pub fn relative_improvement(method: f64, ft: f64) -> Result<f64, BenchError> {
    if !(ft > 0.0) || !method.is_finite() || !ft.is_finite() {
        return Err(BenchError::Arithmetic(format!(
            "relative improvement needs a positive baseline, got ft = {ft}, method = {method}"
        )));
    }
    Ok(100.0 * (method - ft) / ft)
}

/// Headline score of one (dataset, architecture, strategy) experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimaryScore {
    pub dataset: String,
    pub arch: String,
    pub strategy: String,
    pub value: f64,
}

/// What counts as beating the baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    /// Relative improvement above this many percent.
    RelativePercent(f64),
    /// Raw difference above this amount, in the units of the scores.
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::RelativePercent(0.1)
    }
}

impl Threshold {
    fn beats(self, value: f64, ft: f64) -> Result<bool, BenchError> {
        Ok(match self {
            Threshold::RelativePercent(t) => relative_improvement(value, ft)? > t,
            Threshold::Absolute(t) => value - ft > t,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectivenessRow {
    pub strategy: String,
    /// Improvement count per architecture.
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub effectiveness_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectivenessTable {
    pub architectures: Vec<String>,
    /// Number of (dataset, architecture) groups.
    pub total_experiments: usize,
    pub rows: Vec<EffectivenessRow>,
}

impl EffectivenessTable {
    pub fn row(&self, strategy: &str) -> Option<&EffectivenessRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

fn strategy_order(label: &str) -> (usize, String) {
    let rank = label
        .parse::<StrategyKind>()
        .ok()
        .and_then(|k| StrategyKind::ALL.iter().position(|&x| x == k))
        .unwrap_or(usize::MAX);
    (rank, label.to_string())
}

/// Counts, per strategy and architecture, the experiments in which the
/// strategy beats full fine-tuning of the same dataset and architecture.
pub fn effectiveness_table(scores: &[PrimaryScore], threshold: Threshold) -> Result<EffectivenessTable, BenchError> {
    let mut groups: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for s in scores {
        let group = groups.entry((&s.dataset, &s.arch)).or_default();
        if group.insert(&s.strategy, s.value).is_some() {
            return Err(BenchError::Report(format!(
                "duplicate score for {}/{}/{}",
                s.dataset, s.arch, s.strategy
            )));
        }
    }
    let architectures: Vec<String> = groups
        .keys()
        .map(|(_, a)| a.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut strategies: Vec<&str> = scores
        .iter()
        .map(|s| s.strategy.as_str())
        .filter(|s| *s != BASELINE)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    strategies.sort_by_key(|s| strategy_order(s));

    let mut counts: BTreeMap<&str, BTreeMap<String, usize>> = strategies
        .iter()
        .map(|&s| (s, architectures.iter().map(|a| (a.clone(), 0)).collect()))
        .collect();
    for ((dataset, arch), group) in &groups {
        let ft = *group.get(BASELINE).ok_or_else(|| {
            BenchError::Report(format!("group {dataset}/{arch} has no {BASELINE} baseline"))
        })?;
        for (&strategy, &value) in group.iter().filter(|(s, _)| **s != BASELINE) {
            if threshold.beats(value, ft)? {
                *counts
                    .get_mut(strategy)
                    .and_then(|c| c.get_mut(*arch))
                    .expect("every strategy/arch pair is pre-seeded") += 1;
            }
        }
    }
    let total_experiments = groups.len();
    let rows = strategies
        .iter()
        .map(|&s| {
            let counts = counts.remove(s).unwrap_or_default();
            let total: usize = counts.values().sum();
            EffectivenessRow {
                strategy: s.to_string(),
                counts,
                total,
                effectiveness_pct: 100.0 * total as f64 / total_experiments as f64,
            }
        })
        .collect();
    Ok(EffectivenessTable {
        architectures,
        total_experiments,
        rows,
    })
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub arch: String,
    pub strategy: String,
    pub base_lr: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub stopped_epoch: usize,
    pub wall_time_s: f64,
}

/// Completed records, deduplicated and in key order.
fn completed(records: &[RunRecord]) -> Vec<RunRecord> {
    latest(records)
        .into_values()
        .filter(RunRecord::is_completed)
        .collect()
}

pub fn result_rows(records: &[RunRecord]) -> Vec<ResultRow> {
    completed(records)
        .iter()
        .flat_map(|r| {
            let t = r.result.as_ref().expect("completed record has a result");
            t.metrics.iter().map(move |(metric, &value)| ResultRow {
                dataset: r.key.dataset.clone(),
                arch: r.key.arch.clone(),
                strategy: r.key.strategy.clone(),
                base_lr: r.key.base_lr,
                seed: r.key.seed,
                metric: metric.clone(),
                value,
                stopped_epoch: t.stopped_epoch,
                wall_time_s: t.wall_time_s,
            })
        })
        .collect()
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(BenchError::from)
}

/// Mean and standard error over seeds at one learning rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridEntry {
    pub base_lr: f64,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MeanSe>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategySummary {
    /// Every learning rate that was run.
    pub grid: Vec<GridEntry>,
    /// The learning rate with the highest mean primary metric.
    pub best_of_grid: GridEntry,
    /// Metrics on which this strategy is the best of its architecture.
    pub best_in_architecture: Vec<String>,
    /// Metrics on which this strategy and architecture are the best of the
    /// dataset.
    pub best_overall: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub primary_metric: String,
    /// Architecture → strategy → summary.
    pub architectures: BTreeMap<String, BTreeMap<String, StrategySummary>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub datasets: BTreeMap<String, DatasetSummary>,
}

impl Summary {
    pub fn get(&self, dataset: &str, arch: &str, strategy: &str) -> Option<&StrategySummary> {
        self.datasets.get(dataset)?.architectures.get(arch)?.get(strategy)
    }

    /// Best-of-grid primary metric means, one per experiment.
    pub fn primary_scores(&self) -> Vec<PrimaryScore> {
        let mut out = Vec::new();
        for (dataset, ds) in &self.datasets {
            for (arch, strategies) in &ds.architectures {
                for (strategy, s) in strategies {
                    if let Some(m) = s.best_of_grid.metrics.get(&ds.primary_metric) {
                        out.push(PrimaryScore {
                            dataset: dataset.clone(),
                            arch: arch.clone(),
                            strategy: strategy.clone(),
                            value: m.mean,
                        });
                    }
                }
            }
        }
        out
    }
}

fn grid_entry(base_lr: f64, records: &[&RunRecord]) -> Result<GridEntry, BenchError> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, &v) in &r.result.as_ref().expect("completed").metrics {
            values.entry(k).or_default().push(v);
        }
    }
    let metrics = values
        .into_iter()
        .map(|(k, v)| mean_se(&v).map(|s| (k.to_string(), s)))
        .collect::<Result<_, _>>()?;
    Ok(GridEntry {
        base_lr,
        seeds: records.iter().map(|r| r.key.seed).collect(),
        metrics,
    })
}

fn is_max(value: f64, pool: impl Iterator<Item = f64>) -> bool {
    pool.fold(f64::NEG_INFINITY, f64::max) <= value
}

pub fn summarize(records: &[RunRecord]) -> Result<Summary, BenchError> {
    let done = completed(records);
    // dataset → arch → strategy → lr bits → records
    type Tree<'a> = BTreeMap<&'a str, BTreeMap<&'a str, BTreeMap<&'a str, BTreeMap<u64, Vec<&'a RunRecord>>>>>;
    let mut tree: Tree = BTreeMap::new();
    let mut primary: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &done {
        let k = &r.key;
        tree.entry(&k.dataset)
            .or_default()
            .entry(&k.arch)
            .or_default()
            .entry(&k.strategy)
            .or_default()
            .entry(k.base_lr.to_bits())
            .or_default()
            .push(r);
        if let Some(prev) = primary.insert(&k.dataset, &r.primary_metric) {
            if prev != r.primary_metric {
                return Err(BenchError::Report(format!(
                    "dataset {} recorded with primary metrics {prev} and {}",
                    k.dataset, r.primary_metric
                )));
            }
        }
    }

    let mut datasets = BTreeMap::new();
    for (dataset, archs) in tree {
        let pm = primary[dataset].to_string();
        let mut arch_out: BTreeMap<String, BTreeMap<String, StrategySummary>> = BTreeMap::new();
        for (arch, strategies) in archs {
            let mut strat_out = BTreeMap::new();
            for (strategy, lrs) in strategies {
                let mut grid = lrs
                    .iter()
                    .map(|(&bits, recs)| grid_entry(f64::from_bits(bits), recs))
                    .collect::<Result<Vec<_>, _>>()?;
                grid.sort_by(|a, b| b.base_lr.total_cmp(&a.base_lr));
                let score = |g: &GridEntry| g.metrics.get(&pm).map_or(f64::NEG_INFINITY, |m| m.mean);
                let best = grid
                    .iter()
                    .fold(None::<&GridEntry>, |best, g| match best {
                        Some(b) if score(b) >= score(g) => Some(b),
                        _ => Some(g),
                    })
                    .expect("at least one learning rate")
                    .clone();
                strat_out.insert(
                    strategy.to_string(),
                    StrategySummary {
                        grid,
                        best_of_grid: best,
                        best_in_architecture: Vec::new(),
                        best_overall: Vec::new(),
                    },
                );
            }
            arch_out.insert(arch.to_string(), strat_out);
        }
        mark_best(&mut arch_out);
        datasets.insert(
            dataset.to_string(),
            DatasetSummary {
                primary_metric: pm,
                architectures: arch_out,
            },
        );
    }
    Ok(Summary { datasets })
}

/// Flags the per-architecture and per-dataset maxima of every metric; ties
/// are all flagged.
fn mark_best(archs: &mut BTreeMap<String, BTreeMap<String, StrategySummary>>) {
    let metrics: BTreeSet<String> = archs
        .values()
        .flat_map(|s| s.values())
        .flat_map(|s| s.best_of_grid.metrics.keys().cloned())
        .collect();
    for metric in &metrics {
        let mean = |s: &StrategySummary| s.best_of_grid.metrics.get(metric).map(|m| m.mean);
        let overall: Vec<f64> = archs.values().flat_map(|s| s.values()).filter_map(mean).collect();
        for strategies in archs.values_mut() {
            let in_arch: Vec<f64> = strategies.values().filter_map(mean).collect();
            for s in strategies.values_mut() {
                let Some(v) = mean(s) else { continue };
                if is_max(v, in_arch.iter().copied()) {
                    s.best_in_architecture.push(metric.clone());
                }
                if is_max(v, overall.iter().copied()) {
                    s.best_overall.push(metric.clone());
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelImpRow {
    pub arch: String,
    pub strategy: String,
    pub metric: String,
    pub value: f64,
    pub ft_value: f64,
    /// Empty when the baseline is not positive.
    pub relative_improvement_pct: Option<f64>,
}

/// Percent change against FT for every metric of one dataset.
pub fn relimp_rows(ds: &DatasetSummary) -> Option<Vec<RelImpRow>> {
    let mut rows = Vec::new();
    for (arch, strategies) in &ds.architectures {
        let ft = strategies.get(BASELINE)?;
        let mut ordered: Vec<(&String, &StrategySummary)> = strategies.iter().collect();
        ordered.sort_by_key(|(s, _)| strategy_order(s));
        for (strategy, s) in ordered {
            for (metric, m) in &s.best_of_grid.metrics {
                let Some(base) = ft.best_of_grid.metrics.get(metric) else { continue };
                rows.push(RelImpRow {
                    arch: arch.clone(),
                    strategy: strategy.clone(),
                    metric: metric.clone(),
                    value: m.mean,
                    ft_value: base.mean,
                    relative_improvement_pct: relative_improvement(m.mean, base.mean).ok(),
                });
            }
        }
    }
    Some(rows)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReportOptions {
    pub threshold: Threshold,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmittedReports {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    std::fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| BenchError::Report(format!("csv buffer: {e}")))
}

fn effectiveness_csv(table: &EffectivenessTable) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["strategy".to_string()];
    header.extend(table.architectures.iter().cloned());
    header.extend(["total".into(), "effectiveness_pct".into()]);
    w.write_record(&header)?;
    for r in &table.rows {
        let mut line = vec![r.strategy.clone()];
        line.extend(table.architectures.iter().map(|a| r.counts[a].to_string()));
        line.extend([r.total.to_string(), r.effectiveness_pct.to_string()]);
        w.write_record(&line)?;
    }
    w.into_inner()
        .map_err(|e| BenchError::Report(format!("csv buffer: {e}")))
}

/// Writes `results.csv`, `summary.json`, one `relimp_<dataset>.csv` per
/// dataset and `effectiveness.csv`. Datasets lacking an FT baseline get no
/// relative-improvement file and suppress the effectiveness table; each
/// such omission is returned as a warning.
pub fn emit_reports(records: &[RunRecord], out_dir: &Path, opts: ReportOptions) -> Result<EmittedReports, BenchError> {
    let rows = result_rows(records);
    if rows.is_empty() {
        return Err(BenchError::Report("no completed records to report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let mut out = EmittedReports::default();

    let path = out_dir.join("results.csv");
    write_file(&path, &csv_bytes(&rows)?)?;
    out.files.push(path);

    let summary = summarize(records)?;
    let path = out_dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_file(&path, &json)?;
    out.files.push(path);

    for (name, ds) in &summary.datasets {
        match relimp_rows(ds) {
            Some(rows) => {
                let path = out_dir.join(format!("relimp_{name}.csv"));
                write_file(&path, &csv_bytes(&rows)?)?;
                out.files.push(path);
            }
            None => out
                .warnings
                .push(format!("{name}: some architecture lacks an {BASELINE} run, no relimp table")),
        }
    }

    match effectiveness_table(&summary.primary_scores(), opts.threshold) {
        Ok(table) => {
            let path = out_dir.join("effectiveness.csv");
            write_file(&path, &effectiveness_csv(&table)?)?;
            out.files.push(path);
        }
        Err(BenchError::Report(msg)) => out.warnings.push(format!("no effectiveness table: {msg}")),
        Err(e) => return Err(e),
    }
    Ok(out)
}
