//! Dataset caching, source pretraining and matrix execution.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ftlab_core::checkpoint::{load_checkpoint, manifest_path, save_checkpoint};
use ftlab_core::data::{load_dataset, save_dataset, Dataset, PreprocessConfig, Split};
use ftlab_core::strategy::{StrategyConfig, StrategyKind};
use ftlab_core::synth::{synth_generate, Domain, TaskSpec};
use ftlab_core::train::{pretrain, run_trial, DatasetPair, Init, TrainConfig, TrialResult};
use ftlab_core::zoo::{Family, Model, ModelSpec};

use crate::config::BenchConfig;
use crate::matrix::{cells, Cell};
use crate::records::{latest, read_records, RecordAppender, RunRecord, Status};
use crate::BenchError;

/// Name under which the pretraining source task is cached.
pub const SOURCE_NAME: &str = "source";

pub fn dataset_path(data_dir: &Path, name: &str, domain: Domain, split: Split) -> PathBuf {
    let domain = match domain {
        Domain::Source => "source",
        Domain::Target => "target",
    };
    let split = match split {
        Split::Train => "train",
        Split::Eval => "eval",
    };
    data_dir.join(format!("{name}.{domain}.{split}.ftds"))
}

pub fn checkpoint_base(dir: &Path, family: Family) -> PathBuf {
    dir.join(family.name())
}

fn create_dir(path: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(path).map_err(|e| BenchError::io(path, e))
}

/// Loads both splits from the FTDS cache, rendering and saving them first if
/// either file is missing.
pub fn cached_splits(
    data_dir: &Path,
    name: &str,
    task: &TaskSpec,
    domain: Domain,
    seed: u64,
) -> Result<(Dataset, Dataset), BenchError> {
    let paths = [Split::Train, Split::Eval].map(|s| (s, dataset_path(data_dir, name, domain, s)));
    if paths.iter().all(|(_, p)| p.exists()) {
        let [train, eval] = paths;
        return Ok((load_dataset(&train.1, train.0)?, load_dataset(&eval.1, eval.0)?));
    }
    create_dir(data_dir)?;
    let mut out = Vec::with_capacity(2);
    for (split, path) in paths {
        let ds = synth_generate(task, domain, split, seed)?;
        save_dataset(&ds, &path)?;
        out.push(ds);
    }
    let eval = out.pop().expect("two splits");
    Ok((out.pop().expect("two splits"), eval))
}

/// Writes the FTDS files of every target dataset and of the source task.
pub fn gen_data(cfg: &BenchConfig) -> Result<Vec<PathBuf>, BenchError> {
    let dir = cfg.paths.data_dir();
    let mut written = Vec::new();
    let mut jobs: Vec<(&str, &TaskSpec, Domain, u64)> = cfg
        .datasets
        .iter()
        .map(|d| (d.name.as_str(), &d.task, Domain::Target, d.seed))
        .collect();
    jobs.push((SOURCE_NAME, &cfg.pretrain.source, Domain::Source, cfg.pretrain.seed));
    for (name, task, domain, seed) in jobs {
        cached_splits(&dir, name, task, domain, seed)?;
        written.extend([Split::Train, Split::Eval].map(|s| dataset_path(&dir, name, domain, s)));
    }
    Ok(written)
}

fn preprocess_pair(train: &Dataset, eval: &Dataset, family: Family, crop: usize) -> Result<DatasetPair, BenchError> {
    let prep = PreprocessConfig::for_family(family, crop);
    Ok(DatasetPair {
        train: train.preprocessed(&prep)?,
        eval: eval.preprocessed(&prep)?,
    })
}

/// Trains one source model per architecture and saves it as a checkpoint.
/// Existing checkpoints are kept unless `force` is set.
pub fn pretrain_all(cfg: &BenchConfig, force: bool) -> Result<BTreeMap<Family, Option<TrialResult>>, BenchError> {
    let mut out = BTreeMap::new();
    for &family in &cfg.architectures {
        let base = checkpoint_base(&cfg.paths.checkpoint_dir(), family);
        if !force && manifest_path(&base).exists() {
            out.insert(family, None);
            continue;
        }
        out.insert(family, Some(pretrain_one(cfg, family)?));
    }
    Ok(out)
}

fn pretrain_one(cfg: &BenchConfig, family: Family) -> Result<TrialResult, BenchError> {
    let p = &cfg.pretrain;
    let (train, eval) = cached_splits(&cfg.paths.data_dir(), SOURCE_NAME, &p.source, Domain::Source, p.seed)?;
    let pair = preprocess_pair(&train, &eval, family, cfg.crop)?;
    let spec = ModelSpec::new(family, [3, cfg.crop, cfg.crop], pair.num_classes());
    let mut tc = TrainConfig::new(StrategyConfig::new(StrategyKind::FullFineTune), p.base_lr);
    tc.epochs = p.epochs;
    tc.patience = p.patience;
    tc.batch_size = p.batch_size;
    log::info!("pretraining {} on the source task", family.name());
    let outcome = pretrain(&spec, &pair, &tc, p.seed)?;
    let dir = cfg.paths.checkpoint_dir();
    create_dir(&dir)?;
    save_checkpoint(&outcome.model, &checkpoint_base(&dir, family))?;
    log::info!(
        "{}: source metrics {:?} after {} epochs",
        family.name(),
        outcome.result.metrics,
        outcome.result.stopped_epoch
    );
    Ok(outcome.result)
}

fn source_model(cfg: &BenchConfig, family: Family) -> Result<Model, BenchError> {
    let base = checkpoint_base(&cfg.paths.checkpoint_dir(), family);
    if !manifest_path(&base).exists() {
        pretrain_one(cfg, family)?;
    }
    let model = load_checkpoint(&base)?;
    if model.spec().input_shape != [3, cfg.crop, cfg.crop] {
        return Err(BenchError::Report(format!(
            "checkpoint {} expects input {:?} but crop is {}",
            base.display(),
            model.spec().input_shape,
            cfg.crop
        )));
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total_cells: usize,
    pub executed: usize,
    pub skipped: usize,
    /// Cells of this matrix whose latest record is a failure.
    pub failed: usize,
}

fn train_config(cfg: &BenchConfig, cell: &Cell) -> TrainConfig {
    let t = &cfg.training;
    let mut tc = TrainConfig::new(cell.strategy.clone(), cell.base_lr);
    tc.epochs = t.epochs;
    tc.patience = t.patience;
    tc.batch_size = t.batch_size;
    tc.check_invariants = t.check_invariants;
    tc
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Executes every pending cell and appends one record per cell. A failing
/// cell is recorded and the matrix carries on.
pub fn run_matrix(cfg: &BenchConfig, opts: RunOptions) -> Result<RunSummary, BenchError> {
    create_dir(&cfg.paths.out_dir)?;
    let records_path = cfg.paths.records();
    let done = latest(&read_records(&records_path)?);
    let all = cells(cfg);
    let pending: Vec<&Cell> = all
        .iter()
        .filter(|c| {
            opts.force
                || !done
                    .get(&c.key(cfg).ordinal())
                    .is_some_and(RunRecord::is_completed)
        })
        .collect();
    let mut summary = RunSummary {
        total_cells: all.len(),
        skipped: all.len() - pending.len(),
        ..RunSummary::default()
    };
    log::info!("{} cells, {} pending", all.len(), pending.len());

    if !pending.is_empty() {
        let mut models: BTreeMap<Family, Result<Model, String>> = BTreeMap::new();
        let mut pairs: BTreeMap<(usize, Family), Result<DatasetPair, String>> = BTreeMap::new();
        for c in &pending {
            models
                .entry(c.arch)
                .or_insert_with(|| source_model(cfg, c.arch).map_err(|e| e.to_string()));
            pairs.entry((c.dataset, c.arch)).or_insert_with(|| {
                let d = &cfg.datasets[c.dataset];
                cached_splits(&cfg.paths.data_dir(), &d.name, &d.task, Domain::Target, d.seed)
                    .and_then(|(train, eval)| preprocess_pair(&train, &eval, c.arch, cfg.crop))
                    .map_err(|e| e.to_string())
            });
        }

        let appender = RecordAppender::open(&records_path)?;
        let next = AtomicUsize::new(0);
        let finished = AtomicUsize::new(0);
        let append_error = std::sync::Mutex::new(None);
        let workers = opts.workers.clamp(1, pending.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cell) = pending.get(i) else { break };
                    let key = cell.key(cfg);
                    let primary = cfg.datasets[cell.dataset].primary_metric().key();
                    let outcome = match (&models[&cell.arch], &pairs[&(cell.dataset, cell.arch)]) {
                        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                        (Ok(model), Ok(pair)) => {
                            let tc = train_config(cfg, cell);
                            catch_unwind(AssertUnwindSafe(|| {
                                run_trial(Init::Pretrained(model.clone()), pair, &tc, cell.seed)
                            }))
                            .map_err(panic_message)
                            .and_then(|r| r.map(|o| o.result).map_err(|e| e.to_string()))
                        }
                    };
                    let record = match outcome {
                        Ok(result) => RunRecord::completed(key.clone(), primary, result),
                        Err(e) => RunRecord::failed(key.clone(), primary, e),
                    };
                    let n = finished.fetch_add(1, Ordering::SeqCst) + 1;
                    match record.status {
                        Status::Completed => log::info!("[{n}/{}] {key} done", pending.len()),
                        Status::Failed => log::warn!(
                            "[{n}/{}] {key} failed: {}",
                            pending.len(),
                            record.error.as_deref().unwrap_or("")
                        ),
                    }
                    if let Err(e) = appender.append(&record) {
                        append_error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = append_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(e);
        }
        summary.executed = finished.into_inner();
    }

    let now = latest(&read_records(&records_path)?);
    summary.failed = all
        .iter()
        .filter(|c| {
            now.get(&c.key(cfg).ordinal())
                .is_some_and(|r| r.status == Status::Failed)
        })
        .count();
    Ok(summary)
}
