//! Adam training loop with strategy controllers, early stopping and
//! seed-wise aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softmax_rows, Tape};
use crate::data::{Dataset, PreprocessConfig, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, PredictionSet};
use crate::param::{BlockTag, Parameter};
use crate::strategy::{
    add_sp_penalty_grad, allocate_lr, block_rgns, freeze_mask, normalize_by_max, LrAllocation,
    StrategyConfig, StrategyKind,
};
use crate::synth::{synth_generate, Domain, TaskSpec};
use crate::tensor::{TaskKind, Tensor};
use crate::zoo::{build, replace_head, Model, ModelSpec};

pub const LR_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates per parameter. Each parameter keeps its own step count
/// so that a block unfrozen late starts with fresh bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub steps: Vec<u64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Parameter], config: AdamConfig) -> Self {
        AdamState {
            config,
            first: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            steps: vec![0; params.len()],
            step: 0,
        }
    }
}

/// One Adam update with per-block learning rates from `allocation`.
pub fn adam_step(
    params: &mut [Parameter],
    allocation: &LrAllocation,
    state: &mut AdamState,
) -> Result<()> {
    let rates: Vec<f64> = params
        .iter()
        .map(|p| allocation.effective_lr(p.block))
        .collect();
    adam_step_with_rates(params, &rates, state)
}

/// One Adam update with an explicit learning rate per parameter.
/// Non-trainable parameters are skipped entirely.
pub fn adam_step_with_rates(
    params: &mut [Parameter],
    rates: &[f64],
    state: &mut AdamState,
) -> Result<()> {
    if rates.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::State(format!(
            "adam: {} parameters, {} rates, {} moment slots",
            params.len(),
            rates.len(),
            state.first.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| p.trainable && !p.grad.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in {}", p.id)));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let lr = rates[i];
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Verify frozen-parameter and early-stopping invariants at the end of
    /// the trial and fail it on violation.
    #[serde(default)]
    pub check_invariants: bool,
}

impl TrainConfig {
    pub fn new(strategy: StrategyConfig, base_lr: f64) -> Self {
        TrainConfig {
            base_lr,
            epochs: 50,
            patience: 5,
            batch_size: 64,
            strategy,
            adam: AdamConfig::default(),
            check_invariants: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs > 0 && self.patience >= self.epochs {
            return Err(Error::Config(format!(
                "patience {} must be smaller than epochs {}",
                self.patience, self.epochs
            )));
        }
        self.strategy.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub metrics: BTreeMap<String, f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub trainable_blocks: Vec<BlockTag>,
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub result: TrialResult,
    /// Model restored to the best-validation epoch.
    pub model: Model,
    pub history: Vec<EpochLog>,
    /// Blocks that were trainable during at least one epoch.
    pub ever_trainable: BTreeSet<BlockTag>,
}

/// Where a trial's weights come from.
pub enum Init {
    /// Source model; its head is replaced for the target task.
    Pretrained(Model),
    /// Fresh He-uniform weights.
    Scratch(ModelSpec),
}

#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub train: Dataset,
    pub eval: Dataset,
}

impl DatasetPair {
    /// Renders both splits of a synthetic task and preprocesses them.
    pub fn synthetic(task: &TaskSpec, domain: Domain, seed: u64, prep: &PreprocessConfig) -> Result<Self> {
        Ok(DatasetPair {
            train: synth_generate(task, domain, Split::Train, seed)?.preprocessed(prep)?,
            eval: synth_generate(task, domain, Split::Eval, seed)?.preprocessed(prep)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn kind(&self) -> TaskKind {
        self.train.kind()
    }
}

pub struct Evaluation {
    pub loss: f64,
    /// Probabilities: softmax rows (multi-class) or per-class sigmoids.
    pub predictions: PredictionSet,
}

pub fn evaluate(model: &Model, ds: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let n = ds.len();
    let mut tape = Tape::new();
    let mut loss_sum = 0.0;
    let mut probs = Vec::with_capacity(n * ds.num_classes());
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(batch_size.max(1)) {
        tape.reset();
        let (x, y) = ds.batch(chunk)?;
        let logits = model.forward(&mut tape, x)?;
        let loss = tape.loss(logits, &y, ds.kind())?;
        loss_sum += tape.value(loss).data()[0] * chunk.len() as f64;
        let scores = tape.value(logits);
        match ds.kind() {
            TaskKind::MultiClass => probs.extend(softmax_rows(scores.data(), ds.num_classes())),
            TaskKind::MultiLabel => probs.extend(scores.data().iter().map(|&s| sigmoid(s))),
        }
    }
    let loss = loss_sum / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite validation loss".into()));
    }
    Ok(Evaluation {
        loss,
        predictions: PredictionSet::new(probs, ds.labels().clone(), ds.kind())?,
    })
}

fn check_data(model: &Model, data: &DatasetPair) -> Result<()> {
    let (train, eval) = (&data.train, &data.eval);
    if train.num_classes() != eval.num_classes() || train.kind() != eval.kind() {
        return Err(Error::Spec("train and eval splits disagree on classes or kind".into()));
    }
    if model.spec().num_classes != train.num_classes() {
        return Err(Error::Spec(format!(
            "model predicts {} classes, dataset has {}",
            model.spec().num_classes,
            train.num_classes()
        )));
    }
    for ds in [train, eval] {
        if ds.image_shape() != model.spec().input_shape {
            return Err(Error::Spec(format!(
                "dataset images {:?} do not match model input {:?}",
                ds.image_shape(),
                model.spec().input_shape
            )));
        }
        if ds.is_empty() {
            return Err(Error::Spec("empty dataset split".into()));
        }
    }
    Ok(())
}

fn step_rates(
    params: &[Parameter],
    strategy: &StrategyConfig,
    base_lr: f64,
    num_blocks: usize,
) -> Result<Vec<f64>> {
    if strategy.kind != StrategyKind::AutoRgn {
        let alloc = LrAllocation::uniform(base_lr, num_blocks);
        return Ok(params.iter().map(|p| alloc.effective_lr(p.block)).collect());
    }
    if strategy.rgn_per_tensor {
        let rgns: BTreeMap<usize, f64> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.block.is_head())
            .map(|(i, p)| {
                crate::strategy::rgn(&p.grad, &p.value).map(|r| (i, r.value))
            })
            .collect::<Result<_>>()?;
        let mult = normalize_by_max(&rgns, strategy.rgn_floor)?;
        return Ok((0..params.len())
            .map(|i| base_lr * mult.get(&i).copied().unwrap_or(1.0))
            .collect());
    }
    let rgns: BTreeMap<BlockTag, f64> = block_rgns(params)
        .into_iter()
        .map(|(k, r)| (k, r.value))
        .collect();
    let alloc = allocate_lr(&rgns, base_lr, strategy.rgn_floor)?;
    Ok(params.iter().map(|p| alloc.effective_lr(p.block)).collect())
}

/// Runs one seeded fine-tuning trial and returns metrics from the
/// best-validation-loss epoch.
pub fn run_trial(init: Init, data: &DatasetPair, cfg: &TrainConfig, seed: u64) -> Result<TrialOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let mut model = match init {
        Init::Pretrained(source) => replace_head(source, data.num_classes(), seed)?,
        Init::Scratch(spec) => {
            let mut m = build(&spec, seed)?;
            m.params_mut().iter_mut().for_each(Parameter::set_anchor);
            m
        }
    };
    check_data(&model, data)?;

    let m = model.num_blocks();
    let strategy = cfg.strategy.resolved(cfg.epochs, m);
    let initial = model.snapshot();
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_45);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut tape = Tape::new();
    let mut ever_trainable = BTreeSet::new();
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut best_loss = evaluate(&model, &data.eval, cfg.batch_size)?.loss;
    let mut best_epoch = 0;
    let mut best_snapshot = initial.clone();
    let mut completed = 0;

    for epoch in 0..cfg.epochs {
        let mask = freeze_mask(&strategy, epoch, m)?;
        for p in model.params_mut() {
            p.trainable = mask.is_trainable(p.block);
        }
        let trainable_blocks: Vec<BlockTag> = mask
            .entries()
            .iter()
            .filter(|(_, &on)| on)
            .map(|(&b, _)| b)
            .collect();
        ever_trainable.extend(trainable_blocks.iter().copied());

        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            tape.reset();
            let (x, y) = data.train.batch(chunk)?;
            let logits = model.forward(&mut tape, x)?;
            let loss = tape.loss(logits, &y, data.kind())?;
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            train_loss += loss_value * chunk.len() as f64;
            tape.backward(loss, model.params_mut())?;
            if strategy.kind.is_sp() {
                add_sp_penalty_grad(model.params_mut(), &strategy)?;
            }
            let rates = step_rates(model.params(), &strategy, cfg.base_lr, m)?;
            adam_step_with_rates(model.params_mut(), &rates, &mut adam)?;
        }
        completed = epoch + 1;
        let val_loss = evaluate(&model, &data.eval, cfg.batch_size)?.loss;
        history.push(EpochLog {
            epoch,
            train_loss: train_loss / data.train.len() as f64,
            val_loss,
            trainable_blocks,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = completed;
            best_snapshot = model.snapshot();
        } else if completed - best_epoch >= cfg.patience {
            break;
        }
    }

    model.restore(&best_snapshot)?;
    for p in model.params_mut() {
        p.trainable = true;
    }
    let eval = evaluate(&model, &data.eval, cfg.batch_size)?;
    let metrics = evaluate_all(&eval.predictions)
        .into_iter()
        .map(|(k, v)| (k.key().to_string(), v))
        .collect();

    let outcome = TrialOutcome {
        result: TrialResult {
            metrics,
            stopped_epoch: completed,
            best_epoch,
            best_val_loss: best_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
            seed,
        },
        model,
        history,
        ever_trainable,
    };
    if cfg.check_invariants {
        check_trial_invariants(&outcome, &initial, cfg)?;
    }
    Ok(outcome)
}

/// Frozen-parameter and early-stopping invariants of a finished trial.
pub fn check_trial_invariants(outcome: &TrialOutcome, initial: &[Tensor], cfg: &TrainConfig) -> Result<()> {
    for (p, start) in outcome.model.params().iter().zip(initial) {
        if !outcome.ever_trainable.contains(&p.block) {
            let same = p
                .value
                .data()
                .iter()
                .zip(start.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::Invariant(format!(
                    "never-trainable parameter {} changed",
                    p.id
                )));
            }
        }
        if !p.value.is_finite() {
            return Err(Error::Invariant(format!("parameter {} is not finite", p.id)));
        }
    }
    let r = &outcome.result;
    if r.stopped_epoch > cfg.epochs {
        return Err(Error::Invariant(format!(
            "stopped at epoch {} beyond the {} configured",
            r.stopped_epoch, cfg.epochs
        )));
    }
    if r.stopped_epoch > r.best_epoch + cfg.patience {
        return Err(Error::Invariant(format!(
            "ran to epoch {} although the best epoch was {} with patience {}",
            r.stopped_epoch, r.best_epoch, cfg.patience
        )));
    }
    Ok(())
}

/// Trains a from-scratch source model with full fine-tuning.
pub fn pretrain(spec: &ModelSpec, source: &DatasetPair, cfg: &TrainConfig, seed: u64) -> Result<TrialOutcome> {
    let mut spec = spec.clone();
    spec.num_classes = source.num_classes();
    let mut ft = cfg.clone();
    ft.strategy = StrategyConfig::new(StrategyKind::FullFineTune);
    run_trial(Init::Scratch(spec), source, &ft, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Mean and standard error (sample std / √n) of a list of values.
pub fn mean_se(values: &[f64]) -> Result<MeanSe> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Aggregation("no values to aggregate".into()));
    }
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return Ok(MeanSe {
            mean: values[0],
            std_error: 0.0,
            n,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n == 1 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(MeanSe { mean, std_error, n })
}

/// Per-metric mean and standard error across trials. Metrics missing from
/// some trials are aggregated over the trials that have them.
pub fn aggregate(trials: &[TrialResult]) -> Result<BTreeMap<String, MeanSe>> {
    if trials.is_empty() {
        return Err(Error::Aggregation("empty trial list".into()));
    }
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in trials {
        for (k, &v) in &t.metrics {
            values.entry(k).or_default().push(v);
        }
    }
    values
        .into_iter()
        .map(|(k, v)| mean_se(&v).map(|s| (k.to_string(), s)))
        .collect()
}
