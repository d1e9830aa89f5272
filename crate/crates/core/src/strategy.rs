//! The eight fine-tuning methods as per-epoch/per-step controllers.
//!
//! A controller never owns parameters. Each epoch the trainer asks
//! [`freeze_mask`] which blocks may move; each step it optionally adds the
//! starting-point penalty gradient ([`add_sp_penalty_grad`]) and, for
//! Auto-RGN, rescales per-block learning rates with [`allocate_lr`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{BlockTag, Parameter};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "FT")]
    FullFineTune,
    #[serde(rename = "LP")]
    LinearProbe,
    #[serde(rename = "G-LF")]
    GradualLastFirst,
    #[serde(rename = "G-FL")]
    GradualFirstLast,
    #[serde(rename = "LP-FT")]
    ProbeThenFineTune,
    #[serde(rename = "L1SP")]
    L1Sp,
    #[serde(rename = "L2SP")]
    L2Sp,
    #[serde(rename = "AutoRGN")]
    AutoRgn,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::FullFineTune,
        StrategyKind::LinearProbe,
        StrategyKind::GradualLastFirst,
        StrategyKind::GradualFirstLast,
        StrategyKind::ProbeThenFineTune,
        StrategyKind::L1Sp,
        StrategyKind::L2Sp,
        StrategyKind::AutoRgn,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::FullFineTune => "FT",
            StrategyKind::LinearProbe => "LP",
            StrategyKind::GradualLastFirst => "G-LF",
            StrategyKind::GradualFirstLast => "G-FL",
            StrategyKind::ProbeThenFineTune => "LP-FT",
            StrategyKind::L1Sp => "L1SP",
            StrategyKind::L2Sp => "L2SP",
            StrategyKind::AutoRgn => "AutoRGN",
        }
    }

    pub fn is_sp(self) -> bool {
        matches!(self, StrategyKind::L1Sp | StrategyKind::L2Sp)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Weight of the backbone starting-point term (L1SP/L2SP).
    #[serde(default = "default_coef")]
    pub alpha: f64,
    /// Weight of the head magnitude term (L1SP/L2SP).
    #[serde(default = "default_coef")]
    pub beta: f64,
    /// G-LF/G-FL cadence; `None` resolves to `ceil(epochs / (M + 1))`.
    #[serde(default)]
    pub unfreeze_interval_epochs: Option<usize>,
    /// LP-FT switch; `None` resolves to 20% of the epochs.
    #[serde(default)]
    pub switch_epoch: Option<usize>,
    #[serde(default)]
    pub rgn_floor: f64,
    /// Auto-RGN over individual tensors instead of blocks.
    #[serde(default)]
    pub rgn_per_tensor: bool,
}

fn default_coef() -> f64 {
    0.01
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            alpha: default_coef(),
            beta: default_coef(),
            unfreeze_interval_epochs: None,
            switch_epoch: None,
            rgn_floor: 0.0,
            rgn_per_tensor: false,
        }
    }

    pub fn with_sp(kind: StrategyKind, alpha: f64, beta: f64) -> Self {
        StrategyConfig {
            alpha,
            beta,
            ..StrategyConfig::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.rgn_floor) {
            return Err(Error::Config("rgn_floor must lie in [0, 1]".into()));
        }
        if self.unfreeze_interval_epochs == Some(0) || self.switch_epoch == Some(0) {
            return Err(Error::Config(
                "unfreeze_interval_epochs and switch_epoch must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Fills unset schedule fields from the run length and block count.
    pub fn resolved(&self, total_epochs: usize, num_blocks: usize) -> StrategyConfig {
        let mut cfg = self.clone();
        if cfg.unfreeze_interval_epochs.is_none() {
            cfg.unfreeze_interval_epochs = Some(total_epochs.div_ceil(num_blocks + 1).max(1));
        }
        if cfg.switch_epoch.is_none() {
            cfg.switch_epoch = Some(((total_epochs as f64 * 0.2).round() as usize).max(1));
        }
        cfg
    }
}

/// Block tag → trainable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask(BTreeMap<BlockTag, bool>);

impl FreezeMask {
    pub fn is_trainable(&self, block: BlockTag) -> bool {
        self.0.get(&block).copied().unwrap_or(false)
    }

    pub fn entries(&self) -> &BTreeMap<BlockTag, bool> {
        &self.0
    }

    /// Indices `i` of the trainable backbone blocks `b_i`.
    pub fn trainable_backbone(&self) -> Vec<usize> {
        self.0
            .iter()
            .filter_map(|(tag, &on)| match tag {
                BlockTag::Backbone(i) if on => Some(*i),
                _ => None,
            })
            .collect()
    }
}

pub fn freeze_mask(cfg: &StrategyConfig, epoch: usize, num_blocks: usize) -> Result<FreezeMask> {
    if num_blocks < 2 {
        return Err(Error::Config(format!("need at least 2 blocks, got {num_blocks}")));
    }
    let unset = |what: &str| {
        Error::Config(format!(
            "{what} unset for {}; call StrategyConfig::resolved first",
            cfg.kind
        ))
    };
    let backbone: Box<dyn Fn(usize) -> bool> = match cfg.kind {
        StrategyKind::FullFineTune
        | StrategyKind::L1Sp
        | StrategyKind::L2Sp
        | StrategyKind::AutoRgn => Box::new(|_| true),
        StrategyKind::LinearProbe => Box::new(|_| false),
        StrategyKind::GradualLastFirst | StrategyKind::GradualFirstLast => {
            let interval = cfg
                .unfreeze_interval_epochs
                .ok_or_else(|| unset("unfreeze_interval_epochs"))?;
            let open = (epoch / interval + 1).min(num_blocks);
            if cfg.kind == StrategyKind::GradualLastFirst {
                Box::new(move |i| i + open > num_blocks)
            } else {
                Box::new(move |i| i <= open)
            }
        }
        StrategyKind::ProbeThenFineTune => {
            let switch = cfg.switch_epoch.ok_or_else(|| unset("switch_epoch"))?;
            let all = epoch >= switch;
            Box::new(move |_| all)
        }
    };
    let mut map: BTreeMap<BlockTag, bool> = (1..=num_blocks)
        .map(|i| (BlockTag::Backbone(i), backbone(i)))
        .collect();
    map.insert(BlockTag::Head, true);
    Ok(FreezeMask(map))
}

fn sp_kind(cfg: &StrategyConfig) -> Result<StrategyKind> {
    if cfg.kind.is_sp() {
        Ok(cfg.kind)
    } else {
        Err(Error::Config(format!(
            "starting-point penalty requested for {}",
            cfg.kind
        )))
    }
}

fn anchor_of(p: &Parameter) -> Result<&Tensor> {
    p.anchor
        .as_ref()
        .ok_or_else(|| Error::State(format!("parameter {} has no anchor", p.id)))
}

/// Penalty value γ(ω): backbone deviation from the anchor (weighted by
/// alpha) plus head magnitude (weighted by beta), under the L1 or squared
/// L2 norm.
pub fn sp_penalty(params: &[Parameter], cfg: &StrategyConfig) -> Result<f64> {
    let kind = sp_kind(cfg)?;
    let norm = |x: f64| match kind {
        StrategyKind::L1Sp => x.abs(),
        _ => x * x,
    };
    let (mut backbone, mut head) = (0.0, 0.0);
    for p in params {
        if p.block.is_head() {
            head += p.value.data().iter().map(|&w| norm(w)).sum::<f64>();
        } else {
            let anchor = anchor_of(p)?;
            backbone += p
                .value
                .data()
                .iter()
                .zip(anchor.data())
                .map(|(w, w0)| norm(w - w0))
                .sum::<f64>();
        }
    }
    Ok(cfg.alpha * backbone + cfg.beta * head)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`sp_penalty`] for each parameter, in slice order.
pub fn sp_penalty_grad(params: &[Parameter], cfg: &StrategyConfig) -> Result<Vec<Tensor>> {
    let kind = sp_kind(cfg)?;
    let d = |x: f64, coef: f64| match kind {
        StrategyKind::L1Sp => coef * sign(x),
        _ => 2.0 * coef * x,
    };
    params
        .iter()
        .map(|p| {
            let data: Vec<f64> = if p.block.is_head() {
                p.value.data().iter().map(|&w| d(w, cfg.beta)).collect()
            } else {
                let anchor = anchor_of(p)?;
                p.value
                    .data()
                    .iter()
                    .zip(anchor.data())
                    .map(|(w, w0)| d(w - w0, cfg.alpha))
                    .collect()
            };
            Tensor::new(p.value.shape().to_vec(), data)
        })
        .collect()
}

/// Adds the penalty gradient into every `Parameter::grad`.
pub fn add_sp_penalty_grad(params: &mut [Parameter], cfg: &StrategyConfig) -> Result<()> {
    let contributions = sp_penalty_grad(params, cfg)?;
    for (p, c) in params.iter_mut().zip(&contributions) {
        p.grad.add_assign(c)?;
    }
    Ok(())
}

/// Relative gradient norm of one layer or block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rgn {
    pub value: f64,
    /// Set when the parameter norm was zero and the value was forced to 0.
    pub zero_param_norm: bool,
}

pub fn rgn(grad: &Tensor, value: &Tensor) -> Result<Rgn> {
    if grad.shape() != value.shape() {
        return Err(Error::dim(format!(
            "rgn: gradient {:?} vs value {:?}",
            grad.shape(),
            value.shape()
        )));
    }
    Ok(rgn_from_sums(
        grad.data().iter().map(|g| g * g).sum(),
        value.data().iter().map(|w| w * w).sum(),
    ))
}

fn rgn_from_sums(grad_sq: f64, value_sq: f64) -> Rgn {
    if value_sq == 0.0 {
        return Rgn {
            value: 0.0,
            zero_param_norm: true,
        };
    }
    Rgn {
        value: (grad_sq / value_sq).sqrt(),
        zero_param_norm: false,
    }
}

/// RGN of every backbone block, pooling all tensors of the block.
pub fn block_rgns(params: &[Parameter]) -> BTreeMap<BlockTag, Rgn> {
    let mut sums: BTreeMap<BlockTag, (f64, f64)> = BTreeMap::new();
    for p in params.iter().filter(|p| !p.block.is_head()) {
        let e = sums.entry(p.block).or_default();
        e.0 += p.grad.data().iter().map(|g| g * g).sum::<f64>();
        e.1 += p.value.data().iter().map(|w| w * w).sum::<f64>();
    }
    sums.into_iter()
        .map(|(tag, (g, w))| (tag, rgn_from_sums(g, w)))
        .collect()
}

/// Normalizes non-negative scores by their maximum, flooring each ratio at
/// `floor`. An all-zero input maps to all ones.
pub fn normalize_by_max<K: Ord + Clone>(
    rgns: &BTreeMap<K, f64>,
    floor: f64,
) -> Result<BTreeMap<K, f64>> {
    if let Some(bad) = rgns.values().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Consistency(format!(
            "relative gradient norm {bad} is not a finite non-negative number"
        )));
    }
    let max = rgns.values().cloned().fold(0.0, f64::max);
    Ok(rgns
        .iter()
        .map(|(k, &r)| {
            let m = if max == 0.0 { 1.0 } else { (r / max).max(floor) };
            (k.clone(), m)
        })
        .collect())
}

/// Per-block learning-rate multipliers in `[0, 1]`; the head always gets 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LrAllocation {
    base_lr: f64,
    multipliers: BTreeMap<BlockTag, f64>,
}

impl LrAllocation {
    /// Every block at the base rate.
    pub fn uniform(base_lr: f64, num_blocks: usize) -> Self {
        let multipliers = (1..=num_blocks)
            .map(BlockTag::Backbone)
            .chain(std::iter::once(BlockTag::Head))
            .map(|b| (b, 1.0))
            .collect();
        LrAllocation {
            base_lr,
            multipliers,
        }
    }

    pub fn multiplier(&self, block: BlockTag) -> f64 {
        self.multipliers.get(&block).copied().unwrap_or(1.0)
    }

    pub fn effective_lr(&self, block: BlockTag) -> f64 {
        self.base_lr * self.multiplier(block)
    }

    pub fn multipliers(&self) -> &BTreeMap<BlockTag, f64> {
        &self.multipliers
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }
}

pub fn allocate_lr(
    rgns: &BTreeMap<BlockTag, f64>,
    base_lr: f64,
    rgn_floor: f64,
) -> Result<LrAllocation> {
    let backbone: BTreeMap<BlockTag, f64> = rgns
        .iter()
        .filter(|(k, _)| !k.is_head())
        .map(|(k, v)| (*k, *v))
        .collect();
    let mut multipliers = normalize_by_max(&backbone, rgn_floor)?;
    multipliers.insert(BlockTag::Head, 1.0);
    Ok(LrAllocation {
        base_lr,
        multipliers,
    })
}
