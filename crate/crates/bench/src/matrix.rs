//! Cells of the dataset × architecture × strategy × lr × seed matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use ftlab_core::strategy::StrategyConfig;
use ftlab_core::zoo::Family;

use crate::config::BenchConfig;

/// Unique identity of a matrix cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub arch: String,
    pub strategy: String,
    pub base_lr: f64,
    pub seed: u64,
}

impl CellKey {
    /// Sort/dedup key; learning rates compare by bit pattern.
    pub fn ordinal(&self) -> (String, String, String, u64, u64) {
        (
            self.dataset.clone(),
            self.arch.clone(),
            self.strategy.clone(),
            self.base_lr.to_bits(),
            self.seed,
        )
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{:e}/{}",
            self.dataset, self.arch, self.strategy, self.base_lr, self.seed
        )
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub dataset: usize,
    pub arch: Family,
    pub strategy: StrategyConfig,
    pub base_lr: f64,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self, cfg: &BenchConfig) -> CellKey {
        CellKey {
            dataset: cfg.datasets[self.dataset].name.clone(),
            arch: self.arch.name().to_string(),
            strategy: self.strategy.kind.label().to_string(),
            base_lr: self.base_lr,
            seed: self.seed,
        }
    }
}

/// Every cell in config order: dataset, architecture, strategy, lr, seed.
pub fn cells(cfg: &BenchConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for dataset in 0..cfg.datasets.len() {
        for &arch in &cfg.architectures {
            for strategy in &cfg.strategies {
                for &base_lr in &cfg.base_lrs {
                    for &seed in &cfg.seeds {
                        out.push(Cell {
                            dataset,
                            arch,
                            strategy: strategy.clone(),
                            base_lr,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}
