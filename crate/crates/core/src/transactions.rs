//! Turning a stack of activation maps into a transaction database.
//!
//! Each map becomes one transaction; the items are the row-major indices of
//! the positions whose activation strictly exceeds the threshold.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum TransactionError {
    #[error("activation stack has no positive value")]
    AllZeroStack,
    #[error("activation stack contains a negative or non-finite value at index {0}")]
    InvalidActivation(usize),
    #[error("threshold report has {got} alphas for {maps} maps")]
    ThresholdMismatch { maps: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    #[default]
    Global,
    PerMap,
}

impl std::str::FromStr for ThresholdMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Self::Global),
            "per-map" => Ok(Self::PerMap),
            other => Err(format!("unknown alpha mode {other:?} (global | per-map)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub mode: ThresholdMode,
    /// One value in global mode, one per map otherwise. Maps without a
    /// positive activation get `f64::INFINITY`.
    pub alphas: Vec<f64>,
    pub positive_count: usize,
}

impl ThresholdReport {
    pub fn alpha_for(&self, map: usize) -> f64 {
        match self.mode {
            ThresholdMode::Global => self.alphas[0],
            ThresholdMode::PerMap => self.alphas[map],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionDb {
    pub grid: (usize, usize),
    pub transactions: Vec<Vec<u32>>,
}

impl TransactionDb {
    /// Builds a database, sorting and deduplicating every transaction.
    pub fn new(grid: (usize, usize), transactions: Vec<Vec<u32>>) -> Self {
        let transactions = transactions
            .into_iter()
            .map(|mut t| {
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        Self { grid, transactions }
    }

    pub fn universe_size(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    /// Number of transactions containing each item.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.universe_size()];
        for t in &self.transactions {
            for &i in t {
                counts[i as usize] += 1;
            }
        }
        counts
    }

    /// Debug dump: one transaction per line, ascending indices.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.transactions {
            let line: Vec<String> = t.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

fn check_stack(stack: &Tensor) -> Result<(usize, usize, usize), TransactionError> {
    let dims = stack.chw()?;
    if let Some(i) = stack.data().iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(TransactionError::InvalidActivation(i));
    }
    Ok(dims)
}

pub fn compute_threshold(
    stack: &Tensor,
    mode: ThresholdMode,
) -> Result<ThresholdReport, TransactionError> {
    let (c, h, w) = check_stack(stack)?;
    let per_map: Vec<(f64, usize)> = (0..c)
        .map(|ch| {
            stack.data()[ch * h * w..(ch + 1) * h * w]
                .iter()
                .filter(|&&v| v > 0.0)
                .fold((0.0f64, 0usize), |(s, n), &v| (s + f64::from(v), n + 1))
        })
        .collect();
    let positive_count = per_map.iter().map(|p| p.1).sum();

    let alphas = match mode {
        ThresholdMode::Global => {
            if positive_count == 0 {
                return Err(TransactionError::AllZeroStack);
            }
            let sum: f64 = per_map.iter().map(|p| p.0).sum();
            vec![sum / positive_count as f64]
        }
        ThresholdMode::PerMap => per_map
            .iter()
            .map(|&(s, n)| if n == 0 { f64::INFINITY } else { s / n as f64 })
            .collect(),
    };
    Ok(ThresholdReport {
        mode,
        alphas,
        positive_count,
    })
}

pub fn build_transactions(
    stack: &Tensor,
    thr: &ThresholdReport,
) -> Result<TransactionDb, TransactionError> {
    let (c, h, w) = check_stack(stack)?;
    if thr.mode == ThresholdMode::PerMap && thr.alphas.len() != c
        || thr.mode == ThresholdMode::Global && thr.alphas.len() != 1
    {
        return Err(TransactionError::ThresholdMismatch {
            maps: c,
            got: thr.alphas.len(),
        });
    }
    let transactions = (0..c)
        .map(|ch| {
            let alpha = thr.alpha_for(ch);
            stack
                .channel(ch)
                .iter()
                .enumerate()
                .filter(|(_, &v)| f64::from(v) > alpha)
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect();
    Ok(TransactionDb {
        grid: (h, w),
        transactions,
    })
}
