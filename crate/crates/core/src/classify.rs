//! Joint feature fusion and a one-vs-rest linear SVM trained by dual
//! coordinate descent on the hinge loss.
//!
//! The bias is learned as the weight of a constant feature of value 1, so
//! the optimized objective is `0.5 * (|w|^2 + b^2) + C * sum(hinge)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, Descriptor, TensorError};

pub const DEFAULT_C: f64 = 1.0;
pub const MAX_EPOCHS: usize = 1000;
/// Stop when `(primal - dual) / max(1, primal)` drops below this.
pub const GAP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("all blocks must share one length: block {index} has {len}, expected {expected}")]
    LengthMismatch {
        index: usize,
        len: usize,
        expected: usize,
    },
    #[error("block {0} is all zeros")]
    ZeroVector(usize),
    #[error("no blocks to fuse")]
    NoBlocks,
    #[error("training data holds a single class")]
    SingleClass,
    #[error("training set is empty")]
    EmptyTraining,
    #[error("{features} feature rows but {labels} labels")]
    LabelCountMismatch { features: usize, labels: usize },
    #[error("regularization strength must be positive, got {0}")]
    InvalidC(f64),
}

/// L2-normalized blocks `[original, object, part 1 .. part K]`, concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub values: Vec<f32>,
    pub block_len: usize,
}

impl FusedFeature {
    pub fn blocks(&self) -> usize {
        self.values.len() / self.block_len
    }
}

pub fn fuse_features(blocks: &[Descriptor]) -> Result<FusedFeature, ClassifyError> {
    let block_len = blocks.first().ok_or(ClassifyError::NoBlocks)?.len();
    let mut values = Vec::with_capacity(block_len * blocks.len());
    for (index, b) in blocks.iter().enumerate() {
        if b.len() != block_len {
            return Err(ClassifyError::LengthMismatch {
                index,
                len: b.len(),
                expected: block_len,
            });
        }
        let unit = tensor::l2_normalize(b).map_err(|e| match e {
            TensorError::ZeroVector => ClassifyError::ZeroVector(index),
            _ => unreachable!("l2_normalize only fails on zero vectors"),
        })?;
        values.extend_from_slice(&unit.0);
    }
    Ok(FusedFeature { values, block_len })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Sorted class labels.
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub c_reg: f64,
}

impl LinearModel {
    pub fn feature_len(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[f32]) -> Result<Vec<f64>, ClassifyError> {
        if x.len() != self.feature_len() {
            return Err(ClassifyError::LengthMismatch {
                index: 0,
                len: x.len(),
                expected: self.feature_len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }
}

/// Highest-scoring class; ties go to the smallest label.
pub fn predict<'m>(model: &'m LinearModel, x: &[f32]) -> Result<&'m str, ClassifyError> {
    let scores = model.scores(x)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(&model.classes[best])
}

fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum()
}

/// One binary problem's solution and convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alphas: Vec<f64>,
    /// Dual objective after each epoch.
    pub dual_trace: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_epochs: usize,
    pub gap_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_epochs: MAX_EPOCHS,
            gap_tolerance: GAP_TOLERANCE,
        }
    }
}

pub fn train_binary(x: &[Vec<f32>], y: &[f64], c: f64, seed: u64) -> BinaryFit {
    train_binary_with(x, y, c, seed, SolverOptions::default())
}

/// Solves `min 0.5 |w~|^2 + C sum max(0, 1 - y_i w~ . x~_i)` with `x~ = [x, 1]`.
pub fn train_binary_with(
    x: &[Vec<f32>],
    y: &[f64],
    c: f64,
    seed: u64,
    opts: SolverOptions,
) -> BinaryFit {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let q: Vec<f64> = x
        .iter()
        .map(|xi| xi.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() + 1.0)
        .collect();
    let mut alphas = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dual_trace = Vec::new();
    let mut epochs = 0;

    let objectives = |w: &[f64], b: f64, alphas: &[f64]| {
        let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
        let hinge: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, &yi)| (1.0 - yi * (dot(w, xi) + b)).max(0.0))
            .sum();
        (reg + c * hinge, alphas.iter().sum::<f64>() - reg)
    };

    let (mut primal, mut dual) = objectives(&w, b, &alphas);
    while epochs < opts.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let g = y[i] * (dot(&w, &x[i]) + b) - 1.0;
            let a = alphas[i];
            let pg = if a <= 0.0 {
                g.min(0.0)
            } else if a >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg.abs() <= 1e-12 {
                continue;
            }
            let na = (a - g / q[i]).clamp(0.0, c);
            let step = (na - a) * y[i];
            for (wj, &xj) in w.iter_mut().zip(&x[i]) {
                *wj += step * f64::from(xj);
            }
            b += step;
            alphas[i] = na;
        }
        (primal, dual) = objectives(&w, b, &alphas);
        dual_trace.push(dual);
        if (primal - dual) / primal.abs().max(1.0) <= opts.gap_tolerance {
            break;
        }
    }
    BinaryFit {
        weights: w,
        bias: b,
        alphas,
        dual_trace,
        primal,
        dual,
        epochs,
    }
}

pub fn train_linear_svm(
    x: &[Vec<f32>],
    labels: &[String],
    c_reg: f64,
    seed: u64,
) -> Result<LinearModel, ClassifyError> {
    if x.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    if x.len() != labels.len() {
        return Err(ClassifyError::LabelCountMismatch {
            features: x.len(),
            labels: labels.len(),
        });
    }
    if !(c_reg > 0.0 && c_reg.is_finite()) {
        return Err(ClassifyError::InvalidC(c_reg));
    }
    let expected = x[0].len();
    if let Some(index) = x.iter().position(|r| r.len() != expected) {
        return Err(ClassifyError::LengthMismatch {
            index,
            len: x[index].len(),
            expected,
        });
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ClassifyError::SingleClass);
    }

    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    for (ci, class) in classes.iter().enumerate() {
        let y: Vec<f64> = labels
            .iter()
            .map(|l| if l == class { 1.0 } else { -1.0 })
            .collect();
        let fit = train_binary(x, &y, c_reg, crate::kmeans::derive_seed(seed, ci as u64));
        weights.push(fit.weights);
        biases.push(fit.bias);
    }
    Ok(LinearModel {
        classes,
        weights,
        biases,
        c_reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn separable(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < n {
            let p = [
                rng.random_range(-1.0f32..1.0),
                rng.random_range(-1.0f32..1.0),
            ];
            let margin = p[0] + 0.5 * p[1] - 0.1;
            if margin.abs() < 0.1 {
                continue;
            }
            x.push(p.to_vec());
            y.push(if margin > 0.0 { "pos" } else { "neg" }.to_string());
        }
        (x, y)
    }

    #[test]
    fn fusion_lengths() {
        let blocks: Vec<Descriptor> = (0..6)
            .map(|i| Descriptor(vec![i as f32 + 1.0; 512]))
            .collect();
        let f = fuse_features(&blocks).unwrap();
        assert_eq!(f.values.len(), 3072);
        assert_eq!(f.blocks(), 6);
        let norm: f64 = f
            .values
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 6f64.sqrt()).abs() < 1e-5);

        let one = fuse_features(&[Descriptor(vec![3.0, 4.0])]).unwrap();
        assert!((one.values[0] - 0.6).abs() < 1e-7 && (one.values[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn fusion_errors() {
        assert_eq!(fuse_features(&[]), Err(ClassifyError::NoBlocks));
        assert_eq!(
            fuse_features(&[Descriptor(vec![1.0]), Descriptor(vec![0.0])]),
            Err(ClassifyError::ZeroVector(1))
        );
        assert!(matches!(
            fuse_features(&[Descriptor(vec![1.0]), Descriptor(vec![1.0, 2.0])]),
            Err(ClassifyError::LengthMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn separable_fit() {
        let (x, y) = separable(200, 3);
        let model = train_linear_svm(&x, &y, 10.0, 0).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(predict(&model, xi).unwrap(), yi);
        }
    }

    #[test]
    fn contradictory_pair() {
        let x = vec![vec![1.0f32, 2.0], vec![1.0, 2.0]];
        let fit = train_binary(&x, &[1.0, -1.0], 1.0, 0);
        assert!(fit.primal <= 2.0 + 1e-9);
        assert!(fit.primal - fit.dual <= GAP_TOLERANCE * fit.primal.max(1.0));
    }

    #[test]
    fn dual_is_monotone() {
        let (x, y) = separable(100, 9);
        let yy: Vec<f64> = y
            .iter()
            .map(|l| if l == "pos" { 1.0 } else { -1.0 })
            .collect();
        let fit = train_binary(&x, &yy, 1.0, 4);
        assert!(fit.dual_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(fit.dual <= fit.primal + 1e-9);
    }

    #[test]
    fn primal_close_to_long_run() {
        let (x, y) = separable(80, 12);
        let yy: Vec<f64> = y
            .iter()
            .map(|l| if l == "pos" { 1.0 } else { -1.0 })
            .collect();
        let fit = train_binary(&x, &yy, 1.0, 1);
        let reference = train_binary_with(
            &x,
            &yy,
            1.0,
            1,
            SolverOptions {
                max_epochs: 20_000,
                gap_tolerance: 1e-10,
            },
        );
        assert!((fit.primal - reference.primal).abs() <= 1e-3 * reference.primal);
    }

    #[test]
    fn training_errors() {
        let x = vec![vec![1.0f32], vec![2.0]];
        assert_eq!(
            train_linear_svm(&x, &["a".into(), "a".into()], 1.0, 0),
            Err(ClassifyError::SingleClass)
        );
        assert_eq!(
            train_linear_svm(&[], &[], 1.0, 0),
            Err(ClassifyError::EmptyTraining)
        );
        assert!(matches!(
            train_linear_svm(&x, &["a".into()], 1.0, 0),
            Err(ClassifyError::LabelCountMismatch { .. })
        ));
    }

    #[test]
    fn predict_fixture_and_ties() {
        let model = LinearModel {
            classes: vec!["+".into(), "-".into()],
            weights: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            biases: vec![0.0, 0.0],
            c_reg: 1.0,
        };
        assert_eq!(predict(&model, &[2.0, 0.0]).unwrap(), "+");
        assert_eq!(predict(&model, &[-2.0, 0.0]).unwrap(), "-");
        assert_eq!(predict(&model, &[0.0, 5.0]).unwrap(), "+");
        assert!(matches!(
            predict(&model, &[1.0]),
            Err(ClassifyError::LengthMismatch { .. })
        ));

        let shifted = LinearModel {
            biases: vec![7.5, 7.5],
            ..model.clone()
        };
        for x in [[2.0, 0.0], [-1.0, 3.0], [0.0, 0.0]] {
            assert_eq!(predict(&model, &x).unwrap(), predict(&shifted, &x).unwrap());
        }
    }
}
