//! Cross-image part alignment: masked GAP descriptors grouped by spectral
//! clustering on a cosine affinity graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::{self, EigenError};
use crate::kmeans::{self, KMeansError};
use crate::tensor::{self, Descriptor, Mask, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("mask selects no feature cell")]
    EmptyMask,
    #[error("need at least {k} rows, got {rows}")]
    TooFewRows { k: usize, rows: usize },
    #[error("row {0} has zero affinity to every other row")]
    DegenerateAffinity(usize),
    #[error("descriptor {row} has length {len}, expected {expected}")]
    LengthMismatch {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartRow {
    pub image: String,
    pub part: usize,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartDescriptorTable {
    pub rows: Vec<PartRow>,
    pub feature_dims: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub labels: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl AlignmentResult {
    fn from_labels(labels: Vec<usize>, k: usize) -> Self {
        let mut groups = vec![Vec::new(); k];
        for (row, &l) in labels.iter().enumerate() {
            groups[l].push(row);
        }
        Self { labels, groups }
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}

/// Shrinks an image-resolution mask onto a `height x width` feature grid.
/// A cell is set when at least half of the pixels it covers are set; if that
/// leaves nothing, the best-covered cells are kept so thin masks survive.
pub fn downsample_mask(mask: &Mask, height: usize, width: usize) -> Mask {
    let span = |i: usize, cells: usize, pixels: usize| {
        let start = i * pixels / cells;
        let end = ((i + 1) * pixels / cells).max(start + 1).min(pixels);
        (start.min(pixels - 1), end)
    };
    let mut coverage = vec![0.0f64; height * width];
    for r in 0..height {
        let (y0, y1) = span(r, height, mask.height);
        for c in 0..width {
            let (x0, x1) = span(c, width, mask.width);
            let mut on = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    on += usize::from(mask.get(y, x));
                }
            }
            coverage[r * width + c] = on as f64 / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    let mut bits: Vec<bool> = coverage.iter().map(|&v| v >= 0.5).collect();
    if !bits.iter().any(|&b| b) {
        let best = coverage.iter().copied().fold(0.0, f64::max);
        if best > 0.0 {
            bits = coverage.iter().map(|&v| v == best).collect();
        }
    }
    Mask::new(height, width, bits)
}

/// GAP of the features under a mask already at feature resolution.
pub fn part_descriptor(features: &Tensor, mask: &Mask) -> Result<Descriptor, AlignError> {
    if mask.count() == 0 {
        return Err(AlignError::EmptyMask);
    }
    let masked = tensor::masked_multiply(features, mask)?;
    Ok(tensor::global_average_pool(&masked)?)
}

/// Symmetric normalized Laplacian `I - D^-1/2 W D^-1/2` of the affinity
/// `W_pq = max(0, cos(p, q))` with a zero diagonal; row-major `n x n`.
pub fn normalized_laplacian(descriptors: &[Descriptor]) -> Result<Vec<f64>, AlignError> {
    let n = descriptors.len();
    let expected = descriptors.first().map_or(0, Descriptor::len);
    let mut unit = Vec::with_capacity(n);
    for (row, d) in descriptors.iter().enumerate() {
        if d.len() != expected {
            return Err(AlignError::LengthMismatch {
                row,
                len: d.len(),
                expected,
            });
        }
        let u = tensor::l2_normalize(d)?;
        unit.push(u.0.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
    }
    let mut w = vec![0.0; n * n];
    for p in 0..n {
        for q in p + 1..n {
            let cos: f64 = unit[p].iter().zip(&unit[q]).map(|(a, b)| a * b).sum();
            let a = cos.max(0.0);
            w[p * n + q] = a;
            w[q * n + p] = a;
        }
    }
    let mut inv_sqrt = Vec::with_capacity(n);
    for p in 0..n {
        let degree: f64 = w[p * n..(p + 1) * n].iter().sum();
        if degree <= 0.0 {
            return Err(AlignError::DegenerateAffinity(p));
        }
        inv_sqrt.push(1.0 / degree.sqrt());
    }
    let mut lap = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            let id = if p == q { 1.0 } else { 0.0 };
            lap[p * n + q] = id - inv_sqrt[p] * w[p * n + q] * inv_sqrt[q];
        }
    }
    Ok(lap)
}

pub fn spectral_cluster(
    table: &PartDescriptorTable,
    k: usize,
    seed: u64,
) -> Result<AlignmentResult, AlignError> {
    let descriptors: Vec<Descriptor> = table.rows.iter().map(|r| r.descriptor.clone()).collect();
    spectral_cluster_descriptors(&descriptors, k, seed)
}

pub fn spectral_cluster_descriptors(
    descriptors: &[Descriptor],
    k: usize,
    seed: u64,
) -> Result<AlignmentResult, AlignError> {
    let n = descriptors.len();
    if k == 0 || n < k {
        return Err(AlignError::TooFewRows { k, rows: n });
    }
    if k == 1 {
        return Ok(AlignmentResult::from_labels(vec![0; n], 1));
    }
    let lap = normalized_laplacian(descriptors)?;
    let eig = eigen::sym_eigen(&lap, n)?;

    let mut embedding = vec![0.0; n * k];
    for i in 0..n {
        let row = &mut embedding[i * k..(i + 1) * k];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = eig.vectors[i * n + j];
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let fit = kmeans::kmeans_restarts(&embedding, k, k, seed, 5)?;
    Ok(AlignmentResult::from_labels(
        canonical_labels(&fit.labels),
        k,
    ))
}

/// Renumbers labels by order of first appearance.
fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Mapping from clustered groups back to per-image part slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAssignment {
    /// Part index each group stands for (majority of its members).
    pub group_part: Vec<usize>,
    /// Per image, the representative row of each group, if any.
    pub images: BTreeMap<String, Vec<Option<usize>>>,
}

pub fn assign_slots(
    table: &PartDescriptorTable,
    result: &AlignmentResult,
) -> Result<SlotAssignment, AlignError> {
    let k = result.groups.len();
    let max_part = table.rows.iter().map(|r| r.part).max().unwrap_or(0);
    let mut group_part = Vec::with_capacity(k);
    let mut images: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for r in &table.rows {
        images
            .entry(r.image.clone())
            .or_insert_with(|| vec![None; k]);
    }

    for (g, members) in result.groups.iter().enumerate() {
        let mut votes = vec![0usize; max_part + 1];
        for &row in members {
            votes[table.rows[row].part] += 1;
        }
        let best = votes
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        group_part.push(best.0);

        if members.is_empty() {
            continue;
        }
        let dim = table.rows[members[0]].descriptor.len();
        let mut centroid = vec![0.0f64; dim];
        let mut units = BTreeMap::new();
        for &row in members {
            let u = tensor::l2_normalize(&table.rows[row].descriptor)?;
            for (c, v) in centroid.iter_mut().zip(&u.0) {
                *c += f64::from(*v);
            }
            units.insert(row, u);
        }
        for &row in members {
            let cos: f64 = units[&row]
                .0
                .iter()
                .zip(&centroid)
                .map(|(a, b)| f64::from(*a) * b)
                .sum();
            let slot = &mut images.get_mut(&table.rows[row].image).unwrap()[g];
            let better = match *slot {
                None => true,
                Some(prev) => {
                    let prev_cos: f64 = units[&prev]
                        .0
                        .iter()
                        .zip(&centroid)
                        .map(|(a, b)| f64::from(*a) * b)
                        .sum();
                    cos > prev_cos
                }
            };
            if better {
                *slot = Some(row);
            }
        }
    }
    Ok(SlotAssignment { group_part, images })
}
