//! Seeded k-means (k-means++ initialization, Lloyd iterations).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("need at least {k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("point buffer length {len} is not a multiple of dimension {dim}")]
    BadDimension { len: usize, dim: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once no center moves farther than this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    /// `k * dim` values, row-major.
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }
}

/// Clusters `points` (flat, `dim` values per point) into `k` groups.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<KMeans, KMeansError> {
    kmeans_with(points, dim, k, seed, KMeansConfig::default())
}

pub fn kmeans_with(
    points: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<KMeans, KMeansError> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(KMeansError::BadDimension {
            len: points.len(),
            dim,
        });
    }
    if k == 0 {
        return Err(KMeansError::ZeroClusters);
    }
    let n = points.len() / dim;
    if n < k {
        return Err(KMeansError::TooFewPoints { k, points: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, dim, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        trace.push(assign(points, dim, &centers, &mut labels));
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;
        let shift = update(points, dim, &labels, &mut centers);
        if shift < cfg.tol {
            trace.push(assign(points, dim, &centers, &mut labels));
            break;
        }
    }

    Ok(KMeans {
        dim,
        inertia: *trace.last().unwrap(),
        centers,
        labels,
        trace,
        iterations,
    })
}

/// Best of `restarts` runs by final inertia; the first wins ties.
pub fn kmeans_restarts(
    points: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeans, KMeansError> {
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans(points, dim, k, derive_seed(seed, r as u64))?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// SplitMix64 step, used to spread restart seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centers[..dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // guard against landing on a zero-weight tail from rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap();
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = &points[pick * dim..(pick + 1) * dim];
        centers.extend_from_slice(c);
        for (slot, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *slot = slot.min(sq_dist(p, c));
        }
    }
    centers
}

fn assign(points: &[f64], dim: usize, centers: &[f64], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (label, p) in labels.iter_mut().zip(points.chunks_exact(dim)) {
        let (best, d) = centers
            .chunks_exact(dim)
            .enumerate()
            .map(|(c, center)| (c, sq_dist(p, center)))
            .fold(
                (0, f64::INFINITY),
                |acc, cur| if cur.1 < acc.1 { cur } else { acc },
            );
        *label = best;
        inertia += d;
    }
    inertia
}

/// Moves every center to its members' mean; empty clusters stay put.
/// Returns the largest center displacement.
fn update(points: &[f64], dim: usize, labels: &[usize], centers: &mut [f64]) -> f64 {
    let k = centers.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (&l, p) in labels.iter().zip(points.chunks_exact(dim)) {
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut shift: f64 = 0.0;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let center = &mut centers[c * dim..(c + 1) * dim];
        let mut moved = 0.0;
        for (v, s) in center.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
            let nv = s / counts[c] as f64;
            moved += (nv - *v) * (nv - *v);
            *v = nv;
        }
        shift = shift.max(moved.sqrt());
    }
    shift
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (g, c) in [[0.0, 0.0, 0.0], [10.0, 10.0, 10.0]].iter().enumerate() {
            for _ in 0..40 {
                for v in c {
                    pts.push(v + rng.random::<f64>() - 0.5);
                }
                truth.push(g);
            }
        }
        (pts, truth)
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = [0.0, 0.0, 0.0, 2.0, 4.0, 6.0, 4.0, 2.0, 0.0];
        let r = kmeans(&pts, 3, 1, 7).unwrap();
        assert_eq!(r.center(0), &[2.0, 2.0, 2.0]);
        assert!(r.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn separated_blobs() {
        let (pts, truth) = blobs(3);
        let r = kmeans(&pts, 3, 2, 11).unwrap();
        let first = r.labels[0];
        for (l, t) in r.labels.iter().zip(&truth) {
            assert_eq!(*l == first, *t == 0);
        }
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            kmeans(&[1.0, 2.0, 3.0], 3, 2, 0),
            Err(KMeansError::TooFewPoints { k: 2, points: 1 })
        );
        assert_eq!(kmeans(&[1.0], 1, 0, 0), Err(KMeansError::ZeroClusters));
    }

    #[test]
    fn deterministic_and_monotone() {
        let (pts, _) = blobs(5);
        for seed in 0..10 {
            let a = kmeans(&pts, 3, 4, seed).unwrap();
            let b = kmeans(&pts, 3, 4, seed).unwrap();
            assert_eq!(a, b);
            for w in a.trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", a.trace);
            }
        }
    }

    #[test]
    fn duplicate_points_fill_all_centers() {
        let pts = vec![1.0; 10];
        let r = kmeans(&pts, 2, 3, 0).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.k(), 3);
    }

    #[test]
    fn restarts_pick_lowest_inertia() {
        let (pts, _) = blobs(9);
        let best = kmeans_restarts(&pts, 3, 3, 1, 5).unwrap();
        for r in 0..5 {
            let run = kmeans(&pts, 3, 3, derive_seed(1, r)).unwrap();
            assert!(best.inertia <= run.inertia);
        }
    }
}
