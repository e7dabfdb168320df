//! Synthetic activation stacks with planted co-activated part blobs.
//!
//! Four rectangular blobs are laid out in a touching 2 x 2 arrangement so
//! that, like the parts of one object, they form a single connected region.
//! Each blob is switched on in a fixed fraction of the maps. Background
//! positions only fire through sparse random noise and a few fixed
//! distractor cells whose frequency stays below the mining threshold.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::localize::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub maps: usize,
    pub grid: usize,
    pub image_size: usize,
    /// Range of the fraction of maps in which a group fires. The range is
    /// split into one stratum per group so groups differ in strength.
    pub group_freq: (f64, f64),
    /// Probability that a blob cell fires when its group is on.
    pub cell_on: f64,
    pub blob_side: (usize, usize),
    pub noise_cells_per_map: usize,
    pub distractors: usize,
    pub distractor_freq: (f64, f64),
    /// Probability of a weak sub-threshold activation at any position.
    pub clutter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            maps: 1024,
            grid: 28,
            image_size: 448,
            group_freq: (0.12, 0.4),
            cell_on: 0.9,
            blob_side: (5, 7),
            noise_cells_per_map: 3,
            distractors: 3,
            distractor_freq: (0.02, 0.04),
            clutter: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedScene {
    pub stack: Tensor,
    /// Blob rectangles on the feature grid.
    pub blobs: Vec<BBox>,
    /// Number of maps in which each group fires.
    pub group_maps: Vec<usize>,
    /// Blob centers in image pixels (corner-aligned grid-to-image mapping).
    pub centers: Vec<(f64, f64)>,
    pub distractor_cells: Vec<(usize, usize)>,
    /// RGB picture of the scene, values in `[0, 1]`.
    pub image: Tensor,
}

impl PlantedScene {
    /// Highest per-position activation count outside the blobs, as computed
    /// from the strongly active cells (value >= 1).
    pub fn background_max_count(&self) -> usize {
        let (c, h, w) = self.stack.chw().unwrap();
        let mut counts = vec![0usize; h * w];
        for ch in 0..c {
            for (i, &v) in self.stack.channel(ch).iter().enumerate() {
                if v >= 1.0 {
                    counts[i] += 1;
                }
            }
        }
        (0..h * w)
            .filter(|&i| !self.blobs.iter().any(|b| b.contains(i % w, i / w)))
            .map(|i| counts[i])
            .max()
            .unwrap_or(0)
    }

    /// Stand-in conv-stage features on the feature grid: channel `b` lights
    /// blob `b`, channel `blobs + class` lights the whole object, the rest is
    /// weak noise.
    pub fn conv_features(&self, channels: usize, class: usize, seed: u64) -> Tensor {
        let (_, g, _) = self.stack.chw().expect("rank-3 stack");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f32> = (0..channels * g * g)
            .map(|_| rng.random_range(0.0..0.1))
            .collect();
        let mut light = |ch: usize, b: &BBox, rng: &mut ChaCha8Rng| {
            if ch >= channels {
                return;
            }
            for y in b.y..b.y + b.height {
                for x in b.x..b.x + b.width {
                    data[ch * g * g + y * g + x] = rng.random_range(0.8..1.2);
                }
            }
        };
        for (i, b) in self.blobs.iter().enumerate() {
            light(i, b, &mut rng);
            light(self.blobs.len() + class, b, &mut rng);
        }
        Tensor::new(vec![channels, g, g], data).expect("consistent conv dims")
    }
}

pub fn planted_scene(cfg: &SynthConfig, seed: u64) -> PlantedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = cfg.grid;
    let side = |rng: &mut ChaCha8Rng| rng.random_range(cfg.blob_side.0..=cfg.blob_side.1);

    // 2 x 2 layout: column widths and row heights, each blob optionally
    // nudged by one cell along the shared edge so the layout is irregular
    let cols = [side(&mut rng), side(&mut rng)];
    let rows = [side(&mut rng), side(&mut rng)];
    let span_w = cols[0] + cols[1] + 1;
    let span_h = rows[0] + rows[1] + 1;
    let ox = rng.random_range(2..g - span_w - 1);
    let oy = rng.random_range(2..g - span_h - 1);
    let down = rng.random_range(0..=1usize);
    let right = rng.random_range(0..=1usize);
    let blob = |x, y, width, height| BBox {
        x,
        y,
        width,
        height,
    };
    let blobs = vec![
        blob(ox, oy, cols[0], rows[0]),
        blob(ox + cols[0], oy + down, cols[1], rows[0]),
        blob(ox + right, oy + rows[0], cols[0], rows[1]),
        blob(ox + cols[0] + right, oy + rows[0] + down, cols[1], rows[1]),
    ];
    let object = BBox {
        x: ox,
        y: oy,
        width: span_w,
        height: span_h,
    };

    let mut distractor_cells = Vec::new();
    while distractor_cells.len() < cfg.distractors {
        let (x, y) = (rng.random_range(0..g), rng.random_range(0..g));
        let near_object = x + 2 >= object.x
            && x <= object.x + object.width + 1
            && y + 2 >= object.y
            && y <= object.y + object.height + 1;
        if !near_object && !distractor_cells.contains(&(x, y)) {
            distractor_cells.push((x, y));
        }
    }

    let n = cfg.maps;
    let plane = g * g;
    let mut data = vec![0.0f32; n * plane];
    for v in data.iter_mut() {
        if rng.random::<f64>() < cfg.clutter {
            *v = rng.random_range(0.0..0.2);
        }
    }

    let mut fire = |maps: &[usize], cells: &[(usize, usize)], p: f64, rng: &mut ChaCha8Rng| {
        for &m in maps {
            for &(x, y) in cells {
                if rng.random::<f64>() < p {
                    data[m * plane + y * g + x] = rng.random_range(1.0..3.0);
                }
            }
        }
    };

    let mut strata: Vec<usize> = (0..blobs.len()).collect();
    strata.shuffle(&mut rng);
    let stratum = (cfg.group_freq.1 - cfg.group_freq.0) / blobs.len() as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut group_maps = Vec::with_capacity(blobs.len());
    for (b, &level) in blobs.iter().zip(&strata) {
        let freq = cfg.group_freq.0 + stratum * (level as f64 + rng.random_range(0.25..0.75));
        let count = (freq * n as f64).round() as usize;
        order.shuffle(&mut rng);
        let cells: Vec<(usize, usize)> = (b.y..b.y + b.height)
            .flat_map(|y| (b.x..b.x + b.width).map(move |x| (x, y)))
            .collect();
        fire(&order[..count], &cells, cfg.cell_on, &mut rng);
        group_maps.push(count);
    }
    for &cell in &distractor_cells {
        let freq = rng.random_range(cfg.distractor_freq.0..=cfg.distractor_freq.1);
        let count = (freq * n as f64).round() as usize;
        order.shuffle(&mut rng);
        fire(&order[..count], &[cell], 1.0, &mut rng);
    }
    for m in 0..n {
        for _ in 0..cfg.noise_cells_per_map {
            let cell = (rng.random_range(0..g), rng.random_range(0..g));
            fire(&[m], &[cell], 1.0, &mut rng);
        }
    }

    let scale = (cfg.image_size - 1) as f64 / (g - 1) as f64;
    let centers = blobs
        .iter()
        .map(|b| {
            (
                (b.x as f64 + (b.width - 1) as f64 / 2.0) * scale,
                (b.y as f64 + (b.height - 1) as f64 / 2.0) * scale,
            )
        })
        .collect();

    PlantedScene {
        stack: Tensor::new(vec![n, g, g], data).expect("consistent synthetic dims"),
        image: scene_image(&blobs, g, cfg.image_size),
        blobs,
        group_maps,
        centers,
        distractor_cells,
    }
}

fn scene_image(blobs: &[BBox], grid: usize, size: usize) -> Tensor {
    const TINTS: [[f32; 3]; 4] = [
        [0.85, 0.45, 0.25],
        [0.35, 0.55, 0.85],
        [0.45, 0.75, 0.35],
        [0.8, 0.7, 0.3],
    ];
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    let cell = size as f64 / grid as f64;
    for y in 0..size {
        for x in 0..size {
            let gx = (x as f64 / cell) as usize;
            let gy = (y as f64 / cell) as usize;
            let shade = 0.15 + 0.2 * (x + y) as f32 / (2 * size) as f32;
            let mut px = [shade, shade * 1.1, shade * 1.2];
            if let Some(i) = blobs.iter().position(|b| b.contains(gx, gy)) {
                px = TINTS[i % TINTS.len()];
            }
            for (ch, v) in px.iter().enumerate() {
                data[ch * plane + y * size + x] = *v;
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("consistent image dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_properties() {
        let cfg = SynthConfig::default();
        let s = planted_scene(&cfg, 5);
        assert_eq!(s.stack.dims(), &[1024, 28, 28]);
        assert_eq!(s.blobs.len(), 4);
        assert!(s.group_maps.iter().all(|&m| m as f64 >= 0.12 * 1024.0));
        assert!((s.background_max_count() as f64) < 0.05 * 1024.0);
        assert!(s.stack.is_non_negative());
        assert_eq!(s.image.dims(), &[3, 448, 448]);
        // blobs never overlap
        for (i, a) in s.blobs.iter().enumerate() {
            for b in &s.blobs[i + 1..] {
                let overlap =
                    (a.x..a.x + a.width).any(|x| (a.y..a.y + a.height).any(|y| b.contains(x, y)));
                assert!(!overlap, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn conv_features_light_blobs() {
        let s = planted_scene(
            &SynthConfig {
                maps: 16,
                ..SynthConfig::default()
            },
            2,
        );
        let conv = s.conv_features(8, 1, 0);
        assert_eq!(conv.dims(), &[8, 28, 28]);
        let b = s.blobs[2];
        assert!(conv.channel(2)[b.y * 28 + b.x] >= 0.8);
        assert!(conv.channel(5)[b.y * 28 + b.x] >= 0.8);
        assert!(conv.channel(4)[b.y * 28 + b.x] < 0.1);
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            maps: 64,
            ..SynthConfig::default()
        };
        let a = planted_scene(&cfg, 9);
        let b = planted_scene(&cfg, 9);
        assert_eq!(a.stack, b.stack);
        assert_eq!(a.blobs, b.blobs);
    }
}
