//! Part localization from mined patterns: support map, component filtering,
//! clustering of `(x, y, S)` samples and square part geometry.
//!
//! Coordinates follow image conventions: `x` is the column, `y` the row,
//! origin at the top-left pixel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{self, Connectivity};
use crate::kmeans::{self, KMeansError};
use crate::mining::PatternSet;
use crate::tensor::{self, Mask, Tensor, TensorError};
use crate::transactions::TransactionDb;

/// Side of the square each cropped part is amplified to.
pub const PART_CROP_SIZE: usize = 224;
/// k-means restarts used by [`find_part_centers`].
pub const CENTER_RESTARTS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizeError {
    #[error("support map has no positive value")]
    EmptyMap,
    #[error("mask selects no pixel")]
    EmptyMask,
    #[error("need at least {k} positive pixels, found {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("support map is at {actual:?} scale, expected {expected:?}")]
    WrongScale { expected: Scale, actual: Scale },
    #[error("lambda {0} not in (0, 1]")]
    InvalidLambda(f64),
    #[error("binarization fraction {0} not in (0, 1)")]
    InvalidFraction(f64),
    #[error("patterns reference item {0} outside the {1}-cell grid")]
    ItemOutOfGrid(u32, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    KMeans(KMeansError),
}

impl From<KMeansError> for LocalizeError {
    fn from(e: KMeansError) -> Self {
        match e {
            KMeansError::TooFewPoints { k, points } => Self::TooFewPoints { k, points },
            other => Self::KMeans(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    FeatureGrid,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub scale: Scale,
    pub source_dims: (usize, usize),
    /// Set when no pattern was mined and the map is all zero.
    pub empty_patterns: bool,
}

impl SupportMap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn positive(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Tight bounding box of the positive pixels.
    pub fn positive_box(&self) -> Option<BBox> {
        Mask::new(self.height, self.width, self.positive())
            .bounding_box()
            .map(BBox::from_inclusive)
    }

    fn require(&self, scale: Scale) -> Result<(), LocalizeError> {
        if self.scale != scale {
            return Err(LocalizeError::WrongScale {
                expected: scale,
                actual: self.scale,
            });
        }
        Ok(())
    }
}

/// Axis-aligned box in pixels, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl From<[usize; 4]> for BBox {
    fn from(a: [usize; 4]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            width: a[2],
            height: a[3],
        }
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.width, b.height]
    }
}

impl BBox {
    fn from_inclusive((r0, c0, r1, c1): (usize, usize, usize, usize)) -> Self {
        Self {
            x: c0,
            y: r0,
            width: c1 - c0 + 1,
            height: r1 - r0 + 1,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn mask(&self, height: usize, width: usize) -> Mask {
        let mut bits = vec![false; height * width];
        for y in self.y..(self.y + self.height).min(height) {
            for x in self.x..(self.x + self.width).min(width) {
                bits[y * width + x] = true;
            }
        }
        Mask::new(height, width, bits)
    }
}

/// Object box, `K` square parts of side `side` and their centers.
#[derive(Debug, Clone, PartialEq)]
pub struct PartLayout {
    pub image_dims: (usize, usize),
    pub object_box: BBox,
    pub centers: Vec<(usize, usize)>,
    pub side: usize,
    /// Each part square clamped to the image.
    pub part_boxes: Vec<BBox>,
}

impl PartLayout {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Image-size binary mask of part `i`.
    pub fn mask(&self, i: usize) -> Mask {
        let (h, w) = self.image_dims;
        self.part_boxes[i].mask(h, w)
    }

    pub fn masks(&self) -> Vec<Mask> {
        (0..self.k()).map(|i| self.mask(i)).collect()
    }
}

/// `S(x, y)` is the number of transactions containing the item at `(x, y)`
/// when that item belongs to a mined pattern, else zero.
pub fn build_support_map(
    patterns: &PatternSet,
    db: &TransactionDb,
) -> Result<SupportMap, LocalizeError> {
    let (h, w) = db.grid;
    let counts = db.item_counts();
    let mut values = vec![0.0f32; h * w];
    for item in patterns.items() {
        let idx = item as usize;
        if idx >= values.len() {
            return Err(LocalizeError::ItemOutOfGrid(item, values.len()));
        }
        values[idx] = counts[idx] as f32;
    }
    Ok(SupportMap {
        height: h,
        width: w,
        values,
        scale: Scale::FeatureGrid,
        source_dims: (h, w),
        empty_patterns: patterns.is_empty(),
    })
}

pub fn upsample_support_map(
    s: &SupportMap,
    image_h: usize,
    image_w: usize,
) -> Result<SupportMap, LocalizeError> {
    s.require(Scale::FeatureGrid)?;
    let grid = Tensor::new(vec![s.height, s.width], s.values.clone())?;
    let up = tensor::bilinear_resize(&grid, image_h, image_w)?;
    Ok(SupportMap {
        height: image_h,
        width: image_w,
        values: up.into_data(),
        scale: Scale::Image,
        source_dims: s.source_dims,
        empty_patterns: s.empty_patterns,
    })
}

/// Zeroes every positive component except the largest.
pub fn extract_largest_component(
    s: &SupportMap,
    conn: Connectivity,
) -> Result<SupportMap, LocalizeError> {
    let comps = components::label(&s.positive(), s.height, s.width, conn);
    let keep = comps.largest().ok_or(LocalizeError::EmptyMap)?;
    let values = s
        .values
        .iter()
        .zip(&comps.labels)
        .map(|(&v, &l)| if l == Some(keep) { v } else { 0.0 })
        .collect();
    Ok(SupportMap {
        values,
        ..s.clone()
    })
}

/// Clusters the positive pixels as `[x, y, S]` samples, each dimension
/// rescaled to `[0, 1]` (constant dimensions dropped), and returns the
/// cluster centers' `(x, y)` in pixel units, ordered by cluster index.
pub fn find_part_centers(
    s: &SupportMap,
    k: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, LocalizeError> {
    s.require(Scale::Image)?;
    let mut raw: Vec<[f64; 3]> = Vec::new();
    for y in 0..s.height {
        for x in 0..s.width {
            let v = s.get(x, y);
            if v > 0.0 {
                raw.push([x as f64, y as f64, f64::from(v)]);
            }
        }
    }
    if raw.len() < k || k == 0 {
        return Err(LocalizeError::TooFewPoints {
            k,
            points: raw.len(),
        });
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &raw {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let kept: Vec<usize> = (0..3).filter(|&d| hi[d] > lo[d]).collect();
    if kept.is_empty() {
        // every sample identical
        return Ok(vec![(raw[0][0], raw[0][1]); k]);
    }
    let dim = kept.len();
    let flat: Vec<f64> = raw
        .iter()
        .flat_map(|p| kept.iter().map(move |&d| (p[d] - lo[d]) / (hi[d] - lo[d])))
        .collect();
    let fit = kmeans::kmeans_restarts(&flat, dim, k, seed, CENTER_RESTARTS)?;

    Ok((0..k)
        .map(|c| {
            let center = fit.center(c);
            let coord = |d: usize| match kept.iter().position(|&kd| kd == d) {
                Some(j) => lo[d] + center[j] * (hi[d] - lo[d]),
                None => lo[d],
            };
            (coord(0), coord(1))
        })
        .collect())
}

/// Side length `round(lambda * min(w_o, h_o))`, at least one pixel.
pub fn part_side(object_w: usize, object_h: usize, lambda: f64) -> usize {
    ((lambda * object_w.min(object_h) as f64).round() as usize).max(1)
}

/// Square of half-extent `side / 2` around `center`, clamped to the image.
pub fn part_box(center: (usize, usize), side: usize, image_dims: (usize, usize)) -> BBox {
    let (h, w) = image_dims;
    // |dx| <= side/2 over integer offsets
    let half = side / 2;
    let x0 = center.0.saturating_sub(half);
    let y0 = center.1.saturating_sub(half);
    let x1 = (center.0 + half).min(w - 1);
    let y1 = (center.1 + half).min(h - 1);
    BBox {
        x: x0,
        y: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    }
}

pub fn derive_part_layout(
    centers: &[(f64, f64)],
    s: &SupportMap,
    lambda: f64,
    object_box: BBox,
) -> Result<PartLayout, LocalizeError> {
    s.require(Scale::Image)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(LocalizeError::InvalidLambda(lambda));
    }
    let support_box = s.positive_box().ok_or(LocalizeError::EmptyMap)?;
    let side = part_side(support_box.width, support_box.height, lambda);
    let dims = (s.height, s.width);
    let centers: Vec<(usize, usize)> = centers
        .iter()
        .map(|&(x, y)| {
            (
                (x.round().max(0.0) as usize).min(s.width - 1),
                (y.round().max(0.0) as usize).min(s.height - 1),
            )
        })
        .collect();
    let part_boxes = centers.iter().map(|&c| part_box(c, side, dims)).collect();
    Ok(PartLayout {
        image_dims: dims,
        object_box,
        centers,
        side,
        part_boxes,
    })
}

/// Binarizes at `frac * max(S)` and returns the tight box of the largest
/// foreground component.
pub fn object_box(s: &SupportMap, frac: f64, conn: Connectivity) -> Result<BBox, LocalizeError> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(LocalizeError::InvalidFraction(frac));
    }
    let peak = f64::from(s.max());
    if peak <= 0.0 {
        return Err(LocalizeError::EmptyMap);
    }
    let cut = frac * peak;
    let fg: Vec<bool> = s.values.iter().map(|&v| f64::from(v) >= cut).collect();
    let comps = components::label(&fg, s.height, s.width, conn);
    let keep = comps.largest().ok_or(LocalizeError::EmptyMap)?;
    let bits = comps.labels.iter().map(|&l| l == Some(keep)).collect();
    Mask::new(s.height, s.width, bits)
        .bounding_box()
        .map(BBox::from_inclusive)
        .ok_or(LocalizeError::EmptyMap)
}

/// Masks the image, crops to the mask's bounding box and resizes the crop
/// to 224 x 224.
pub fn crop_region(image: &Tensor, mask: &Mask) -> Result<Tensor, LocalizeError> {
    let masked = tensor::masked_multiply(image, mask)?;
    let (r0, c0, r1, c1) = mask.bounding_box().ok_or(LocalizeError::EmptyMask)?;
    let window = tensor::crop(&masked, r0, c0, r1 - r0 + 1, c1 - c0 + 1)?;
    Ok(tensor::bilinear_resize(
        &window,
        PART_CROP_SIZE,
        PART_CROP_SIZE,
    )?)
}
