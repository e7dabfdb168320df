//! Dense row-major tensors and the numeric primitives shared by the
//! localization, alignment and fusion stages.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor rank {0} not supported (expected 1 to 3)")]
    UnsupportedRank(usize),
    #[error("tensor extents must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("data length {len} does not match dims {dims:?}")]
    LengthMismatch { dims: Vec<usize>, len: usize },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("vector norm below 1e-12, cannot normalize")]
    ZeroVector,
}

/// Row-major (C-order) tensor of rank 1 to 3 holding `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(TensorError::UnsupportedRank(dims.len()));
        }
        if dims.contains(&0) {
            return Err(TensorError::ZeroExtent(dims));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, TensorError> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// `(channels, height, width)` view; rank-2 tensors count as one channel.
    pub fn chw(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.dims.as_slice() {
            [h, w] => Ok((1, *h, *w)),
            [c, h, w] => Ok((*c, *h, *w)),
            _ => Err(TensorError::UnsupportedRank(self.dims.len())),
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let (_, h, w) = self.chw().expect("channel() on rank-1 tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    /// True when every value is non-negative (post-ReLU activations).
    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }
}

/// Fixed-length real feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Binary mask over a `height x width` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask length mismatch");
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box `(row0, col0, row1, col1)`, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.bits[r * self.width + c] {
                    bb = Some(match bb {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        bb
    }
}

/// Per-channel bilinear resize with corner-aligned sampling: source corners
/// map exactly onto target corners.
pub fn bilinear_resize(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let (c, h, w) = t.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::ZeroExtent(vec![out_h, out_w]));
    }
    let out_dims = if t.rank() == 2 {
        vec![out_h, out_w]
    } else {
        vec![c, out_h, out_w]
    };
    if out_h == h && out_w == w {
        return Ok(t.clone());
    }

    let rows = sample_positions(h, out_h);
    let cols = sample_positions(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = t.channel(ch);
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                let v00 = f64::from(src[r0 * w + c0]);
                let v01 = f64::from(src[r0 * w + c1]);
                let v10 = f64::from(src[r1 * w + c0]);
                let v11 = f64::from(src[r1 * w + c1]);
                let top = v00 + (v01 - v00) * fc;
                let bottom = v10 + (v11 - v10) * fc;
                out.push((top + (bottom - top) * fr) as f32);
            }
        }
    }
    Tensor::new(out_dims, out)
}

/// For each output index: (lower source index, upper source index, fraction).
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Spatial mean per channel; the denominator is always the full `h * w`.
pub fn global_average_pool(t: &Tensor) -> Result<Descriptor, TensorError> {
    let (c, h, w) = t.chw()?;
    let area = (h * w) as f64;
    Ok(Descriptor(
        (0..c)
            .map(|ch| {
                let sum: f64 = t.channel(ch).iter().map(|&v| f64::from(v)).sum();
                (sum / area) as f32
            })
            .collect(),
    ))
}

pub fn l2_normalize(d: &Descriptor) -> Result<Descriptor, TensorError> {
    let norm = d.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(TensorError::ZeroVector);
    }
    Ok(Descriptor(
        d.0.iter().map(|&v| (f64::from(v) / norm) as f32).collect(),
    ))
}

/// Element-wise product with a binary mask, broadcast across channels.
pub fn masked_multiply(t: &Tensor, m: &Mask) -> Result<Tensor, TensorError> {
    let (_, h, w) = t.chw()?;
    if m.height != h || m.width != w {
        return Err(TensorError::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![m.height, m.width],
        });
    }
    let plane = h * w;
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if m.bits[i % plane] { v } else { 0.0 })
        .collect();
    Tensor::new(t.dims().to_vec(), data)
}

/// Copy of the spatial window `rows x cols` starting at `(row0, col0)`.
pub fn crop(
    t: &Tensor,
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
) -> Result<Tensor, TensorError> {
    let (c, h, w) = t.chw()?;
    if rows == 0 || cols == 0 {
        return Err(TensorError::ZeroExtent(vec![rows, cols]));
    }
    if row0 + rows > h || col0 + cols > w {
        return Err(TensorError::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![row0 + rows, col0 + cols],
        });
    }
    let mut data = Vec::with_capacity(c * rows * cols);
    for ch in 0..c {
        let src = t.channel(ch);
        for r in row0..row0 + rows {
            data.extend_from_slice(&src[r * w + col0..r * w + col0 + cols]);
        }
    }
    let dims = if t.rank() == 2 {
        vec![rows, cols]
    } else {
        vec![c, rows, cols]
    };
    Tensor::new(dims, data)
}

/// Stack rank-3 tensors with equal spatial size along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = parts.first().ok_or(TensorError::ZeroExtent(vec![0]))?;
    let (_, h, w) = first.chw()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.chw()?;
        if (ph, pw) != (h, w) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![h, w],
                actual: vec![ph, pw],
            });
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![channels, h, w], data)
}
