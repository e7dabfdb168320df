//! Box overlays written as binary PPM (P6) images.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::localize::{BBox, PartLayout, SupportMap};
use crate::tensor::Tensor;

pub const OBJECT_COLOR: [u8; 3] = [255, 48, 48];
pub const PART_COLORS: [[u8; 3]; 6] = [
    [40, 200, 255],
    [255, 220, 0],
    [90, 255, 90],
    [255, 90, 255],
    [255, 150, 30],
    [160, 120, 255],
];
const LINE_WIDTH: usize = 2;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image is {actual:?} but layout expects {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: Vec<usize>,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// 8-bit RGB raster, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Rgb {
    /// From a `(3, h, w)` or `(h, w)` tensor. Values up to 1.0 are taken as
    /// unit range, anything larger as 0..255.
    pub fn from_tensor(t: &Tensor) -> Result<Self, RenderError> {
        let (c, h, w) = t.chw().map_err(|_| RenderError::ShapeMismatch {
            expected: (0, 0),
            actual: t.dims().to_vec(),
        })?;
        if c != 1 && c != 3 {
            return Err(RenderError::ShapeMismatch {
                expected: (h, w),
                actual: t.dims().to_vec(),
            });
        }
        let peak = t.data().iter().copied().fold(0.0f32, f32::max);
        let gain = if peak <= 1.0 { 255.0 } else { 1.0 };
        let mut pixels = Vec::with_capacity(3 * h * w);
        for i in 0..h * w {
            for ch in 0..3 {
                let v = t.channel(ch.min(c - 1))[i];
                pixels.push((v * gain).round().clamp(0.0, 255.0) as u8);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Heat-map rendering of a support map (black to red to yellow).
    pub fn from_support(s: &SupportMap) -> Self {
        let peak = s.max().max(f32::MIN_POSITIVE);
        let mut pixels = Vec::with_capacity(3 * s.values.len());
        for &v in &s.values {
            let t = (v / peak).clamp(0.0, 1.0);
            let r = (t * 2.0).min(1.0);
            let g = (t * 2.0 - 1.0).max(0.0);
            pixels.extend_from_slice(&[(r * 255.0) as u8, (g * 255.0) as u8, (t * 60.0) as u8]);
        }
        Self {
            width: s.width,
            height: s.height,
            pixels,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// Draws a `LINE_WIDTH`-pixel rectangle along the inside of `b`,
    /// clamped to the raster.
    pub fn draw_box(&mut self, b: &BBox, color: [u8; 3]) {
        if b.width == 0 || b.height == 0 || b.x >= self.width || b.y >= self.height {
            return;
        }
        let x1 = (b.x + b.width - 1).min(self.width - 1);
        let y1 = (b.y + b.height - 1).min(self.height - 1);
        for y in b.y..=y1 {
            for x in b.x..=x1 {
                let edge = x < b.x + LINE_WIDTH
                    || x + LINE_WIDTH > x1
                    || y < b.y + LINE_WIDTH
                    || y + LINE_WIDTH > y1;
                if edge {
                    self.put(x, y, color);
                }
            }
        }
    }

    pub fn draw_layout(&mut self, layout: &PartLayout) {
        self.draw_box(&layout.object_box, OBJECT_COLOR);
        for (i, b) in layout.part_boxes.iter().enumerate() {
            self.draw_box(b, PART_COLORS[i % PART_COLORS.len()]);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|source| RenderError::IoFailure {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn render_overlay(
    image: &Tensor,
    layout: &PartLayout,
    path: impl AsRef<Path>,
) -> Result<(), RenderError> {
    let mut rgb = Rgb::from_tensor(image)?;
    if (rgb.height, rgb.width) != layout.image_dims {
        return Err(RenderError::ShapeMismatch {
            expected: layout.image_dims,
            actual: image.dims().to_vec(),
        });
    }
    rgb.draw_layout(layout);
    rgb.write_ppm(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(dims: (usize, usize), object: BBox, parts: Vec<BBox>) -> PartLayout {
        PartLayout {
            image_dims: dims,
            object_box: object,
            centers: parts.iter().map(|b| (b.x, b.y)).collect(),
            side: 1,
            part_boxes: parts,
        }
    }

    #[test]
    fn single_box_recolors_only_border() {
        let img = Tensor::new(vec![3, 20, 20], vec![0.5; 1200]).unwrap();
        let base = Rgb::from_tensor(&img).unwrap();
        let mut drawn = base.clone();
        let b = BBox::from([3, 4, 10, 8]);
        drawn.draw_layout(&layout((20, 20), b, vec![]));
        for y in 0..20 {
            for x in 0..20 {
                let inside = b.contains(x, y);
                let interior = (5..=10).contains(&x) && (6..=9).contains(&y);
                let changed = drawn.get(x, y) != base.get(x, y);
                assert_eq!(changed, inside && !interior, "({x}, {y})");
                if changed {
                    assert_eq!(drawn.get(x, y), OBJECT_COLOR);
                }
            }
        }
    }

    #[test]
    fn clipped_box_is_clamped() {
        let img = Tensor::new(vec![10, 10], vec![0.0; 100]).unwrap();
        let mut rgb = Rgb::from_tensor(&img).unwrap();
        rgb.draw_box(&BBox::from([6, 6, 10, 10]), [1, 2, 3]);
        assert_eq!(rgb.get(9, 9), [1, 2, 3]);
        assert_eq!(rgb.get(8, 8), [1, 2, 3]);
        assert_eq!(rgb.get(7, 7), [1, 2, 3]);
        assert_eq!(rgb.get(5, 5), [0, 0, 0]);
    }

    #[test]
    fn ppm_header_and_errors() {
        let img = Tensor::new(vec![3, 2, 4], vec![1.0; 24]).unwrap();
        let rgb = Rgb::from_tensor(&img).unwrap();
        let ppm = rgb.to_ppm();
        assert!(ppm.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 24);

        let l = layout((5, 5), BBox::from([0, 0, 1, 1]), vec![]);
        assert!(matches!(
            render_overlay(&img, &l, "/tmp/unused.ppm"),
            Err(RenderError::ShapeMismatch { .. })
        ));
        let l = layout((2, 4), BBox::from([0, 0, 1, 1]), vec![]);
        assert!(matches!(
            render_overlay(&img, &l, "/nonexistent-dir/out.ppm"),
            Err(RenderError::IoFailure { .. })
        ));
    }
}
