//! Browser bindings: planted-scene localization, the transaction view of a
//! single activation map, and a small spectral clustering playground.

use partmine::align::spectral_cluster_descriptors;
use partmine::pipeline::{localize_stack, LayoutDoc, Localization, PipelineConfig};
use partmine::render::Rgb;
use partmine::synth::{planted_scene, PlantedScene, SynthConfig};
use partmine::tensor::Descriptor;
use partmine::transactions::{build_transactions, compute_threshold, ThresholdMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn rgba(rgb: &Rgb) -> Vec<u8> {
    rgb.pixels
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: PlantedScene,
    last: Option<Localization>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, maps: usize) -> Demo {
        let cfg = SynthConfig {
            maps: maps.max(16),
            ..SynthConfig::default()
        };
        Demo {
            scene: planted_scene(&cfg, u64::from(seed)),
            last: None,
        }
    }

    pub fn image_size(&self) -> usize {
        self.scene.image.dims()[1]
    }

    pub fn grid(&self) -> usize {
        self.scene.stack.dims()[1]
    }

    pub fn maps(&self) -> usize {
        self.scene.stack.dims()[0]
    }

    /// Runs the localization and returns the layout document as JSON.
    pub fn localize(&mut self, beta: f64, k_parts: usize, lambda: f64) -> Result<String, JsError> {
        let cfg = PipelineConfig {
            beta,
            k_parts,
            lambda,
            ..PipelineConfig::default()
        };
        cfg.validate().map_err(js_err)?;
        let n = self.image_size();
        let loc = localize_stack(&self.scene.stack, (n, n), &cfg).map_err(js_err)?;
        let doc = LayoutDoc::new("synthetic".into(), &loc.layout).to_json();
        self.last = Some(loc);
        Ok(doc)
    }

    pub fn pattern_count(&self) -> usize {
        self.last.as_ref().map_or(0, |l| l.patterns)
    }

    /// RGBA pixels of the scene (or of the support map when `heat`) with
    /// the latest boxes drawn on top.
    pub fn overlay_rgba(&self, heat: bool) -> Vec<u8> {
        let mut canvas = match (&self.last, heat) {
            (Some(l), true) => Rgb::from_support(&l.support_image),
            _ => Rgb::from_tensor(&self.scene.image).expect("scene image is rank 3"),
        };
        if let Some(l) = &self.last {
            canvas.draw_layout(&l.layout);
        }
        rgba(&canvas)
    }

    /// Planted part centers as `[x0, y0, x1, y1, ...]` in image pixels.
    pub fn planted_centers(&self) -> Vec<f64> {
        self.scene
            .centers
            .iter()
            .flat_map(|&(x, y)| [x, y])
            .collect()
    }

    /// One activation map on the feature grid: brightness follows the
    /// activation, red cells exceed the threshold and enter the transaction.
    pub fn transaction_rgba(&self, map: usize, per_map: bool) -> Result<Vec<u8>, JsError> {
        let mode = if per_map {
            ThresholdMode::PerMap
        } else {
            ThresholdMode::Global
        };
        let thr = compute_threshold(&self.scene.stack, mode).map_err(js_err)?;
        let map = map.min(self.maps() - 1);
        let alpha = thr.alpha_for(map);
        let values = self.scene.stack.channel(map);
        let peak = values.iter().copied().fold(f32::MIN_POSITIVE, f32::max);
        Ok(values
            .iter()
            .flat_map(|&v| {
                let g = (v / peak * 200.0) as u8;
                if f64::from(v) > alpha {
                    [255, 40 + g / 4, 40, 255]
                } else {
                    [g, g, g, 255]
                }
            })
            .collect())
    }

    /// Per-position transaction counts on the feature grid; positions whose
    /// count reaches `beta * N` are tinted green.
    pub fn frequency_rgba(&self, beta: f64) -> Result<Vec<u8>, JsError> {
        let thr = compute_threshold(&self.scene.stack, ThresholdMode::Global).map_err(js_err)?;
        let db = build_transactions(&self.scene.stack, &thr).map_err(js_err)?;
        let counts = db.item_counts();
        let peak = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        let cut = beta * db.len() as f64;
        Ok(counts
            .iter()
            .flat_map(|&c| {
                let g = (f64::from(c) / peak * 230.0) as u8;
                if f64::from(c) >= cut {
                    [g / 3, 60 + g / 4 * 3, g / 3, 255]
                } else {
                    [g / 2, g / 2, g / 2, 255]
                }
            })
            .collect())
    }
}

/// Points in `k` angular sectors around the origin, clustered by cosine
/// affinity. Returns `[x, y, label]` triples.
#[wasm_bindgen]
pub fn spectral_toy(
    seed: u32,
    k: usize,
    per_group: usize,
    spread: f64,
) -> Result<Vec<f32>, JsError> {
    let k = k.clamp(2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let mut unit = move || rng.random::<f64>();
    let sector = std::f64::consts::TAU / k as f64;
    let mut points = Vec::new();
    for g in 0..k {
        for _ in 0..per_group.max(1) {
            let angle = (g as f64 + spread * (unit() - 0.5)) * sector;
            let radius = 0.25 + 0.75 * unit();
            points.push([radius * angle.cos(), radius * angle.sin()]);
        }
    }
    let descriptors: Vec<Descriptor> = points
        .iter()
        .map(|p| Descriptor(vec![p[0] as f32, p[1] as f32]))
        .collect();
    let result = spectral_cluster_descriptors(&descriptors, k, u64::from(seed)).map_err(js_err)?;
    Ok(points
        .iter()
        .zip(&result.labels)
        .flat_map(|(p, &l)| [p[0] as f32, p[1] as f32, l as f32])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn localize_and_draw() {
        let mut demo = Demo::new(3, 256);
        let doc = demo.localize(0.07, 4, 0.25).unwrap();
        assert!(doc.contains("\"parts\""));
        assert!(demo.pattern_count() > 0);
        let px = demo.overlay_rgba(false);
        assert_eq!(px.len(), 448 * 448 * 4);
        assert_eq!(demo.overlay_rgba(true).len(), px.len());
        assert_eq!(demo.planted_centers().len(), 8);
    }

    #[test]
    fn grid_views() {
        let demo = Demo::new(1, 64);
        assert_eq!(demo.transaction_rgba(3, false).unwrap().len(), 28 * 28 * 4);
        assert_eq!(demo.transaction_rgba(999, true).unwrap().len(), 28 * 28 * 4);
        assert_eq!(demo.frequency_rgba(0.07).unwrap().len(), 28 * 28 * 4);
    }

    #[test]
    fn spectral_sectors_separate() {
        for k in 2..=6 {
            let out = spectral_toy(5, k, 20, 0.3).unwrap();
            assert_eq!(out.len(), 20 * k * 3);
            let labels: Vec<f32> = out.chunks(3).map(|t| t[2]).collect();
            for g in 0..k {
                let group = &labels[g * 20..(g + 1) * 20];
                assert!(group.iter().all(|&l| l == group[0]), "k={k}");
            }
            let distinct: std::collections::BTreeSet<u32> =
                labels.iter().map(|&l| l as u32).collect();
            assert_eq!(distinct.len(), k);
        }
    }
}
