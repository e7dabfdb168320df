//! End-to-end localization over a directory of activation tensors.
//!
//! Input discovery, in order of preference:
//!
//! * `manifest.json` listing `{"id", "relu5", "pool5", "image", "conv"}`
//!   entries (paths relative to the manifest);
//! * `<id>.relu5.npy` + `<id>.pool5.npy` pairs, fused here by resizing the
//!   pool5 maps onto the relu5 grid;
//! * a plain `<id>.npy` already holding the fused `C x h x w` stack.
//!
//! `<id>.image.npy` (3 x H x W) and `<id>.conv.npy` are picked up alongside.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::Connectivity;
use crate::localize::{self, BBox, LocalizeError, PartLayout, SupportMap};
use crate::mining::{self, Comparison, MiningError};
use crate::npy::{self, NpyError};
use crate::render::{self, RenderError, Rgb};
use crate::tensor::{self, Tensor, TensorError};
use crate::transactions::{self, ThresholdMode, TransactionError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingPath(PathBuf),
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Transactions(#[from] TransactionError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("every image failed ({0} inputs)")]
    AllFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub beta: f64,
    pub k_parts: usize,
    pub lambda: f64,
    pub alpha_mode: ThresholdMode,
    pub connectivity: u8,
    pub objbox_frac: f64,
    pub max_pattern_len: usize,
    pub seed: u64,
    /// Strict `support > beta` instead of `>=`.
    pub strict_support: bool,
    /// Image size used when no image tensor accompanies the features.
    pub image_size: usize,
    pub jobs: usize,
    pub features: PathBuf,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta: 0.07,
            k_parts: 4,
            lambda: 0.25,
            alpha_mode: ThresholdMode::Global,
            connectivity: 8,
            objbox_frac: 0.2,
            max_pattern_len: 3,
            seed: 0,
            strict_support: false,
            image_size: 448,
            jobs: 1,
            features: PathBuf::from("features"),
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} not in (0, 1]", self.beta));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda {} not in (0, 1]", self.lambda));
        }
        if self.k_parts == 0 {
            return bad("k-parts must be at least 1".into());
        }
        if !(self.objbox_frac > 0.0 && self.objbox_frac < 1.0) {
            return bad(format!("objbox-frac {} not in (0, 1)", self.objbox_frac));
        }
        if self.max_pattern_len == 0 {
            return bad("max-pattern-len must be at least 1".into());
        }
        if self.image_size == 0 {
            return bad("image-size must be positive".into());
        }
        self.connectivity()?;
        Ok(())
    }

    pub fn connectivity(&self) -> Result<Connectivity, PipelineError> {
        Connectivity::try_from(self.connectivity).map_err(PipelineError::Config)
    }

    pub fn comparison(&self) -> Comparison {
        if self.strict_support {
            Comparison::Greater
        } else {
            Comparison::AtLeast
        }
    }
}

/// Everything computed while localizing one image.
#[derive(Debug, Clone)]
pub struct Localization {
    pub layout: PartLayout,
    pub alphas: Vec<f64>,
    pub transactions: usize,
    pub patterns: usize,
    pub support_grid: SupportMap,
    /// Upsampled map after the largest-component filter.
    pub support_image: SupportMap,
    pub warnings: Vec<String>,
}

/// Runs transaction creation, mining and part finding on one fused stack.
pub fn localize_stack(
    stack: &Tensor,
    image_dims: (usize, usize),
    cfg: &PipelineConfig,
) -> Result<Localization, PipelineError> {
    let conn = cfg.connectivity()?;
    let thr = transactions::compute_threshold(stack, cfg.alpha_mode)?;
    let db = transactions::build_transactions(stack, &thr)?;
    let patterns = mining::apriori_with(&db, cfg.beta, cfg.max_pattern_len, cfg.comparison())?;
    let mut warnings = Vec::new();
    let grid = localize::build_support_map(&patterns, &db)?;
    if grid.empty_patterns {
        warnings.push(format!("no pattern reached support {}", cfg.beta));
    }
    let up = localize::upsample_support_map(&grid, image_dims.0, image_dims.1)?;
    let filtered = localize::extract_largest_component(&up, conn)?;
    let centers = localize::find_part_centers(&filtered, cfg.k_parts, cfg.seed)?;
    let object = localize::object_box(&filtered, cfg.objbox_frac, conn)?;
    let layout = localize::derive_part_layout(&centers, &filtered, cfg.lambda, object)?;
    Ok(Localization {
        layout,
        alphas: thr.alphas,
        transactions: db.len(),
        patterns: patterns.len(),
        support_grid: grid,
        support_image: filtered,
        warnings,
    })
}

/// Resizes `pool5` onto the `relu5` grid and stacks the two along channels.
pub fn fuse_layers(relu5: &Tensor, pool5: &Tensor) -> Result<Tensor, TensorError> {
    let (_, h, w) = relu5.chw()?;
    let pooled = tensor::bilinear_resize(pool5, h, w)?;
    tensor::concat_channels(&[relu5, &pooled])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSource {
    Fused(PathBuf),
    Layers { relu5: PathBuf, pool5: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    pub id: String,
    pub features: FeatureSource,
    pub image: Option<PathBuf>,
    pub conv: Option<PathBuf>,
}

impl ImageInput {
    pub fn load_stack(&self) -> Result<Tensor, PipelineError> {
        match &self.features {
            FeatureSource::Fused(p) => Ok(npy::read_tensor(p)?),
            FeatureSource::Layers { relu5, pool5 } => Ok(fuse_layers(
                &npy::read_tensor(relu5)?,
                &npy::read_tensor(pool5)?,
            )?),
        }
    }

    /// Path recorded in the layout document.
    pub fn display_path(&self) -> String {
        let p = match (&self.image, &self.features) {
            (Some(img), _) => img,
            (None, FeatureSource::Fused(p)) => p,
            (None, FeatureSource::Layers { relu5, .. }) => relu5,
        };
        p.display().to_string()
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    images: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    id: String,
    relu5: Option<PathBuf>,
    pool5: Option<PathBuf>,
    features: Option<PathBuf>,
    image: Option<PathBuf>,
    conv: Option<PathBuf>,
}

pub fn discover_inputs(dir: &Path) -> Result<Vec<ImageInput>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::MissingPath(dir.to_path_buf()));
    }
    let manifest = dir.join("manifest.json");
    if manifest.is_file() {
        return read_manifest(&manifest, dir);
    }

    #[derive(Default)]
    struct Found {
        fused: Option<PathBuf>,
        relu5: Option<PathBuf>,
        pool5: Option<PathBuf>,
        image: Option<PathBuf>,
        conv: Option<PathBuf>,
    }
    let mut by_id: BTreeMap<String, Found> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_suffix(".npy") else {
            continue;
        };
        let (id, kind) = match stem.rsplit_once('.') {
            Some((id, k @ ("relu5" | "pool5" | "image" | "conv"))) => (id, k),
            _ => (stem, "fused"),
        };
        let slot = by_id.entry(id.to_string()).or_default();
        let p = Some(path.clone());
        match kind {
            "relu5" => slot.relu5 = p,
            "pool5" => slot.pool5 = p,
            "image" => slot.image = p,
            "conv" => slot.conv = p,
            _ => slot.fused = p,
        }
    }
    let mut inputs = Vec::new();
    for (id, f) in by_id {
        let features = match (f.fused, f.relu5, f.pool5) {
            (Some(p), _, _) => FeatureSource::Fused(p),
            (None, Some(relu5), Some(pool5)) => FeatureSource::Layers { relu5, pool5 },
            (None, Some(_), None) => {
                return Err(PipelineError::MissingPath(
                    dir.join(format!("{id}.pool5.npy")),
                ))
            }
            (None, None, Some(_)) => {
                return Err(PipelineError::MissingPath(
                    dir.join(format!("{id}.relu5.npy")),
                ))
            }
            // image or conv tensors without activations are ignored
            (None, None, None) => continue,
        };
        inputs.push(ImageInput {
            id,
            features,
            image: f.image,
            conv: f.conv,
        });
    }
    Ok(inputs)
}

fn read_manifest(path: &Path, dir: &Path) -> Result<Vec<ImageInput>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let resolve = |p: PathBuf| -> Result<PathBuf, PipelineError> {
        let full = if p.is_absolute() { p } else { dir.join(p) };
        if full.is_file() {
            Ok(full)
        } else {
            Err(PipelineError::MissingPath(full))
        }
    };
    m.images
        .into_iter()
        .map(|e| {
            let features = match (e.features, e.relu5, e.pool5) {
                (Some(p), _, _) => FeatureSource::Fused(resolve(p)?),
                (None, Some(r), Some(p)) => FeatureSource::Layers {
                    relu5: resolve(r)?,
                    pool5: resolve(p)?,
                },
                _ => {
                    return Err(PipelineError::Config(format!(
                        "manifest entry {} needs `features` or both `relu5` and `pool5`",
                        e.id
                    )))
                }
            };
            Ok(ImageInput {
                id: e.id,
                features,
                image: e.image.map(resolve).transpose()?,
                conv: e.conv.map(resolve).transpose()?,
            })
        })
        .collect()
}

/// Per-image layout document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDoc {
    pub image: String,
    /// `[width, height]` of the pixel frame the boxes live in.
    pub image_size: [usize; 2],
    pub object_box: BBox,
    pub side: usize,
    pub parts: Vec<PartDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartDoc {
    pub center: [usize; 2],
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl LayoutDoc {
    pub fn new(image: String, layout: &PartLayout) -> Self {
        Self {
            image,
            image_size: [layout.image_dims.1, layout.image_dims.0],
            object_box: layout.object_box,
            side: layout.side,
            parts: layout
                .centers
                .iter()
                .zip(&layout.part_boxes)
                .map(|(&(x, y), &bbox)| PartDoc {
                    center: [x, y],
                    bbox,
                })
                .collect(),
        }
    }

    pub fn to_layout(&self) -> PartLayout {
        PartLayout {
            image_dims: (self.image_size[1], self.image_size[0]),
            object_box: self.object_box,
            centers: self
                .parts
                .iter()
                .map(|p| (p.center[0], p.center[1]))
                .collect(),
            side: self.side,
            part_boxes: self.parts.iter().map(|p| p.bbox).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("layout serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub id: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub alphas: Vec<f64>,
    pub patterns: usize,
    pub millis: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: PipelineConfig,
    pub succeeded: usize,
    pub failed: usize,
    pub images: Vec<ImageReport>,
}

fn process_one(
    input: &ImageInput,
    cfg: &PipelineConfig,
) -> Result<(String, PathBuf, PathBuf, Localization), PipelineError> {
    let stack = input.load_stack()?;
    let image = input.image.as_ref().map(npy::read_tensor).transpose()?;
    let dims = match &image {
        Some(img) => {
            let (_, h, w) = img.chw()?;
            (h, w)
        }
        None => (cfg.image_size, cfg.image_size),
    };
    let loc = localize_stack(&stack, dims, cfg)?;
    let doc = LayoutDoc::new(input.display_path(), &loc.layout);
    let layout_path = cfg.out.join(format!("{}.layout.json", input.id));
    fs::write(&layout_path, doc.to_json()).map_err(io_err(&layout_path))?;

    let overlay_path = cfg.out.join(format!("{}.overlay.ppm", input.id));
    let mut canvas = match &image {
        Some(img) => Rgb::from_tensor(img)?,
        None => Rgb::from_support(&loc.support_image),
    };
    canvas.draw_layout(&loc.layout);
    canvas.write_ppm(&overlay_path)?;
    Ok((doc.to_json(), layout_path, overlay_path, loc))
}

/// Localizes every discovered input and writes per-image layouts, overlays
/// and `summary.json` into `cfg.out`. Images are independent; a failure is
/// recorded and the run continues unless every image fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let inputs = discover_inputs(&cfg.features)?;
    if inputs.is_empty() {
        return Err(PipelineError::Config(format!(
            "no feature tensors found in {}",
            cfg.features.display()
        )));
    }
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let reports: Vec<ImageReport> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let start = Instant::now();
                let result = process_one(input, cfg);
                let millis = start.elapsed().as_secs_f64() * 1e3;
                match result {
                    Ok((_, layout, overlay, loc)) => ImageReport {
                        id: input.id.clone(),
                        status: "ok".into(),
                        layout: Some(layout.display().to_string()),
                        overlay: Some(overlay.display().to_string()),
                        error: None,
                        alphas: if loc.alphas.len() == 1 {
                            loc.alphas
                        } else {
                            Vec::new()
                        },
                        patterns: loc.patterns,
                        millis,
                        warnings: loc.warnings,
                    },
                    Err(e) => ImageReport {
                        id: input.id.clone(),
                        status: "error".into(),
                        layout: None,
                        overlay: None,
                        error: Some(e.to_string()),
                        alphas: Vec::new(),
                        patterns: 0,
                        millis,
                        warnings: Vec::new(),
                    },
                }
            })
            .collect()
    });

    let succeeded = reports.iter().filter(|r| r.status == "ok").count();
    let summary = RunSummary {
        config: cfg.clone(),
        succeeded,
        failed: reports.len() - succeeded,
        images: reports,
    };
    let path = cfg.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    if succeeded == 0 {
        return Err(PipelineError::AllFailed(summary.images.len()));
    }
    Ok(summary)
}

/// Renders a stored layout onto an image tensor.
pub fn render_layout_file(image: &Path, layout: &Path, out: &Path) -> Result<(), PipelineError> {
    let img = npy::read_tensor(image)?;
    let doc = LayoutDoc::read(layout)?;
    render::render_overlay(&img, &doc.to_layout(), out)?;
    Ok(())
}
