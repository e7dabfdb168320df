use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use partmine::align::{self, AlignmentResult, SlotAssignment};
use partmine::classify::{self, LinearModel};
use partmine::dataset::{self, LocalizedImage};
use partmine::pipeline::{self, LayoutDoc, PipelineConfig};
use partmine::synth::{self, SynthConfig};
use partmine::{read_tensor, write_tensor, ThresholdMode};

#[derive(Parser)]
#[command(
    name = "partmine",
    version,
    about = "Unsupervised part mining and localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localize parts in every activation stack of a directory
    Mine(MineArgs),
    /// Group parts across images by spectral clustering
    Align(AlignArgs),
    /// Build fused descriptors and train a linear classifier
    FuseTrain(FuseArgs),
    /// Draw a stored layout onto an image tensor
    Render(RenderArgs),
    /// Write synthetic activation stacks with planted parts
    Synth(SynthArgs),
}

#[derive(Args)]
struct MineArgs {
    /// TOML file with pipeline settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k_parts: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// global or per-map
    #[arg(long)]
    alpha_mode: Option<ThresholdMode>,
    #[arg(long)]
    connectivity: Option<u8>,
    #[arg(long)]
    objbox_frac: Option<f64>,
    #[arg(long)]
    max_pattern_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Frequent means support > beta instead of >= beta
    #[arg(long)]
    strict_support: bool,
    /// Image side assumed when no image tensor is present
    #[arg(long)]
    image_size: Option<usize>,
}

impl MineArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        take!(
            features,
            out,
            beta,
            k_parts,
            lambda,
            alpha_mode,
            connectivity
        );
        take!(objbox_frac, max_pattern_len, seed, jobs, image_size);
        if self.strict_support {
            cfg.strict_support = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AlignArgs {
    /// Directory of `<id>.layout.json` files
    #[arg(long)]
    layouts: PathBuf,
    /// Directory holding `<id>.conv.npy` tensors
    #[arg(long)]
    features: PathBuf,
    /// Number of part groups (defaults to the parts per layout)
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    layouts: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Output of `align`
    #[arg(long)]
    alignment: PathBuf,
    /// JSON object mapping image id to class label
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = classify::DEFAULT_C)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// `3 x H x W` image tensor
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 1024)]
    maps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write stand-in conv features with this many channels
    #[arg(long)]
    conv_channels: Option<usize>,
    /// Number of classes cycled through when writing conv features
    #[arg(long, default_value_t = 2)]
    classes: usize,
}

#[derive(Serialize, Deserialize)]
struct AlignmentFile {
    rows: Vec<RowRef>,
    #[serde(flatten)]
    result: AlignmentResult,
    slots: SlotAssignment,
}

#[derive(Serialize, Deserialize)]
struct RowRef {
    image: String,
    part: usize,
}

#[derive(Serialize)]
struct PlantedTruth {
    id: String,
    class: String,
    centers: Vec<[f64; 2]>,
    blobs: Vec<partmine::BBox>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_localized(layouts: &Path, features: &Path) -> Result<Vec<LocalizedImage>> {
    if !layouts.is_dir() {
        bail!("layout directory {} does not exist", layouts.display());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(layouts)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(id) = name.strip_suffix(".layout.json") {
            ids.push((id.to_string(), path.clone()));
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no layouts found in {}", layouts.display());
    }
    ids.into_iter()
        .map(|(id, path)| {
            let layout = LayoutDoc::read(&path)?.to_layout();
            let conv_path = features.join(format!("{id}.conv.npy"));
            let conv = read_tensor(&conv_path)
                .with_context(|| format!("loading {}", conv_path.display()))?;
            Ok(LocalizedImage { id, layout, conv })
        })
        .collect()
}

fn mine(args: &MineArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let summary = pipeline::run_pipeline(&cfg)?;
    for r in &summary.images {
        match &r.error {
            None => println!("{}\tok\t{:.1} ms", r.id, r.millis),
            Some(e) => println!("{}\terror\t{e}", r.id),
        }
    }
    println!(
        "{} localized, {} failed; summary in {}",
        summary.succeeded,
        summary.failed,
        cfg.out.join("summary.json").display()
    );
    Ok(())
}

fn align_cmd(args: &AlignArgs) -> Result<()> {
    let images = load_localized(&args.layouts, &args.features)?;
    let k = args.k.unwrap_or_else(|| images[0].layout.k());
    let table = dataset::part_table(&images)?;
    let result = align::spectral_cluster(&table, k, args.seed)?;
    let slots = align::assign_slots(&table, &result)?;
    println!(
        "{} part rows in {} groups: {:?}",
        table.rows.len(),
        k,
        result.group_sizes()
    );
    let file = AlignmentFile {
        rows: table
            .rows
            .iter()
            .map(|r| RowRef {
                image: r.image.clone(),
                part: r.part,
            })
            .collect(),
        result,
        slots,
    };
    write_json(&args.out, &file)
}

fn fuse_train(args: &FuseArgs) -> Result<()> {
    let images = load_localized(&args.layouts, &args.features)?;
    let table = dataset::part_table(&images)?;
    let alignment: AlignmentFile = read_json(&args.alignment)?;
    if alignment.rows.len() != table.rows.len() {
        bail!(
            "alignment covers {} rows but the layouts give {}",
            alignment.rows.len(),
            table.rows.len()
        );
    }
    let labels: BTreeMap<String, String> = read_json(&args.labels)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for img in &images {
        let Some(label) = labels.get(&img.id) else {
            eprintln!("skipping {}: no label", img.id);
            continue;
        };
        let fused = dataset::fused_representation(img, &table, &alignment.slots)?;
        x.push(fused.values);
        y.push(label.clone());
    }
    let model: LinearModel = classify::train_linear_svm(&x, &y, args.c, args.seed)?;
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(xi, yi)| classify::predict(&model, xi).is_ok_and(|p| p == yi.as_str()))
        .count();
    println!(
        "trained on {} images, {}-d features, training accuracy {}/{}",
        x.len(),
        model.feature_len(),
        correct,
        x.len()
    );
    write_json(&args.out, &model)
}

fn render(args: &RenderArgs) -> Result<()> {
    pipeline::render_layout_file(&args.image, &args.layout, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let cfg = SynthConfig {
        maps: args.maps,
        ..SynthConfig::default()
    };
    let classes = args.classes.max(1);
    let mut truth = Vec::new();
    let mut labels = BTreeMap::new();
    for i in 0..args.count {
        let id = format!("scene{i:03}");
        let seed = args.seed.wrapping_add(i as u64);
        let scene = synth::planted_scene(&cfg, seed);
        write_tensor(&scene.stack, args.out.join(format!("{id}.npy")))?;
        write_tensor(&scene.image, args.out.join(format!("{id}.image.npy")))?;
        let class = format!("class{}", i % classes);
        if let Some(ch) = args.conv_channels {
            let conv = scene.conv_features(ch, i % classes, seed);
            write_tensor(&conv, args.out.join(format!("{id}.conv.npy")))?;
        }
        labels.insert(id.clone(), class.clone());
        truth.push(PlantedTruth {
            id,
            class,
            centers: scene.centers.iter().map(|&(x, y)| [x, y]).collect(),
            blobs: scene.blobs.clone(),
        });
    }
    write_json(&args.out.join("planted.json"), &truth)?;
    write_json(&args.out.join("labels.json"), &labels)?;
    println!("wrote {} scenes to {}", args.count, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Mine(a) => mine(a),
        Command::Align(a) => align_cmd(a),
        Command::FuseTrain(a) => fuse_train(a),
        Command::Render(a) => render(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
