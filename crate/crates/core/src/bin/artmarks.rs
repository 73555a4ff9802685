//! Command-line front end.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use artmarks::dataset::{build_synthetic, load_split, scan_base_dir, DatasetManifest, LoadOptions, Split, SyntheticConfig};
use artmarks::evaluation::evaluate;
use artmarks::geometry::RansacConfig;
use artmarks::landmarks::{read_landmarks, write_sidecar, BaseGroup, LandmarkSource, ReadOptions, Sidecar};
use artmarks::model::{build_global, ModelBundle, NetworkConfig, PipelineGeometry};
use artmarks::raster::Image;
use artmarks::region::INFERENCE_PADDING;
use artmarks::registration::{register, write_artifacts, ContourMap};
use artmarks::service::{serve, AnnotationStore, BundlePredictor, Predictor, ServiceState};
use artmarks::synthetic::disc;
use artmarks::training::{train_global, train_joint, RunDir, Sample, TrainingConfig};

#[derive(Parser)]
#[command(name = "artmarks", version, about = "Facial landmark detection for artwork images")]
struct Cli {
    /// JSON file with settings for the chosen command; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a geometrically augmented dataset from a directory of annotated images.
    Augment(AugmentArgs),
    /// Train phase 1 (global network) or phase 2 (joint refinement).
    Train(TrainArgs),
    /// Predict 68 landmarks for one image.
    Infer(InferArgs),
    /// Report mean errors of a model on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Align a source portrait to a target using their landmarks.
    Register(RegisterArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Write the global network's heatmaps for an image.
    RenderHeatmaps(RenderArgs),
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of images with `.json` or `.pts` landmark files.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Augmented copies per input image.
    #[arg(long)]
    count: Option<usize>,
    /// Output square size in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// External style-transfer command, invoked as `<cmd> <in> <out>`.
    #[arg(long)]
    stylizer: Option<String>,
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest with train and val splits.
    manifest: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    phase: u8,
    /// Run directory; the trained bundle is written to `<out>/model`.
    #[arg(long)]
    out: PathBuf,
    /// Phase 1 bundle to refine (phase 2 only).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Landmark sidecar to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional PNG with the landmarks drawn over the image.
    #[arg(long)]
    visualize: Option<PathBuf>,
    /// Region crop padding as a fraction of the landmark extent.
    #[arg(long)]
    padding: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    split: Option<Split>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    padding: Option<f64>,
}

#[derive(Args)]
struct RegisterArgs {
    src: PathBuf,
    dst: PathBuf,
    /// Landmark files of the source and target images.
    #[arg(long, num_args = 2, value_names = ["SRC", "DST"], required = true)]
    landmarks: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Target weight in the blend overlay.
    #[arg(long)]
    alpha: Option<f64>,
    /// RANSAC inlier threshold; defaults to 1% of the target diagonal.
    #[arg(long)]
    threshold_px: Option<f64>,
    /// Treat dark pixels as contour foreground.
    #[arg(long)]
    dark_contours: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "ARTMARKS_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "ARTMARKS_MODEL")]
    model: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Args)]
struct RenderArgs {
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, overlaid by the config file, overlaid by flags.
fn effective<T: Serialize + DeserializeOwned + Default>(config: Option<&Path>, flags: Value) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if !file.is_object() {
            bail!("{} must contain a JSON object", path.display());
        }
        merge(&mut value, file);
    }
    merge(&mut value, flags);
    serde_json::from_value(value).context("invalid configuration")
}

/// Flag overrides: only the flags that were given.
fn flags<const N: usize>(pairs: [(&str, Option<Value>); N]) -> Value {
    let mut map = Map::new();
    for (key, value) in pairs {
        if let Some(v) = value {
            let mut target = &mut map;
            let parts: Vec<&str> = key.split('.').collect();
            for p in &parts[..parts.len() - 1] {
                target = target
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("nested flag path");
            }
            target.insert(parts[parts.len() - 1].to_string(), v);
        }
    }
    Value::Object(map)
}

fn echo_config<T: Serialize>(dir: &Path, config: &T) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

fn load_image(path: &Path) -> anyhow::Result<Image> {
    Image::load(path).with_context(|| format!("loading {}", path.display()))
}

fn check_padding(p: f64) -> anyhow::Result<()> {
    if !(p.is_finite() && p >= 0.0) {
        bail!("padding must be a non-negative fraction, got {p}");
    }
    Ok(())
}

fn augment(cli: &Cli, a: &AugmentArgs) -> anyhow::Result<()> {
    let cfg: SyntheticConfig = effective(
        cli.config.as_deref(),
        flags([
            ("seed", cli.seed.map(Value::from)),
            ("augmentations_per_image", a.count.map(Value::from)),
            ("size", a.size.map(Value::from)),
            ("stylizer", a.stylizer.clone().map(Value::from)),
            ("split", a.split.map(|s| Value::from(s.name()))),
        ]),
    )?;
    cfg.augment.validate()?;
    let bases = scan_base_dir(&a.input)?;
    if bases.is_empty() {
        bail!("no annotated images in {}", a.input.display());
    }
    let manifest = build_synthetic(&bases, &a.out, &cfg)?;
    echo_config(&a.out, &cfg)?;
    println!("{}", manifest.counts_table());
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct TrainSettings {
    training: TrainingConfig,
    network: NetworkConfig,
    geometry: PipelineGeometry,
}

fn load_samples(manifest: &DatasetManifest, split: Split, geometry: &PipelineGeometry) -> anyhow::Result<Vec<Sample>> {
    let opts = LoadOptions {
        size: geometry.hr_size,
        ..Default::default()
    };
    load_split(manifest, split, opts)
        .map(|s| {
            let s = s?;
            let id = s.record.image.to_string_lossy().into_owned();
            Ok(Sample::new(id, s.image, s.landmarks, geometry)?)
        })
        .collect()
}

fn train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let epochs_key = if a.phase == 1 { "training.phase1.epochs" } else { "training.phase2.epochs" };
    let mut settings: TrainSettings = effective(
        cli.config.as_deref(),
        flags([
            ("training.seed", cli.seed.map(Value::from)),
            (epochs_key, a.epochs.map(Value::from)),
        ]),
    )?;
    // Keep the decay start inside a shortened schedule.
    for pc in [&mut settings.training.phase1, &mut settings.training.phase2] {
        pc.decay_start = pc.decay_start.min(pc.epochs.saturating_sub(1));
    }
    settings.training.validate()?;
    settings.network.validate()?;
    settings.geometry.validate()?;
    let bundle = match (a.phase, &a.model) {
        (2, Some(dir)) => Some(ModelBundle::load(dir)?),
        (2, None) => bail!("phase 2 needs --model with a phase 1 bundle"),
        (_, Some(_)) => bail!("--model is only used by phase 2"),
        _ => None,
    };
    if let Some(b) = &bundle {
        settings.network = b.config;
        settings.geometry = b.geometry;
    }
    let manifest = DatasetManifest::read(&a.manifest)?;
    let train_set = load_samples(&manifest, Split::Train, &settings.geometry)?;
    let val_set = load_samples(&manifest, Split::Val, &settings.geometry)?;
    let echoed = json!({
        "phase": a.phase,
        "manifest": a.manifest,
        "model": a.model,
        "settings": settings,
    });
    let mut run = RunDir::create(&a.out, &echoed)?;
    let (bundle, history) = match bundle {
        None => {
            let net = build_global(settings.network, &settings.geometry, settings.training.seed)?;
            let h = train_global(&net, &train_set, &val_set, &settings.training, &settings.geometry, Some(&mut run))?;
            let mut b = ModelBundle::from_global(net, settings.geometry)?;
            b.temperature = settings.training.temperature;
            (b, h)
        }
        Some(b) => {
            let h = train_joint(&b, &train_set, &val_set, &settings.training, Some(&mut run))?;
            (b, h)
        }
    };
    bundle.save(&a.out.join("model"))?;
    println!(
        "phase {}: best epoch {} val loss {:.6}{}",
        a.phase,
        history.best_epoch,
        history.best_val_loss,
        if history.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InferSettings {
    padding: f64,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            padding: INFERENCE_PADDING,
        }
    }
}

const GROUP_COLORS: [[f32; 3]; 7] = [
    [1.0, 0.9, 0.1],
    [1.0, 0.4, 0.1],
    [1.0, 0.4, 0.1],
    [0.2, 0.9, 0.3],
    [0.2, 0.6, 1.0],
    [0.2, 0.6, 1.0],
    [1.0, 0.2, 0.6],
];

fn infer(cli: &Cli, a: &InferArgs) -> anyhow::Result<()> {
    let s: InferSettings = effective(cli.config.as_deref(), flags([("padding", a.padding.map(Value::from))]))?;
    check_padding(s.padding)?;
    let bundle = ModelBundle::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mut detector = bundle.detector();
    detector.padding = s.padding;
    let image = load_image(&a.image)?;
    let pred = detector.forward_full(&image)?;
    let name = a.image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    write_sidecar(&Sidecar::new(name, &pred.refined, LandmarkSource::Model), &a.out)?;
    if let Some(path) = &a.visualize {
        let mut canvas = image.clone();
        let r = (image.width().max(image.height()) as f64 / 250.0).max(1.5);
        for (g, color) in BaseGroup::ALL.iter().zip(GROUP_COLORS) {
            for i in g.indices() {
                disc(&mut canvas, pred.refined.points()[i], r, &color);
            }
        }
        canvas.save(path)?;
    }
    if !pred.diagnostics.fallback_regions.is_empty() {
        log::warn!("regions fell back to global estimates: {:?}", pred.diagnostics.fallback_regions);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvaluateSettings {
    split: Split,
    padding: f64,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            split: Split::Test,
            padding: INFERENCE_PADDING,
        }
    }
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs) -> anyhow::Result<()> {
    let s: EvaluateSettings = effective(
        cli.config.as_deref(),
        flags([
            ("split", a.split.map(|s| Value::from(s.name()))),
            ("padding", a.padding.map(Value::from)),
        ]),
    )?;
    check_padding(s.padding)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let bundle = ModelBundle::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mut detector = bundle.detector();
    detector.padding = s.padding;
    let report = evaluate(&manifest, s.split, &detector)?;
    echo_config(&a.out, &json!({ "manifest": a.manifest, "model": a.model, "settings": s }))?;
    fs::write(a.out.join("report.csv"), report.to_csv())?;
    fs::write(a.out.join("parts.csv"), report.parts_csv())?;
    fs::write(a.out.join("images.csv"), report.images_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegisterSettings {
    alpha: f64,
    threshold_px: Option<f64>,
    seed: u64,
    contour_radius: usize,
    dark_contours: bool,
}

impl Default for RegisterSettings {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            threshold_px: None,
            seed: 0,
            contour_radius: 1,
            dark_contours: false,
        }
    }
}

fn register_cmd(cli: &Cli, a: &RegisterArgs) -> anyhow::Result<()> {
    let s: RegisterSettings = effective(
        cli.config.as_deref(),
        flags([
            ("alpha", a.alpha.map(Value::from)),
            ("threshold_px", a.threshold_px.map(Value::from)),
            ("seed", cli.seed.map(Value::from)),
            ("dark_contours", a.dark_contours.then_some(Value::from(true))),
        ]),
    )?;
    if !(0.0..=1.0).contains(&s.alpha) {
        bail!("alpha must be in [0, 1], got {}", s.alpha);
    }
    let src = load_image(&a.src)?;
    let dst = load_image(&a.dst)?;
    let read = |path: &Path, img: &Image| {
        read_landmarks(
            path,
            &ReadOptions {
                image_size: Some((img.width() as u32, img.height() as u32)),
                ..Default::default()
            },
        )
    };
    let src_lm = read(&a.landmarks[0], &src)?;
    let dst_lm = read(&a.landmarks[1], &dst)?;
    let mut ransac = RansacConfig::for_image(dst.width() as u32, dst.height() as u32);
    ransac.seed = s.seed;
    if let Some(t) = s.threshold_px {
        if !(t > 0.0) {
            bail!("threshold must be positive, got {t}");
        }
        ransac.threshold_px = t;
    }
    let result = register(&src_lm, &dst_lm, &src, dst.width(), dst.height(), Some(ransac))?;
    let maps = [
        ContourMap::from_image(&dst, s.dark_contours),
        ContourMap::from_image(&result.warped, s.dark_contours),
    ];
    write_artifacts(&a.out, &result, &src, &dst, s.alpha, Some((&maps, s.contour_radius)))?;
    echo_config(&a.out, &json!({ "src": a.src, "dst": a.dst, "landmarks": a.landmarks, "settings": s }))?;
    println!(
        "{} of {} correspondences are inliers",
        result.inliers.len(),
        result.inlier_mask.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ServeSettings {
    port: u16,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self { port: 8080 }
    }
}

fn serve_cmd(cli: &Cli, a: &ServeArgs) -> anyhow::Result<()> {
    let s: ServeSettings = effective(cli.config.as_deref(), flags([("port", a.port.map(Value::from))]))?;
    let store = AnnotationStore::open(&a.corpus)?;
    let predictor = match &a.model {
        Some(dir) => Some(Box::new(BundlePredictor(ModelBundle::load(dir)?)) as Box<dyn Predictor>),
        None => None,
    };
    let state = ServiceState::new(store, predictor);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(state, SocketAddr::from(([127, 0, 0, 1], s.port))))?;
    Ok(())
}

fn render_heatmaps(_cli: &Cli, a: &RenderArgs) -> anyhow::Result<()> {
    let bundle = ModelBundle::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let stack = bundle.detector().global_heatmaps(&load_image(&a.image)?)?;
    fs::create_dir_all(&a.out)?;
    stack.save_blob(&a.out.join("heatmaps.bin"))?;
    let (c, h, w) = (stack.channels(), stack.height(), stack.width());
    let cols = 10;
    let rows = c.div_ceil(cols);
    let mut montage = Image::new(cols * w, rows * h, 3);
    for k in 0..c {
        let logits = stack.channel(k);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (ox, oy) = ((k % cols) * w, (k / cols) * h);
        // Softmax scaled so each channel's peak is white.
        for (i, v) in logits.iter().enumerate() {
            let g = (v - max).exp() as f32;
            for ch in 0..3 {
                montage.set(ch, ox + i % w, oy + i / w, g);
            }
        }
    }
    montage.save(&a.out.join("montage.png"))?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Augment(a) => augment(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Infer(a) => infer(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::Register(a) => register_cmd(cli, a),
        Command::Serve(a) => serve_cmd(cli, a),
        Command::RenderHeatmaps(a) => render_heatmaps(cli, a),
    }
}

fn error_line(kind: &str, detail: &str) -> String {
    json!({ "error": kind, "detail": detail }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&text).trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<artmarks::Error>().map_or("error", |e| e.kind());
            let detail = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", error_line(kind, &detail));
            ExitCode::FAILURE
        }
    }
}
