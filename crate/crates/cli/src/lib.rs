//! `wsod`: the staged pipeline from synthetic data to saliency metrics.
//!
//! Stages exchange files: datasets (`manifest.json` plus PNGs), CAMs and
//! predictions (PNG for viewing, `WSF1` floats for the next stage), pseudo
//! labels (PNG masks plus `labels.json`), parameter checkpoints, and JSON/CSV
//! reports.

pub mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use wsod_core::cam::multi_inference_cam;
use wsod_core::io::{
    load_dataset, read_json, read_map_png, read_map_wsf, read_mask_png, resolve, save_dataset, write_json,
    write_map_png, write_map_wsf, write_mask_png, LabelEntry,
};
use wsod_core::labels::synthesize_labels;
use wsod_core::metrics::{ImageMetrics, MetricsReport};
use wsod_core::ndgrad::{load_params, save_params};
use wsod_core::nets::infer_saliency;
use wsod_core::selfcheck::run_gradient_suite;
use wsod_core::synth::{generate, SyntheticConfig};
use wsod_core::trainer::{
    run_ablation, sweep_delta, train_classifier, train_mfnet, LossRecord, TrainIo, TrainingSet,
};
use wsod_core::{BinaryMask, Error, LabelPair, Provenance, PseudoLabel, Sample, ScoreMap, ThresholdPolicy};

pub use config::RunConfig;
use config::pick;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or parameter values: exit code 2.
    Config(String),
    /// Everything else: exit code 1.
    Domain(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "wsod", version, about = "Weakly supervised salient object detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-image stages.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Output directory, or report file for `eval`.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-label shape corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long)]
        count: Option<usize>,
        /// Side length in pixels.
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        categories: Option<usize>,
    },
    /// Train the image-level classifier used for CAMs.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Multi-scale, flip-averaged CAMs for every image of a dataset.
    InferCam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Classifier checkpoint directory.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Pixel-wise and superpixel-wise pseudo labels from CAMs.
    MakeLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory written by `infer-cam`.
        #[arg(long)]
        cams: Option<PathBuf>,
    },
    /// Train the saliency network for one ablation case.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory written by `make-labels`.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Ablation case 1-9.
        #[arg(long)]
        case: Option<u8>,
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Saliency maps from a trained network (decoder only).
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Saliency checkpoint directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Prediction PNG, or a directory of them (sorted by name).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth PNG, a directory of them, or a dataset directory.
        #[arg(long)]
        gt: PathBuf,
        /// Thresholding for the F-measure.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Train and score ablation cases over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Held-out dataset directory.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated cases.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9")]
        cases: Vec<u8>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Case-9 training across self-supervision weights.
    SweepDelta {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "2,0,-2")]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Finite-difference check of every graph op and loss.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per op.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum PolicyArg {
    Adaptive,
    Max,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Domain(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    jobs: usize,
    out: Option<PathBuf>,
}

impl Ctx {
    fn new(common: Common) -> CliResult<Self> {
        let mut cfg = RunConfig::load(common.config.as_deref())?;
        if let Some(seed) = common.seed {
            cfg.train.seed = seed;
        }
        Ok(Self { cfg, jobs: common.jobs as usize, out: common.out })
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = self.out.clone().ok_or_else(|| CliError::Config("--out is required".into()))?;
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Runs `f` on a pool of `--jobs` threads.
    fn pooled<R: Send>(&self, f: impl FnOnce() -> R + Send) -> CliResult<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Domain(e.to_string()))?;
        Ok(pool.install(f))
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenData { common, count, image_size, categories } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(s) = image_size {
                ctx.cfg.train.image_size = s;
            }
            gen_data(&ctx, count.unwrap_or(ctx.cfg.data.count), categories.unwrap_or(ctx.cfg.data.num_categories))
        }
        Command::TrainClassifier { common, data, iters } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(n) = iters {
                ctx.cfg.train.iters_classifier = n;
            }
            let data = pick(data, &ctx.cfg.paths.data_dir, "dataset directory (--data)")?;
            cmd_train_classifier(&ctx, &data)
        }
        Command::InferCam { common, data, classifier } => {
            let ctx = Ctx::new(common)?;
            let data = pick(data, &ctx.cfg.paths.data_dir, "dataset directory (--data)")?;
            let cls = pick(classifier, &ctx.cfg.paths.classifier_dir, "classifier checkpoint (--classifier)")?;
            infer_cam(&ctx, &data, &cls)
        }
        Command::MakeLabels { common, data, cams } => {
            let ctx = Ctx::new(common)?;
            let data = pick(data, &ctx.cfg.paths.data_dir, "dataset directory (--data)")?;
            let cams = pick(cams, &ctx.cfg.paths.cam_dir, "CAM directory (--cams)")?;
            make_labels(&ctx, &data, &cams)
        }
        Command::Train { common, data, labels, case, delta, iters } => {
            let mut ctx = Ctx::new(common)?;
            let t = &mut ctx.cfg.train;
            t.ablation_case = case.unwrap_or(t.ablation_case);
            t.delta = delta.unwrap_or(t.delta);
            t.iters_saliency = iters.unwrap_or(t.iters_saliency);
            let data = pick(data, &ctx.cfg.paths.data_dir, "dataset directory (--data)")?;
            let labels = pick(labels, &ctx.cfg.paths.label_dir, "label directory (--labels)")?;
            cmd_train(&ctx, &data, &labels)
        }
        Command::Infer { common, data, model } => {
            let ctx = Ctx::new(common)?;
            let data = pick(data, &ctx.cfg.paths.test_dir.clone().or(ctx.cfg.paths.data_dir.clone()), "dataset directory (--data)")?;
            let model = pick(model, &ctx.cfg.paths.checkpoint_dir, "model checkpoint (--model)")?;
            infer(&ctx, &data, &model)
        }
        Command::Eval { common, pred, gt, policy } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(p) = policy {
                ctx.cfg.policy = match p {
                    PolicyArg::Adaptive => ThresholdPolicy::Adaptive,
                    PolicyArg::Max => ThresholdPolicy::MaxOverThresholds,
                };
            }
            cmd_eval(&ctx, &pred, &gt)
        }
        Command::Ablate { common, data, labels, test, cases, seeds, iters } => {
            let mut ctx = Ctx::new(common)?;
            ctx.cfg.train.iters_saliency = iters.unwrap_or(ctx.cfg.train.iters_saliency);
            let (set, test) = training_inputs(&ctx, data, labels, test)?;
            let report = run_ablation(&set, &test, &cases, seeds, &ctx.cfg.train, ctx.cfg.policy)?;
            let dir = ctx.out_dir()?;
            write_json(&dir.join("ablation.json"), &report)?;
            std::fs::write(dir.join("ablation.csv"), report.to_csv())?;
            print_json(&report.cases)
        }
        Command::SweepDelta { common, data, labels, test, deltas, seeds, iters } => {
            let mut ctx = Ctx::new(common)?;
            ctx.cfg.train.iters_saliency = iters.unwrap_or(ctx.cfg.train.iters_saliency);
            let (set, test) = training_inputs(&ctx, data, labels, test)?;
            let report = sweep_delta(&set, &test, &deltas, seeds, &ctx.cfg.train, ctx.cfg.policy)?;
            let dir = ctx.out_dir()?;
            write_json(&dir.join("sweep.json"), &report)?;
            std::fs::write(dir.join("sweep.csv"), report.to_csv())?;
            let gaps: Vec<(f64, Option<f64>)> = deltas.iter().map(|&d| (d, report.mean_gap(d))).collect();
            print_json(&gaps)
        }
        Command::GradCheck { common, instances } => {
            let ctx = Ctx::new(common)?;
            if instances == 0 {
                return Err(CliError::Config("--instances must be at least 1".into()));
            }
            let report = run_gradient_suite(ctx.cfg.train.seed, instances)?;
            if let Some(out) = &ctx.out {
                write_json(out, &report)?;
            }
            print_json(&report)?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Domain("gradient check exceeded the tolerance".into()))
            }
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Domain(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn gen_data(ctx: &Ctx, count: usize, categories: usize) -> CliResult<()> {
    let dir = ctx.out_dir()?;
    let cfg = SyntheticConfig {
        max_shapes: ctx.cfg.data.max_shapes,
        ..SyntheticConfig::new(count, ctx.cfg.train.image_size, categories, ctx.cfg.train.seed)
    };
    let samples = generate(&cfg)?;
    save_dataset(&dir, &samples)?;
    println!("wrote {} samples to {}", samples.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct ClassifierSummary {
    seed: u64,
    iterations: usize,
    final_loss: f64,
    train_accuracy: f64,
    params: String,
}

fn cmd_train_classifier(ctx: &Ctx, data: &Path) -> CliResult<()> {
    let samples = load_dataset(data)?;
    let dir = ctx.out_dir()?;
    let mut log = BufWriter::new(File::create(dir.join("classifier_log.jsonl"))?);
    let outcome = train_classifier(&samples, &ctx.cfg.train, &mut TrainIo { log: Some(&mut log), ..TrainIo::default() })?;
    log.flush()?;
    save_params(&dir.join("params"), &outcome.params)?;
    let summary = ClassifierSummary {
        seed: ctx.cfg.train.seed,
        iterations: ctx.cfg.train.iters_classifier,
        final_loss: outcome.final_loss,
        train_accuracy: outcome.train_accuracy,
        params: "params".into(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(&summary)
}

/// `params` under `dir` when `dir` is a training output, else `dir` itself.
fn params_dir(dir: &Path) -> PathBuf {
    if dir.join("index.json").exists() {
        dir.to_path_buf()
    } else {
        dir.join("params")
    }
}

#[derive(Serialize, serde::Deserialize)]
struct MapEntry {
    image_path: String,
    png: String,
    wsf: String,
}

fn write_maps(dir: &Path, prefix: &str, data: &Path, images: &[String], maps: &[ScoreMap]) -> CliResult<()> {
    let mut entries = Vec::with_capacity(maps.len());
    for (i, (m, img)) in maps.iter().zip(images).enumerate() {
        let png = format!("{prefix}_{i:05}.png");
        let wsf = format!("{prefix}_{i:05}.wsf");
        write_map_png(&dir.join(&png), m)?;
        write_map_wsf(&dir.join(&wsf), m)?;
        entries.push(MapEntry { image_path: resolve(data, img).display().to_string(), png, wsf });
    }
    write_json(&dir.join(format!("{prefix}s.json")), &entries)?;
    Ok(())
}

fn image_names(data: &Path) -> CliResult<Vec<String>> {
    let manifest: Vec<wsod_core::io::ManifestEntry> = read_json(&data.join("manifest.json"))?;
    Ok(manifest.into_iter().map(|e| e.image_path).collect())
}

fn infer_cam(ctx: &Ctx, data: &Path, classifier: &Path) -> CliResult<()> {
    let samples = load_dataset(data)?;
    let params = load_params(&params_dir(classifier))?;
    let cam_cfg = &ctx.cfg.cam;
    let maps = ctx.pooled(|| {
        samples.par_iter().map(|s| multi_inference_cam(&params, &s.image, cam_cfg)).collect::<Result<Vec<_>, _>>()
    })??;
    let dir = ctx.out_dir()?;
    write_maps(&dir, "cam", data, &image_names(data)?, &maps)?;
    println!("wrote {} CAMs to {}", maps.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct LabelSummary {
    images: usize,
    mean_fg_y1: f64,
    mean_fg_y2: f64,
    differing_pairs: usize,
}

fn make_labels(ctx: &Ctx, data: &Path, cams: &Path) -> CliResult<()> {
    let samples = load_dataset(data)?;
    let entries: Vec<MapEntry> = read_json(&cams.join("cams.json"))?;
    if entries.len() != samples.len() {
        return Err(CliError::Domain(format!("{} CAMs for {} images", entries.len(), samples.len())));
    }
    let cam_maps = entries.iter().map(|e| read_map_wsf(&cams.join(&e.wsf))).collect::<Result<Vec<_>, _>>()?;
    let refine = &ctx.cfg.refine;
    let pairs = ctx.pooled(|| {
        samples
            .par_iter()
            .zip(cam_maps.par_iter())
            .map(|(s, cam)| synthesize_labels(&s.image, cam, refine))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let dir = ctx.out_dir()?;
    let names = image_names(data)?;
    let mut manifest = Vec::with_capacity(2 * pairs.len());
    for (i, (p, img)) in pairs.iter().zip(&names).enumerate() {
        for (tag, label) in [("y1", &p.y1), ("y2", &p.y2)] {
            let label_path = format!("{tag}_{i:05}.png");
            write_mask_png(&dir.join(&label_path), &label.mask)?;
            manifest.push(LabelEntry {
                image_path: resolve(data, img).display().to_string(),
                label_path,
                provenance: label.provenance,
            });
        }
    }
    write_json(&dir.join("labels.json"), &manifest)?;
    let n = pairs.len().max(1) as f64;
    let summary = LabelSummary {
        images: pairs.len(),
        mean_fg_y1: pairs.iter().map(|p| p.y1.mask.foreground_fraction()).sum::<f64>() / n,
        mean_fg_y2: pairs.iter().map(|p| p.y2.mask.foreground_fraction()).sum::<f64>() / n,
        differing_pairs: pairs.iter().filter(|p| p.y1.mask != p.y2.mask).count(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(&summary)
}

fn load_labels(dir: &Path, count: usize) -> CliResult<Vec<LabelPair>> {
    let entries: Vec<LabelEntry> = read_json(&dir.join("labels.json"))?;
    if entries.len() != 2 * count {
        return Err(CliError::Domain(format!("{} label files for {count} images", entries.len())));
    }
    let read = |e: &LabelEntry, want: Provenance| -> CliResult<PseudoLabel> {
        if e.provenance != want {
            return Err(CliError::Domain(format!("{}: expected a {want:?} label", e.label_path)));
        }
        Ok(PseudoLabel { mask: read_mask_png(&dir.join(&e.label_path))?, provenance: want })
    };
    entries
        .chunks(2)
        .map(|c| Ok(LabelPair { y1: read(&c[0], Provenance::Pixel)?, y2: read(&c[1], Provenance::Superpixel)? }))
        .collect()
}

fn training_set(ctx: &Ctx, data: &Path, labels: &Path) -> CliResult<TrainingSet> {
    let samples = load_dataset(data)?;
    let pairs = load_labels(labels, samples.len())?;
    let images = samples.into_iter().map(|s| s.image).collect();
    Ok(TrainingSet::new(images, pairs, &ctx.cfg.refine.pamr)?)
}

fn training_inputs(
    ctx: &Ctx,
    data: Option<PathBuf>,
    labels: Option<PathBuf>,
    test: Option<PathBuf>,
) -> CliResult<(TrainingSet, Vec<Sample>)> {
    let data = pick(data, &ctx.cfg.paths.data_dir, "dataset directory (--data)")?;
    let labels = pick(labels, &ctx.cfg.paths.label_dir, "label directory (--labels)")?;
    let test = pick(test, &ctx.cfg.paths.test_dir, "test dataset directory (--test)")?;
    ctx.cfg.train.validate()?;
    Ok((training_set(ctx, &data, &labels)?, load_dataset(&test)?))
}

#[derive(Serialize)]
struct TrainSummary {
    case: u8,
    seed: u64,
    delta: f64,
    last: LossRecord,
    params: String,
}

fn cmd_train(ctx: &Ctx, data: &Path, labels: &Path) -> CliResult<()> {
    ctx.cfg.train.validate()?;
    let set = training_set(ctx, data, labels)?;
    let dir = ctx.out_dir()?;
    let t = &ctx.cfg.train;
    let run_id = format!("case{}_seed{}", t.ablation_case, t.seed);
    let mut log = BufWriter::new(File::create(dir.join("train_log.jsonl"))?);
    let outcome = train_mfnet(
        &set,
        t,
        &mut TrainIo { log: Some(&mut log), checkpoint_dir: Some(&dir), run_id: run_id.clone() },
    )?;
    log.flush()?;
    let summary = TrainSummary {
        case: t.ablation_case,
        seed: t.seed,
        delta: t.delta,
        last: outcome.last,
        params: format!("{run_id}/{}/params", t.iters_saliency),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(&summary)
}

/// Final checkpoint of a `train` output directory, or `dir` itself.
fn model_dir(dir: &Path) -> CliResult<PathBuf> {
    if dir.join("index.json").exists() {
        return Ok(dir.to_path_buf());
    }
    let summary: serde_json::Value = read_json(&dir.join("summary.json"))?;
    let rel = summary["params"].as_str().ok_or_else(|| CliError::Domain("summary.json lacks `params`".into()))?;
    Ok(dir.join(rel))
}

fn infer(ctx: &Ctx, data: &Path, model: &Path) -> CliResult<()> {
    let samples = load_dataset(data)?;
    let params = load_params(&model_dir(model)?)?;
    let maps = ctx.pooled(|| {
        samples.par_iter().map(|s| infer_saliency(&params, &s.image)).collect::<Result<Vec<_>, _>>()
    })??;
    let dir = ctx.out_dir()?;
    write_maps(&dir, "pred", data, &image_names(data)?, &maps)?;
    println!("wrote {} saliency maps to {}", maps.len(), dir.display());
    Ok(())
}

fn sorted_pngs(dir: &Path, prefix: Option<&str>) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .filter(|p| prefix.is_none_or(|pre| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(pre))))
        .collect();
    files.sort();
    Ok(files)
}

/// Ground-truth files: one PNG, a dataset's masks, or every PNG of a
/// directory.
fn gt_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if path.join("manifest.json").exists() {
        let manifest: Vec<wsod_core::io::ManifestEntry> = read_json(&path.join("manifest.json"))?;
        return Ok(manifest.iter().map(|e| resolve(path, &e.gt_path)).collect());
    }
    sorted_pngs(path, None)
}

fn pred_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if path.join("preds.json").exists() {
        let entries: Vec<MapEntry> = read_json(&path.join("preds.json"))?;
        return Ok(entries.iter().map(|e| path.join(&e.png)).collect());
    }
    sorted_pngs(path, None)
}

fn cmd_eval(ctx: &Ctx, pred: &Path, gt: &Path) -> CliResult<()> {
    for p in [pred, gt] {
        if !p.exists() {
            return Err(CliError::Config(format!("{} does not exist", p.display())));
        }
    }
    let (pf, gf) = (pred_files(pred)?, gt_files(gt)?);
    if pf.len() != gf.len() || pf.is_empty() {
        return Err(CliError::Domain(format!("{} predictions for {} ground-truth masks", pf.len(), gf.len())));
    }
    let loaded = ctx.pooled(|| {
        pf.par_iter()
            .zip(gf.par_iter())
            .map(|(p, g)| Ok((read_map_png(p)?, read_mask_png(g)?)))
            .collect::<Result<Vec<(ScoreMap, BinaryMask)>, Error>>()
    })??;
    let (preds, gts): (Vec<ScoreMap>, Vec<BinaryMask>) = loaded.into_iter().unzip();
    let report = ctx.pooled(|| {
        let per_image = preds
            .par_iter()
            .zip(gts.par_iter())
            .map(|(p, g)| ImageMetrics::compute(p, g, ctx.cfg.policy))
            .collect::<Result<Vec<_>, _>>()?;
        Ok::<_, Error>(MetricsReport::from_per_image(gt.display().to_string(), ctx.cfg.policy, per_image))
    })??;
    if let Some(out) = &ctx.out {
        write_json(out, &report)?;
    }
    print_json(&report.mean)
}
