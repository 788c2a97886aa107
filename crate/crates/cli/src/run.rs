//! Subcommand bodies. Each reads its resolved settings, does the work, and
//! leaves its outputs plus `config.txt` under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use vslr_core::attention::{attention_rollout, export_heatmaps};
use vslr_core::config::KeyValues;
use vslr_core::embedding::Variant;
use vslr_core::mae::{pretrain, MaeModel, PretrainConfig};
use vslr_core::tensor::{load_checkpoint, save_checkpoint, set_kernel_threads, Checkpoint, Scalar};
use vslr_core::train::{
    ablation_csv, evaluate, finetune, run_ablation, AblationEntry, ClassifierModel, EvalReport, ModelConfig, StepLog,
    TrainConfig, TrainEvent, VideoSet,
};
use vslr_core::video::{
    derive_rng, load_dataset, load_manifest, make_synthetic_dataset, read_video_file, stack_clips, write_dataset,
    PipelineConfig, Preprocessor, Sampling, Split, SyntheticConfig,
};

use crate::error::CliError;
use crate::settings::Resolved;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(r: &Resolved) -> Result<String> {
    let threads: usize = r.get("threads")?;
    if threads == 0 {
        return Err(CliError::config("--threads must be at least 1"));
    }
    set_kernel_threads(threads);
    let out = PathBuf::from(&r.out);
    fs::create_dir_all(&out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    fs::write(out.join("config.txt"), r.echo())?;
    match r.command {
        "gen-data" => gen_data(r, &out),
        "validate-manifest" => validate_manifest(r, &out),
        _ => match r.get::<u32>("precision")? {
            32 => typed::<f32>(r, &out),
            64 => typed::<f64>(r, &out),
            p => Err(CliError::config(format!("--precision must be 32 or 64, got {p}"))),
        },
    }
}

fn typed<T: Scalar>(r: &Resolved, out: &Path) -> Result<String> {
    match r.command {
        "pretrain" => pretrain_cmd::<T>(r, out),
        "finetune" => finetune_cmd::<T>(r, out),
        "evaluate" => evaluate_cmd::<T>(r, out),
        "ablate" => ablate_cmd::<T>(r, out),
        "attn-map" => attn_map::<T>(r, out),
        other => Err(CliError::usage(format!("unknown subcommand {other}"))),
    }
}

fn gen_data(r: &Resolved, out: &Path) -> Result<String> {
    let cfg = SyntheticConfig {
        classes: r.get("classes")?,
        per_class: r.get("per_class")?,
        frames: r.get("frames")?,
        size: r.get("size")?,
        seed: r.get("seed")?,
    };
    let ds = make_synthetic_dataset(&cfg, r.get("crop")?)?;
    write_dataset(out, &ds)?;
    Ok(format!(
        "wrote {} videos of {} classes to {}",
        ds.videos.len(),
        cfg.classes,
        out.display()
    ))
}

fn videos_dir(r: &Resolved) -> Result<PathBuf> {
    if let Some(v) = r.try_get::<String>("videos")? {
        return Ok(PathBuf::from(v));
    }
    let manifest: String = r.get("manifest")?;
    Ok(Path::new(&manifest).parent().unwrap_or(Path::new(".")).join("videos"))
}

fn pipeline(r: &Resolved) -> Result<PipelineConfig> {
    let cfg = PipelineConfig {
        target_frames: r.get("frames")?,
        sampling: sampling(r)?,
        crop: r.get("crop")?,
        resize_short: r.get("resize_short")?,
        resize_long: r.get("resize_long")?,
        seed: r.get("seed")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sampling(r: &Resolved) -> Result<Sampling> {
    r.get::<String>("sampling")?.parse().map_err(CliError::config)
}

fn start_frame(r: &Resolved) -> Result<Option<usize>> {
    let start = r.try_get::<usize>("start_frame")?;
    if start.is_some() && sampling(r)? == Sampling::Even {
        return Err(CliError::new(
            "conflicting flags",
            "--start-frame pins a consecutive window and cannot be combined with --sampling even",
        ));
    }
    Ok(start)
}

fn validate_manifest(r: &Resolved, out: &Path) -> Result<String> {
    let manifest_path: String = r.get("manifest")?;
    let manifest = load_manifest(&manifest_path)?;
    if r.get::<bool>("wlasl_bounds")? {
        manifest.validate_wlasl_bounds().map_err(|e| CliError::new("manifest", e))?;
    }
    let counts = manifest.split_counts();
    let totals = counts.iter().fold([0usize; 3], |acc, c| [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]]);
    let mut checked = 0;
    if let Some(dir) = r.try_get::<String>("videos")? {
        let pre = Preprocessor::new(pipeline(r)?)?;
        for inst in &manifest.instances {
            let path = Path::new(&dir).join(format!("{}.vsv", inst.video_id));
            let video = read_video_file(&path, &inst.video_id, Some(inst.class))?;
            pre.eval_clip(&video)
                .map_err(|e| CliError::from(e).with_context(&format!("video {}", inst.video_id)))?;
            checked += 1;
        }
    }
    let summary = serde_json::json!({
        "classes": manifest.num_classes(),
        "instances": manifest.instances.len(),
        "train": totals[0],
        "val": totals[1],
        "test": totals[2],
        "preprocessed": checked,
    });
    fs::write(out.join("validation.json"), format!("{summary:#}\n"))?;
    Ok(format!(
        "{} classes, {} instances (train {}, val {}, test {}); {checked} videos preprocessed",
        manifest.num_classes(),
        manifest.instances.len(),
        totals[0],
        totals[1],
        totals[2]
    ))
}

fn model_config(r: &Resolved, variant: Option<Variant>) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::desk(variant.unwrap_or(Variant::Divided));
    cfg.apply(&r.kv)?;
    if let Some(v) = variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(kv: &KeyValues) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::desk();
    cfg.apply(kv)?;
    Ok(cfg)
}

fn load_videos(r: &Resolved) -> Result<VideoSet> {
    let ds = load_dataset(r.get::<String>("manifest")?, videos_dir(r)?)?;
    Ok(VideoSet::new(ds.manifest, ds.videos)?)
}

fn read_checkpoint<T: Scalar>(path: &str) -> Result<Checkpoint<T>> {
    load_checkpoint(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::io(format!("{path}: {e}")),
        _ => CliError::new("checkpoint", format!("{path}: {e}")),
    })
}

fn pretrain_cmd<T: Scalar>(r: &Resolved, out: &Path) -> Result<String> {
    let model_cfg = model_config(r, Some(Variant::Joint))?;
    let mut cfg = PretrainConfig::desk();
    cfg.apply(&r.kv)?;
    let videos = load_dataset(r.get::<String>("manifest")?, videos_dir(r)?)?.videos;
    let pre = Preprocessor::new(pipeline(r)?)?;
    let mut init = derive_rng(cfg.seed, "pretrain/init", 0);
    let model = MaeModel::<T>::new(cfg.mae_config(model_cfg), &mut init)?;
    let losses = pretrain(&videos, &pre, &model, &cfg, Some(out))?;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let k = losses.len().min(10);
    Ok(format!(
        "{} steps; loss {:.4} (first {k}) -> {:.4} (last {k}); wrote {}",
        losses.len(),
        mean(&losses[..k]),
        mean(&losses[losses.len() - k..]),
        out.join("mae.ckpt").display()
    ))
}

fn report_json(reports: &[EvalReport]) -> String {
    let stable: Vec<EvalReport> = reports.iter().map(EvalReport::without_timing).collect();
    serde_json::to_string_pretty(&stable).expect("reports serialize") + "\n"
}

fn finetune_cmd<T: Scalar>(r: &Resolved, out: &Path) -> Result<String> {
    let variant: Variant = r.get::<String>("variant")?.parse().map_err(CliError::config)?;
    let model_cfg = model_config(r, Some(variant))?;
    let cfg = train_config(&r.kv)?;
    let data = load_videos(r)?;
    let pipe = pipeline(r)?;
    let mut init = derive_rng(cfg.seed, "finetune/init", 0);
    let model = ClassifierModel::<T>::new(model_cfg, data.manifest.num_classes(), &mut init)?;
    if let Some(path) = r.try_get::<String>("init_encoder")? {
        model.load_encoder(&read_checkpoint(&path)?)?;
    }
    let mut log = String::from(StepLog::CSV_HEADER);
    log.push('\n');
    let outcome = finetune(&data, &model, &pipe, &cfg, &mut |event| match event {
        TrainEvent::Step(s) => {
            log.push_str(&s.csv_row());
            log.push('\n');
        }
        TrainEvent::Epoch { epoch, report, .. } => {
            eprintln!("epoch {epoch}: test top-1 {:.3}, loss {:.4}", report.top1, report.mean_loss);
        }
    })?;
    save_checkpoint(out.join("best.ckpt"), &outcome.best)?;
    save_checkpoint(out.join("last.ckpt"), &model.checkpoint())?;
    fs::write(out.join("train_log.csv"), log)?;
    fs::write(out.join("reports.json"), report_json(&outcome.reports))?;
    let best = &outcome.reports[outcome.best_epoch];
    Ok(format!(
        "{} steps; best epoch {} with test top-1 {:.3}; wrote {}",
        outcome.steps.len(),
        outcome.best_epoch,
        best.top1,
        out.join("best.ckpt").display()
    ))
}

fn classifier<T: Scalar>(r: &Resolved, data: &VideoSet) -> Result<ClassifierModel<T>> {
    let variant: Variant = r.get::<String>("variant")?.parse().map_err(CliError::config)?;
    let model_cfg = model_config(r, Some(variant))?;
    let model = ClassifierModel::<T>::new(model_cfg, data.manifest.num_classes(), &mut derive_rng(0, "", 0))?;
    model.load(&read_checkpoint(&r.get::<String>("checkpoint")?)?)?;
    Ok(model)
}

fn evaluate_cmd<T: Scalar>(r: &Resolved, out: &Path) -> Result<String> {
    let start = start_frame(r)?;
    let split = match r.get::<String>("split")?.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(CliError::config(format!("unknown split {other:?} (train | val | test)"))),
    };
    let data = load_videos(r)?;
    let model = classifier::<T>(r, &data)?;
    let pipe = pipeline(r)?;
    let report = match start {
        None => evaluate(&model, &data, split, &pipe, r.get("eval_batch")?)?,
        Some(s) => evaluate_pinned(&model, &data, split, &pipe, s)?,
    };
    fs::write(out.join("report.json"), report.without_timing().to_json() + "\n")?;
    fs::write(out.join("timing.txt"), format!("wall_ms = {}\n", report.wall_ms))?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    Ok(format!(
        "{} samples: top-1 {:.3}, top-5 {}, top-10 {}",
        report.samples,
        report.top1,
        fmt(report.top5),
        fmt(report.top10)
    ))
}

/// Evaluation with every clip starting at the same frame.
fn evaluate_pinned<T: Scalar>(
    model: &ClassifierModel<T>,
    data: &VideoSet,
    split: Split,
    pipe: &PipelineConfig,
    start: usize,
) -> Result<EvalReport> {
    let pre = Preprocessor::new(PipelineConfig {
        crop: model.cfg.crop,
        target_frames: model.cfg.frames,
        ..pipe.clone()
    })?;
    let items = data.instances(split);
    if items.is_empty() {
        return Err(CliError::config(format!("{split:?} split is empty")));
    }
    let classes = model.num_classes();
    let (mut logits, mut labels, mut loss) = (Vec::new(), Vec::new(), 0.0);
    for inst in items {
        let video = data
            .video(&inst.video_id)
            .ok_or_else(|| CliError::new("manifest", format!("no video for {}", inst.video_id)))?;
        let x = stack_clips::<T>(&[pre.eval_clip_from(video, Some(start))?])?;
        let (out, _) = model.forward(&x, false)?;
        loss += vslr_core::train::cross_entropy(&out, &[inst.class])?.item().to_f64();
        logits.extend(out.to_f64_vec());
        labels.push(inst.class);
    }
    let mut report = EvalReport::from_logits(&logits, classes, &labels, loss / labels.len() as f64)?;
    report.seed = pipe.seed;
    Ok(report)
}

/// Grid rows: one per non-empty line, `key=value` pairs separated by
/// whitespace or commas, each overriding the base settings.
fn parse_grid(text: &str) -> Result<Vec<KeyValues>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut kv = KeyValues::default();
        for pair in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("grid line {}: expected key=value, got {pair:?}", i + 1)))?;
            kv.set(k.trim(), v.trim());
        }
        rows.push(kv);
    }
    if rows.is_empty() {
        return Err(CliError::config("grid file has no rows"));
    }
    Ok(rows)
}

const GRID_KEYS: &[&str] = &[
    "variant",
    "dim",
    "depth",
    "heads",
    "patch",
    "frames",
    "crop",
    "batch",
    "epochs",
    "lr",
    "sampling",
    "fine_tuned_layers",
];

fn ablate_cmd<T: Scalar>(r: &Resolved, out: &Path) -> Result<String> {
    let rows = match r.try_get::<String>("grid")? {
        Some(path) => parse_grid(&fs::read_to_string(&path).map_err(|e| CliError::io(format!("{path}: {e}")))?)?,
        None => ["consecutive", "even"]
            .iter()
            .map(|s| {
                let mut kv = KeyValues::default();
                kv.set("sampling", s);
                kv
            })
            .collect(),
    };
    let mut grid = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        row.only(GRID_KEYS)
            .map_err(|e| CliError::config(format!("grid row {}: {e}", i + 1)))?;
        let mut kv = r.kv.clone();
        kv.entries.extend(row.entries.clone());
        let variant: Variant = kv
            .get::<String>("variant")
            .map_err(|e| CliError::config(e.to_string()))?
            .unwrap_or_else(|| "divided".into())
            .parse()
            .map_err(CliError::config)?;
        let mut model = ModelConfig::desk(variant);
        model.apply(&kv)?;
        grid.push(AblationEntry {
            model,
            train: train_config(&kv)?,
        });
    }
    let data = load_videos(r)?;
    let results = run_ablation::<T>(&grid, &data, &pipeline(r)?, r.get("seed")?)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&results))?;
    let failed = results.iter().filter(|row| row.top1.is_err()).count();
    Ok(format!(
        "{} rows ({failed} failed); wrote {}",
        results.len(),
        out.join("ablation.csv").display()
    ))
}

fn attn_map<T: Scalar>(r: &Resolved, out: &Path) -> Result<String> {
    let start = start_frame(r)?;
    let data = load_videos(r)?;
    let id: String = r.get("video")?;
    let video = data
        .video(&id)
        .ok_or_else(|| CliError::new("manifest", format!("video {id:?} is not in the manifest")))?;
    let model = classifier::<T>(r, &data)?;
    let pre = Preprocessor::new(PipelineConfig {
        crop: model.cfg.crop,
        target_frames: model.cfg.frames,
        ..pipeline(r)?
    })?;
    let x = stack_clips::<T>(&[pre.eval_clip_from(video, start)?])?;
    let (logits, trace) = model.forward(&x, true)?;
    let trace = trace.ok_or_else(|| CliError::new("model", "forward pass returned no attention trace"))?;
    let heat = attention_rollout(&trace, 0)?;
    let paths = export_heatmaps(out, &id, &heat, model.cfg.tube_depth(), (model.cfg.patch, model.cfg.patch))?;
    let scores = logits.to_f64_vec();
    let predicted = (0..scores.len()).fold(0, |best, c| if scores[c] > scores[best] { c } else { best });
    Ok(format!(
        "{} heatmaps for {id} (predicted {:?}); index at {}",
        paths.len(),
        data.manifest.glosses.get(predicted).map(String::as_str).unwrap_or("?"),
        out.join("index.txt").display()
    ))
}
