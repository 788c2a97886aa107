//! Supervised fine-tuning, evaluation and the ablation runner.

mod metrics;
mod model;
mod optim;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::config::KeyValues;
use crate::error::{ModelError, Result};
use crate::tensor::{Checkpoint, Scalar};
use crate::video::{derive_rng, merge_train_val, stack_clips, DatasetManifest, Instance, PipelineConfig, Preprocessor, Sampling, Split, VideoSource};

pub use metrics::{build_id, cross_entropy, rank_of, topk_accuracy, EvalReport};
pub use model::{freeze_layers, ClassifierModel, FineTuned, ModelConfig, MODEL_KEYS};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};

pub const TRAIN_KEYS: &[&str] = &["batch", "epochs", "lr", "frames", "sampling", "fine_tuned_layers", "seed"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub frames: usize,
    pub sampling: Sampling,
    pub fine_tuned: FineTuned,
    pub seed: u64,
}

impl TrainConfig {
    /// 15 epochs, batch 4, 16 consecutive frames, top three blocks.
    pub fn base() -> Self {
        Self {
            batch: 4,
            epochs: 15,
            lr: 1e-4,
            frames: 16,
            sampling: Sampling::Consecutive,
            fine_tuned: FineTuned::Top(3),
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            batch: 4,
            epochs: 20,
            lr: 1e-3,
            frames: 8,
            sampling: Sampling::Consecutive,
            fine_tuned: FineTuned::All,
            seed: 0,
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.batch == 0 || self.frames == 0 || !(self.lr > 0.0) {
            return Err(ModelError::Config(format!("batch, frames and lr must be positive: {self:?}")));
        }
        match self.fine_tuned {
            FineTuned::Top(k) if k == 0 || k > depth => Err(ModelError::Config(format!(
                "fine_tuned_layers {k} outside 1..={depth}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let bad = |e: crate::config::ConfigError| ModelError::Config(e.to_string());
        if let Some(v) = kv.get("batch").map_err(bad)? {
            self.batch = v;
        }
        if let Some(v) = kv.get("epochs").map_err(bad)? {
            self.epochs = v;
        }
        if let Some(v) = kv.get("lr").map_err(bad)? {
            self.lr = v;
        }
        if let Some(v) = kv.get("frames").map_err(bad)? {
            self.frames = v;
        }
        if let Some(v) = kv.get::<String>("sampling").map_err(bad)? {
            self.sampling = v.parse().map_err(ModelError::Config)?;
        }
        if let Some(v) = kv.get::<String>("fine_tuned_layers").map_err(bad)? {
            self.fine_tuned = v.parse().map_err(ModelError::Config)?;
        }
        if let Some(v) = kv.get("seed").map_err(bad)? {
            self.seed = v;
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("batch", self.batch);
        kv.set("epochs", self.epochs);
        kv.set("lr", self.lr);
        kv.set("frames", self.frames);
        kv.set("sampling", self.sampling);
        kv.set("fine_tuned_layers", self.fine_tuned);
        kv.set("seed", self.seed);
        kv
    }

    fn pipeline(&self, base: &PipelineConfig, crop: usize) -> PipelineConfig {
        PipelineConfig {
            target_frames: self.frames,
            sampling: self.sampling,
            crop,
            seed: self.seed,
            ..base.clone()
        }
    }
}

/// A manifest together with the decoded videos it lists.
#[derive(Debug, Clone)]
pub struct VideoSet {
    pub manifest: DatasetManifest,
    videos: BTreeMap<String, VideoSource>,
}

impl VideoSet {
    pub fn new(manifest: DatasetManifest, videos: impl IntoIterator<Item = VideoSource>) -> Result<Self> {
        let videos: BTreeMap<String, VideoSource> = videos.into_iter().map(|v| (v.id.clone(), v)).collect();
        if let Some(missing) = manifest.instances.iter().find(|i| !videos.contains_key(&i.video_id)) {
            return Err(ModelError::Config(format!("no video for manifest entry {}", missing.video_id)));
        }
        Ok(Self { manifest, videos })
    }

    pub fn video(&self, id: &str) -> Option<&VideoSource> {
        self.videos.get(id)
    }

    pub fn instances(&self, split: Split) -> Vec<&Instance> {
        self.manifest.split(split).collect()
    }

    pub fn merged(&self) -> Self {
        Self {
            manifest: merge_train_val(&self.manifest),
            videos: self.videos.clone(),
        }
    }
}

/// One training step as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,loss,lr,wall_ms";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss, self.lr, self.wall_ms)
    }
}

/// Progress notifications from [`finetune`]. At `Epoch` the model holds the
/// weights the report was computed with.
#[derive(Debug, Clone, Copy)]
pub enum TrainEvent<'a> {
    Step(&'a StepLog),
    Epoch {
        epoch: usize,
        steps: usize,
        report: &'a EvalReport,
    },
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T: Scalar> {
    /// Test-split report of the initialization (epoch 0), then one per epoch.
    pub reports: Vec<EvalReport>,
    pub best_epoch: usize,
    pub best: Checkpoint<T>,
    pub steps: Vec<StepLog>,
}

fn empty_split(split: Split) -> ModelError {
    ModelError::Config(format!("{split:?} split is empty"))
}

/// Deterministic evaluation of `split`: configured sampling with the
/// pipeline seed, center crop, no flip. Frame count and crop follow the
/// model.
pub fn evaluate<T: Scalar>(
    model: &ClassifierModel<T>,
    data: &VideoSet,
    split: Split,
    pipeline: &PipelineConfig,
    batch: usize,
) -> Result<EvalReport> {
    if model.num_classes() != data.manifest.num_classes() {
        return Err(ModelError::ClassMismatch {
            head: model.num_classes(),
            manifest: data.manifest.num_classes(),
        });
    }
    let started = Instant::now();
    let pre = Preprocessor::new(PipelineConfig {
        crop: model.cfg.crop,
        target_frames: model.cfg.frames,
        ..pipeline.clone()
    })?;
    let items = data.instances(split);
    if items.is_empty() {
        return Err(empty_split(split));
    }
    let classes = model.num_classes();
    let mut logits = Vec::with_capacity(items.len() * classes);
    let mut labels = Vec::with_capacity(items.len());
    let mut loss_sum = 0.0;
    for chunk in items.chunks(batch.max(1)) {
        let clips = chunk
            .iter()
            .map(|i| pre.eval_clip(video_of(data, i)?).map_err(ModelError::from))
            .collect::<Result<Vec<_>>>()?;
        let x = stack_clips::<T>(&clips)?;
        let ys: Vec<usize> = chunk.iter().map(|i| i.class).collect();
        let (out, _) = model.forward(&x, false)?;
        loss_sum += cross_entropy(&out, &ys)?.item().to_f64() * ys.len() as f64;
        logits.extend(out.to_f64_vec());
        labels.extend(ys);
    }
    let mut report = EvalReport::from_logits(&logits, classes, &labels, loss_sum / labels.len() as f64)?;
    report.seed = pipeline.seed;
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

fn video_of<'a>(data: &'a VideoSet, inst: &Instance) -> Result<&'a VideoSource> {
    data.video(&inst.video_id)
        .ok_or_else(|| ModelError::Config(format!("no video for {}", inst.video_id)))
}

/// Fine-tunes `model` in place on the merged train+val split, evaluating on
/// the test split after every epoch. The best checkpoint is the one with
/// the highest test top-1, the earlier epoch winning ties.
pub fn finetune<T: Scalar>(
    data: &VideoSet,
    model: &ClassifierModel<T>,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
    on_event: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<FinetuneOutcome<T>> {
    cfg.validate(model.encoder.depth())?;
    if cfg.frames != model.cfg.frames {
        return Err(ModelError::Config(format!(
            "training samples {} frames, model expects {}",
            cfg.frames, model.cfg.frames
        )));
    }
    let data = data.merged();
    let train = data.instances(Split::Train);
    if train.is_empty() {
        return Err(empty_split(Split::Train));
    }
    let pcfg = cfg.pipeline(pipeline, model.cfg.crop);
    let pre = Preprocessor::new(pcfg.clone())?;
    freeze_layers(model, cfg.fine_tuned)?;
    let mut opt = Adam::new(model.params(), AdamConfig::with_lr(cfg.lr));
    opt.zero_grad();

    let echo = echo_config(model, cfg);
    let report_for = |epoch: usize| -> Result<EvalReport> {
        let mut r = evaluate(model, &data, Split::Test, &pcfg, cfg.batch)?;
        r.epoch = Some(epoch);
        r.config = echo.clone();
        Ok(r)
    };
    let mut reports = vec![report_for(0)?];
    let mut best = (0, reports[0].top1, model.checkpoint());
    let started = Instant::now();
    let mut steps = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut derive_rng(cfg.seed, "finetune/order", epoch as u64));
        for chunk in order.chunks(cfg.batch) {
            let clips = chunk
                .iter()
                .map(|i| pre.train_clip(video_of(&data, i)?, epoch as u64).map_err(ModelError::from))
                .collect::<Result<Vec<_>>>()?;
            let x = stack_clips::<T>(&clips)?;
            let ys: Vec<usize> = chunk.iter().map(|i| i.class).collect();
            let (logits, _) = model.forward(&x, false)?;
            let loss = cross_entropy(&logits, &ys)?;
            let value = loss.item().to_f64();
            if !value.is_finite() {
                return Err(ModelError::NonFinite { step: steps.len() + 1 });
            }
            loss.backward()?;
            opt.step()?;
            let log = StepLog {
                step: steps.len() + 1,
                epoch,
                loss: value,
                lr: cfg.lr,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            on_event(TrainEvent::Step(&log));
            steps.push(log);
        }
        let report = report_for(epoch)?;
        on_event(TrainEvent::Epoch {
            epoch,
            steps: steps.len(),
            report: &report,
        });
        if epoch == 1 || report.top1 > best.1 {
            best = (epoch, report.top1, model.checkpoint());
        }
        reports.push(report);
    }
    Ok(FinetuneOutcome {
        reports,
        best_epoch: best.0,
        best: best.2,
        steps,
    })
}

fn echo_config<T: Scalar>(model: &ClassifierModel<T>, cfg: &TrainConfig) -> BTreeMap<String, String> {
    let mut echo = model.cfg.to_key_values().entries;
    echo.extend(cfg.to_key_values().entries);
    echo
}

/// One row of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationEntry {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub entry: AblationEntry,
    /// The seed the row actually ran with.
    pub seed: u64,
    /// Best test top-1, or the error that stopped the run.
    pub top1: std::result::Result<f64, String>,
}

pub const ABLATION_HEADER: &str = "Batch,Epochs,Frames,Init. LR,Model,Fine-Tuned Layers,Sampling,Top-1 Acc. (%)";

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let t = &self.entry.train;
        let sampling = match t.sampling {
            Sampling::Consecutive => "Consec.",
            Sampling::Even => "Even",
        };
        let acc = match &self.top1 {
            Ok(v) => format!("{:.2}", v * 100.0),
            Err(e) => format!("ERROR: {}", e.replace([',', '\n'], " ")),
        };
        format!(
            "{},{},{},{:e},{},{},{},{}",
            t.batch, t.epochs, t.frames, t.lr, self.entry.model.variant, t.fine_tuned, sampling, acc
        )
    }
}

/// Seed of row `index`: derived from the grid seed and the row position, so
/// rows never share a stream even when their configs coincide.
pub fn row_seed(grid_seed: u64, index: usize) -> u64 {
    derive_rng(grid_seed, "ablation/row", index as u64).next_u64()
}

/// Runs every entry from a fresh seeded initialization, in order. A failed
/// row is recorded and the grid continues.
pub fn run_ablation<T: Scalar>(
    grid: &[AblationEntry],
    data: &VideoSet,
    pipeline: &PipelineConfig,
    grid_seed: u64,
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(ModelError::Config("ablation grid is empty".into()));
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let seed = row_seed(grid_seed, i);
            let train = TrainConfig { seed, ..entry.train.clone() };
            let top1 = (|| -> Result<f64> {
                let mut init = derive_rng(seed, "ablation/init", 0);
                let model = ClassifierModel::<T>::new(entry.model.clone(), data.manifest.num_classes(), &mut init)?;
                let out = finetune(data, &model, pipeline, &train, &mut |_| {})?;
                Ok(out.reports[out.best_epoch].top1)
            })()
            .map_err(|e| e.to_string());
            AblationRow {
                entry: entry.clone(),
                seed,
                top1,
            }
        })
        .collect())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
