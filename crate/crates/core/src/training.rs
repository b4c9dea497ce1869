//! Two-stage training: a static single-frame model first, then a recurrent
//! model fine-tuned on sliding windows from the stage-1 backbone.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_tensors, Checkpoint, CheckpointMeta};
use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::geometry::GazeAngles;
use crate::metrics::{mae, ErrorStats};
use crate::models::{frames_to_tensor, init_parameters, GazeModel, ModelConfig, ModelKind, ModelVariant, WindowBatch};
use crate::nn::{Module, Real, Tensor};
use crate::seed;

pub const TRAINLOG_FILE: &str = "trainlog.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const INPUT_NORMALIZATION: &str = "unit_interval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs_stage1: usize,
    pub max_epochs_stage2: usize,
    pub patience_stage1: usize,
    pub patience_stage2: usize,
    pub seed: u64,
    /// frames per window in stage 2
    pub window: usize,
    /// stage-2 batches are built from runs of this many consecutive windows
    /// of one sequence, so the backbone sees fewer distinct frames per step
    pub window_chunk: usize,
    /// cap on training samples drawn per epoch (a fresh random subset each
    /// epoch); `None` uses every sample
    pub samples_per_epoch: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            batch_size: 32,
            weight_decay: 0.00001,
            max_epochs_stage1: 150,
            max_epochs_stage2: 30,
            patience_stage1: 10,
            patience_stage2: 5,
            seed: 0,
            window: 15,
            window_chunk: 8,
            samples_per_epoch: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs_stage1", self.max_epochs_stage1),
            ("max_epochs_stage2", self.max_epochs_stage2),
            ("patience_stage1", self.patience_stage1),
            ("patience_stage2", self.patience_stage2),
            ("window", self.window),
            ("window_chunk", self.window_chunk),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::invalid("samples_per_epoch must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn max_epochs(&self, stage: u8) -> usize {
        if stage == 1 {
            self.max_epochs_stage1
        } else {
            self.max_epochs_stage2
        }
    }

    fn patience(&self, stage: u8) -> usize {
        if stage == 1 {
            self.patience_stage1
        } else {
            self.patience_stage2
        }
    }
}

/// Mean absolute error over every element, and its gradient
/// `sign(pred - target) / numel`.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.dims != target.dims || pred.numel() == 0 {
        return Err(Error::shape(format!("l1 loss: {:?} vs {:?}", pred.dims, target.dims)));
    }
    let n = pred.numel() as f64;
    let inv = T::lit(1.0 / n);
    let mut total = 0.0;
    let mut grad = Tensor::zeros(&pred.dims);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        total += d.to_f64().unwrap_or(f64::NAN).abs();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((total / n, grad))
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, wd, eps) = (T::lit(self.learning_rate), T::lit(self.weight_decay), T::lit(self.eps));
        let one = T::one();
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params_mut(&mut |p| {
            if ms.len() <= idx {
                ms.push(vec![T::zero(); p.len()]);
                vs.push(vec![T::zero(); p.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for k in 0..p.value.len() {
                let g = p.grad[k] + wd * p.value[k];
                m[k] = b1 * m[k] + (one - b1) * g;
                v[k] = b2 * v[k] + (one - b2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.value[k] = p.value[k] - lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStop {
    pub stop: bool,
    /// 1-based epoch with the lowest value, earliest on ties
    pub best_epoch: usize,
}

/// Stops once `patience` epochs have passed without beating the best value.
pub fn early_stop(history: &[f64], patience: usize) -> Result<EarlyStop> {
    if history.is_empty() {
        return Err(Error::invalid("empty validation history"));
    }
    let mut best = 0;
    for (i, v) in history.iter().enumerate() {
        if *v < history[best] {
            best = i;
        }
    }
    Ok(EarlyStop {
        stop: history.len() - 1 - best >= patience,
        best_epoch: best + 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_l1: f64,
    pub val: ErrorStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

pub fn write_trainlog(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_l1,val_mae_yaw,val_mae_pitch,val_mae_mean\n");
    for r in epochs {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_l1, r.val.mae_yaw, r.val.mae_pitch, r.val.mae_mean
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Provenance of the data a run was trained on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataInfo {
    pub seed: u64,
    pub manifest_sha256: String,
}

/// A window identified by its sequence and the index of its last frame.
pub type WindowRef = (usize, usize);

/// Assembles the distinct frames, window indices, and last-frame targets of
/// a batch. Frames are packed in order of first use.
pub fn assemble_batch(
    seqs: &[Sequence],
    windows: &[WindowRef],
    window: usize,
    config: &ModelConfig,
) -> Result<(Tensor<f32>, WindowBatch, Tensor<f32>)> {
    let mut rows: HashMap<(usize, usize), usize> = HashMap::new();
    let mut frames: Vec<&[u8]> = Vec::new();
    let mut indices = Vec::with_capacity(windows.len() * window);
    let mut targets = Vec::with_capacity(windows.len() * 2);
    for &(si, last) in windows {
        let seq = seqs.get(si).ok_or_else(|| Error::invalid("window refers to a missing sequence"))?;
        if !seq.normalized {
            return Err(Error::invalid(format!("{} is not side-normalized", seq.key.tag())));
        }
        if last >= seq.len() || last + 1 < window {
            return Err(Error::invalid(format!("no {window}-frame window ends at {last} in {}", seq.key.tag())));
        }
        for f in last + 1 - window..=last {
            let next = frames.len();
            let row = *rows.entry((si, f)).or_insert_with(|| {
                frames.push(seq.frame(f));
                next
            });
            indices.push(row);
        }
        targets.push(seq.gaze[last].yaw_deg as f32);
        targets.push(seq.gaze[last].pitch_deg as f32);
    }
    let x = frames_to_tensor(&frames, config.input_height, config.input_width)?;
    let y = Tensor::from_vec(&[windows.len(), 2], targets)?;
    Ok((x, WindowBatch { window, indices }, y))
}

/// One optimizer step; returns the batch loss before the update.
pub fn train_step(
    model: &mut GazeModel<f32>,
    adam: &mut Adam<f32>,
    frames: &Tensor<f32>,
    batch: &WindowBatch,
    targets: &Tensor<f32>,
) -> Result<f64> {
    model.zero_grad();
    let out = model.forward(frames, batch, true)?;
    let (loss, grad) = l1_loss(&out, targets)?;
    model.backward(&grad)?;
    adam.step(model);
    Ok(loss)
}

/// Eval-mode error over every window each sequence supports.
pub fn validate_model(model: &mut GazeModel<f32>, seqs: &[Sequence]) -> Result<ErrorStats> {
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for seq in seqs {
        if !seq.normalized {
            return Err(Error::invalid(format!("{} is not side-normalized", seq.key.tag())));
        }
        let frames: Vec<&[u8]> = (0..seq.len()).map(|i| seq.frame(i)).collect();
        for (i, p) in model.predict_frames(&frames)?.into_iter().enumerate() {
            if let Some([y, p]) = p {
                preds.push(GazeAngles::new(y, p));
                gts.push(seq.gaze[i]);
            }
        }
    }
    mae(&preds, &gts)
}

fn epoch_plan(seqs: &[Sequence], cfg: &TrainConfig, stage: u8, window: usize, epoch: usize) -> Vec<Vec<WindowRef>> {
    let mut rng = seed::rng(cfg.seed, &[seed::SHUFFLE, stage as u64, epoch as u64]);
    let chunk = if stage == 1 { 1 } else { cfg.window_chunk };
    let mut chunks: Vec<Vec<WindowRef>> = Vec::new();
    for (si, seq) in seqs.iter().enumerate() {
        if seq.len() < window {
            continue;
        }
        let lasts: Vec<usize> = (window - 1..seq.len()).collect();
        chunks.extend(lasts.chunks(chunk).map(|c| c.iter().map(|&l| (si, l)).collect()));
    }
    chunks.shuffle(&mut rng);
    if let Some(cap) = cfg.samples_per_epoch {
        let mut taken = 0;
        let keep = chunks
            .iter()
            .take_while(|c| {
                let go = taken < cap;
                taken += c.len();
                go
            })
            .count();
        chunks.truncate(keep);
    }
    let per_batch = (cfg.batch_size / chunk).max(1);
    chunks.chunks(per_batch).map(|group| group.concat()).collect()
}

pub struct TrainOutcome {
    pub model: GazeModel<f32>,
    pub log: TrainLog,
    pub checkpoint: Checkpoint,
}

#[allow(clippy::too_many_arguments)]
fn fit(
    mut model: GazeModel<f32>,
    stage: u8,
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
    data: &DataInfo,
    run_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training needs non-empty TRAIN and VAL splits"));
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    let window = model.variant.window;
    let mut adam = Adam::new(cfg.learning_rate, cfg.weight_decay);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs(stage) {
        let (mut sum, mut count) = (0.0, 0usize);
        for windows in epoch_plan(train, cfg, stage, window, epoch) {
            let (x, batch, y) = assemble_batch(train, &windows, window, &model.config)?;
            let loss = train_step(&mut model, &mut adam, &x, &batch, &y)?;
            if !loss.is_finite() {
                return Err(Error::Data(format!("non-finite training loss at epoch {epoch}")));
            }
            sum += loss * windows.len() as f64;
            count += windows.len();
        }
        let record = EpochRecord {
            epoch,
            train_l1: sum / count.max(1) as f64,
            val: validate_model(&mut model, val)?,
        };
        progress(&record);
        history.push(record.val.mae_mean);
        epochs.push(record);
        let decision = early_stop(&history, cfg.patience(stage))?;
        if decision.best_epoch == epoch {
            let meta = CheckpointMeta {
                variant: model.variant.kind,
                window,
                epoch,
                val_mae_mean_deg: history[epoch - 1],
                seed: cfg.seed,
                param_count: model.param_count(),
                stage,
                dataset_seed: data.seed,
                dataset_manifest_sha256: data.manifest_sha256.clone(),
                input_normalization: INPUT_NORMALIZATION.into(),
                stop_reason: String::new(),
                epochs_run: epoch,
                model: model.config.clone(),
            };
            let ck = Checkpoint::from_model(&model, meta);
            if let Some(dir) = run_dir {
                ck.save(dir)?;
            }
            best = Some(ck);
        }
        if let Some(dir) = run_dir {
            write_trainlog(&dir.join(TRAINLOG_FILE), &epochs)?;
        }
        if decision.stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let mut checkpoint = best.ok_or_else(|| Error::Data("no epoch completed".into()))?;
    checkpoint.meta.stop_reason = stop_reason.as_str().into();
    checkpoint.meta.epochs_run = epochs.len();
    if let Some(dir) = run_dir {
        checkpoint.save(dir)?;
    }
    let model = checkpoint.to_model()?;
    let log = TrainLog {
        best_epoch: checkpoint.meta.epoch,
        epochs,
        stop_reason,
    };
    Ok(TrainOutcome { model, log, checkpoint })
}

/// Stage 1: backbone and static head trained from scratch on single
/// side-normalized frames.
pub fn train_stage1(
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
    data: &DataInfo,
    run_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    train_static(ModelVariant::STATIC1, train, val, cfg, data, run_dir, progress)
}

/// Stage-1 training for either static head.
pub fn train_static(
    variant: ModelVariant,
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
    data: &DataInfo,
    run_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if variant.is_temporal() {
        return Err(Error::invalid("stage 1 trains static variants only"));
    }
    let model = init_parameters(variant, &cfg.model, cfg.seed)?;
    fit(model, 1, train, val, cfg, data, run_dir, progress)
}

/// Builds the stage-2 starting point: the stage-1 backbone with a fresh
/// recurrent module and head.
pub fn stage2_init(stage1: &Checkpoint, window: usize, seed: u64) -> Result<GazeModel<f32>> {
    if stage1.meta.variant != ModelKind::Static1 {
        return Err(Error::invalid(format!("stage 2 needs a STATIC1 checkpoint, got {}", stage1.meta.variant)));
    }
    if window < 2 {
        return Err(Error::invalid("stage 2 needs a window of at least 2 frames"));
    }
    let mut model = init_parameters(ModelVariant::temporal(window)?, &stage1.meta.model, seed)?;
    load_tensors(&mut model, &stage1.tensors, "backbone.")?;
    Ok(model)
}

/// Stage 2: fine-tunes the stage-1 backbone jointly with a new LSTM and head
/// on `cfg.window`-frame windows.
pub fn train_stage2(
    stage1: &Checkpoint,
    train: &[Sequence],
    val: &[Sequence],
    cfg: &TrainConfig,
    data: &DataInfo,
    run_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = stage2_init(stage1, cfg.window, cfg.seed)?;
    fit(model, 2, train, val, cfg, data, run_dir, progress)
}
