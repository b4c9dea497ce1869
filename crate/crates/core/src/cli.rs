//! The `gazeseq` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::{Checkpoint, SIDECAR_FILE};
use crate::dataset::{self, build_dataset, manifest_hash, read_gt, Dataset, GenerationParams, Split};
use crate::error::{Error, Result};
use crate::evaluation::{
    annotate_frames, compare_models, coverage, evaluate_model, export_trace, fixation_estimate_std, window_labels,
    write_metrics_csv, write_movement_csv, write_per_subject_csv, GazeEstimator, ModelEvaluation,
    DEFAULT_VELOCITY_THRESHOLD,
};
use crate::geometry::mirror_angles;
use crate::metrics::relative_improvement;
use crate::models::{GazeModel, ModelVariant};
use crate::oculomotor::AngleRange;
use crate::plot;
use crate::render::Side;
use crate::training::{train_stage2, train_static, DataInfo, EpochRecord, TrainConfig};

pub const THREADS_ENV: &str = "GAZESEQ_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gazeseq", version, about = "Gaze estimation from synthetic eye-image sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its manifest and subject split
    Synth(SynthArgs),
    /// Train stage 1 (static model) or stage 2 (recurrent fine-tuning)
    Train(TrainArgs),
    /// Score runs on the test split and write report tables
    Eval(EvalArgs),
    /// Render a report table as SVG
    Plot(PlotArgs),
    /// Label ground-truth frames with the velocity-threshold annotator
    Annotate(AnnotateArgs),
}

fn parse_range(s: &str) -> std::result::Result<AngleRange, String> {
    let r = match s.split_once(':') {
        Some((a, b)) => AngleRange {
            min: a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?,
            max: b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?,
        },
        None => {
            let half: f64 = s.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
            if half <= 0.0 {
                return Err("half-range must be positive".into());
            }
            AngleRange::symmetric(half)
        }
    };
    Ok(r)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// number of subjects (at least 8)
    #[arg(long)]
    pub subjects: usize,
    /// base seed for stimuli, appearance, noise and the split
    #[arg(long)]
    pub seed: u64,
    /// output directory
    #[arg(long)]
    pub out: PathBuf,
    /// fixation target yaw range in degrees: `A` for ±A or `MIN:MAX`
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub yaw_range: Option<AngleRange>,
    /// fixation target pitch range in degrees: `A` for ±A or `MIN:MAX`
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub pitch_range: Option<AngleRange>,
    /// sensor noise standard deviation (intensity units)
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// fixation targets per recording
    #[arg(long)]
    pub fixations: Option<usize>,
    /// JSON file with generation parameters; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StaticChoice {
    Static1,
    Static2,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// 1 trains the static model, 2 fine-tunes it with a recurrent head
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// dataset root
    #[arg(long)]
    pub data: PathBuf,
    /// run directory; stage 2 reads the stage-1 checkpoint here and writes
    /// to `{run}/s1_lstm{window}`
    #[arg(long)]
    pub run: PathBuf,
    /// frames per window (stage 2)
    #[arg(long)]
    pub window: Option<usize>,
    /// JSON file mirroring the training configuration; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// static head trained in stage 1
    #[arg(long, value_enum, default_value = "static1")]
    pub variant: StaticChoice,
    /// initialization and shuffling seed
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// maximum epochs for the selected stage
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// early-stopping patience for the selected stage
    #[arg(long)]
    pub patience: Option<usize>,
    /// training samples drawn per epoch
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    /// consecutive windows per sequence in a stage-2 batch
    #[arg(long)]
    pub window_chunk: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// dataset root
    #[arg(long)]
    pub data: PathBuf,
    /// comma-separated run directories; the first is the comparison
    /// baseline and the last the candidate
    #[arg(long, value_delimiter = ',', required = true)]
    pub runs: Vec<PathBuf>,
    /// longest window among compared models; defines the common subset
    #[arg(long)]
    pub smax: usize,
    /// report directory
    #[arg(long)]
    pub out: PathBuf,
    /// I-VT velocity threshold in deg/s
    #[arg(long, default_value_t = DEFAULT_VELOCITY_THRESHOLD)]
    pub threshold: f64,
    /// number of test sequences exported as traces
    #[arg(long, default_value_t = 1)]
    pub traces: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Trace,
    Improvement,
    Distribution,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// report directory written by `eval`
    #[arg(long)]
    pub report: PathBuf,
    /// figure to draw
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// output SVG file
    #[arg(long)]
    pub out: PathBuf,
    /// trace to draw (sequence tag such as `sub003_L_seq00`); default is the
    /// first one in the report
    #[arg(long)]
    pub trace: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// dataset root
    #[arg(long)]
    pub data: PathBuf,
    /// output CSV
    #[arg(long)]
    pub out: PathBuf,
    /// I-VT velocity threshold in deg/s
    #[arg(long, default_value_t = DEFAULT_VELOCITY_THRESHOLD)]
    pub threshold: f64,
    /// split whose sequences are annotated
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

/// Sizes the rayon pool from `GAZESEQ_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot size thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Annotate(a) => cmd_annotate(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut params = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => GenerationParams::default(),
    };
    if let Some(r) = a.yaw_range {
        params.yaw_range = r;
    }
    if let Some(r) = a.pitch_range {
        params.pitch_range = r;
    }
    if let Some(s) = a.noise_sigma {
        params.noise_sigma = s;
    }
    if let Some(f) = a.fixations {
        params.fixations_per_recording = f;
    }
    eprintln!("generation parameters: {}", serde_json::to_string(&params)?);
    let manifest = build_dataset(a.subjects, a.seed, &a.out, &params)?;
    let count = |s| manifest.subjects_in(s).len();
    println!(
        "{} frames ({} subjects: {} train, {} val, {} test) manifest sha256 {}",
        manifest.total_frames,
        manifest.n_subjects,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        manifest_hash(&a.out)?
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(v) = a.samples_per_epoch {
        cfg.samples_per_epoch = Some(v);
    }
    if let Some(v) = a.window_chunk {
        cfg.window_chunk = v;
    }
    let (epochs, patience) = if a.stage == 1 {
        (&mut cfg.max_epochs_stage1, &mut cfg.patience_stage1)
    } else {
        (&mut cfg.max_epochs_stage2, &mut cfg.patience_stage2)
    };
    if let Some(v) = a.max_epochs {
        *epochs = v;
    }
    if let Some(v) = a.patience {
        *patience = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    eprintln!("training configuration: {}", serde_json::to_string(&cfg)?);
    let ds = Dataset::open(&a.data)?;
    let info = DataInfo {
        seed: ds.manifest.seed,
        manifest_sha256: manifest_hash(&a.data)?,
    };
    let stage1 = if a.stage == 2 {
        if cfg.window < 2 {
            return Err(Error::invalid("stage 2 requires --window of at least 2"));
        }
        if !a.run.join(SIDECAR_FILE).exists() {
            return Err(Error::invalid(format!("stage-1 checkpoint required in {}", a.run.display())));
        }
        let ck = Checkpoint::load(&a.run)?;
        if ck.meta.dataset_manifest_sha256 != info.manifest_sha256 {
            return Err(Error::invalid("stage-1 checkpoint was trained on a different dataset"));
        }
        Some(ck)
    } else {
        None
    };
    let train = ds.load_normalized(Split::Train)?;
    let val = ds.load_normalized(Split::Val)?;
    let started = std::time::Instant::now();
    let mut progress = |r: &EpochRecord| {
        eprintln!(
            "epoch {:3}  train_l1 {:.4}  val_mae yaw {:.4} pitch {:.4} mean {:.4}  [{:.0}s]",
            r.epoch,
            r.train_l1,
            r.val.mae_yaw,
            r.val.mae_pitch,
            r.val.mae_mean,
            started.elapsed().as_secs_f64()
        )
    };
    let (out_dir, outcome) = match stage1 {
        None => {
            let variant = match a.variant {
                StaticChoice::Static1 => ModelVariant::STATIC1,
                StaticChoice::Static2 => ModelVariant::STATIC2,
            };
            let o = train_static(variant, &train, &val, &cfg, &info, Some(&a.run), &mut progress)?;
            (a.run.clone(), o)
        }
        Some(ck) => {
            let dir = a.run.join(format!("s1_lstm{}", cfg.window));
            let o = train_stage2(&ck, &train, &val, &cfg, &info, Some(&dir), &mut progress)?;
            (dir, o)
        }
    };
    let best = outcome.log.best();
    println!(
        "best validation MAE {:.4} deg (yaw {:.4}, pitch {:.4}) at epoch {} of {} ({}); checkpoint in {}",
        best.val.mae_mean,
        best.val.mae_yaw,
        best.val.mae_pitch,
        outcome.log.best_epoch,
        outcome.log.epochs.len(),
        outcome.log.stop_reason.as_str(),
        out_dir.display()
    );
    Ok(())
}

fn unique_names(evals: &mut [ModelEvaluation]) {
    let names: Vec<String> = evals.iter().map(|e| e.name.clone()).collect();
    for (i, e) in evals.iter_mut().enumerate() {
        if names.iter().filter(|n| **n == names[i]).count() > 1 {
            e.name = format!("{}_{}", names[i], i + 1);
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let hash = manifest_hash(&a.data)?;
    let mut checkpoints = Vec::new();
    for run in &a.runs {
        let ck = Checkpoint::load(run)?;
        if ck.meta.dataset_manifest_sha256 != hash {
            return Err(Error::invalid(format!(
                "{} was trained on a different dataset manifest than {}",
                run.display(),
                a.data.display()
            )));
        }
        checkpoints.push(ck);
    }
    let seqs = ds.load_normalized(Split::Test)?;
    let len = seqs.first().map(|s| s.len()).ok_or_else(|| Error::Data("empty test split".into()))?;
    let cov = coverage(len, a.smax)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let mut models: Vec<GazeModel<f32>> = checkpoints.iter().map(|c| c.to_model()).collect::<Result<_>>()?;
    let mut evals = Vec::new();
    for m in models.iter_mut() {
        eprintln!("evaluating {} on {} test sequences", m.variant.label(), seqs.len());
        evals.push(evaluate_model(m, &seqs, a.smax)?);
    }
    unique_names(&mut evals);
    let mut labels = Vec::new();
    for s in &seqs {
        labels.extend(window_labels(s, a.smax, a.threshold)?);
    }

    write_metrics_csv(&a.out.join("metrics.csv"), &evals)?;
    write_per_subject_csv(&a.out.join("per_subject.csv"), &evals)?;

    let mut model_rows = Vec::new();
    for ((e, ck), run) in evals.iter().zip(&checkpoints).zip(&a.runs) {
        model_rows.push(json!({
            "name": e.name,
            "run": run.display().to_string(),
            "variant": ck.meta.variant,
            "window": e.window,
            "seed": ck.meta.seed,
            "epoch": ck.meta.epoch,
            "mae_yaw": e.stats.mae_yaw,
            "mae_pitch": e.stats.mae_pitch,
            "mae_mean": e.stats.mae_mean,
            "fixation_estimate_std": fixation_estimate_std(e, &labels)?,
        }));
    }
    let mut comparison = serde_json::Value::Null;
    if evals.len() >= 2 {
        let (base, cand) = (&evals[0], &evals[evals.len() - 1]);
        let cmp = compare_models(base, cand, &labels)?;
        write_movement_csv(&a.out.join("movement_improvement.csv"), &cmp)?;
        let (stat, p, note) = match &cmp.wilcoxon {
            Ok(t) => (Some(t.statistic), Some(t.p_value), None),
            Err(msg) => (None, None, Some(msg.clone())),
        };
        comparison = json!({
            "baseline": cmp.baseline,
            "candidate": cmp.candidate,
            "wilcoxon_statistic": stat,
            "wilcoxon_p": p,
            "wilcoxon_note": note,
            "relative_improvement_pct": relative_improvement(base.stats.mae_mean, cand.stats.mae_mean).ok(),
        });
        match p {
            Some(p) => println!("{} vs {}: paired Wilcoxon p = {p:.3e}", cmp.baseline, cmp.candidate),
            None => println!("{} vs {}: Wilcoxon not computed ({})", cmp.baseline, cmp.candidate, note.unwrap_or_default()),
        }
    }

    let mut estimators: Vec<&mut dyn GazeEstimator> = models.iter_mut().map(|m| m as &mut dyn GazeEstimator).collect();
    for seq in seqs.iter().take(a.traces) {
        let mut table = export_trace(&mut estimators, seq)?;
        for (i, e) in evals.iter().enumerate() {
            table.header[4 + 2 * i] = format!("{}_yaw", e.name);
            table.header[5 + 2 * i] = format!("{}_pitch", e.name);
        }
        write(&a.out.join(format!("trace_{}.csv", seq.key.tag())), &table.to_csv()?)?;
    }

    let mut gt = String::from("subject,side,sequence,frame,yaw_deg,pitch_deg\n");
    for s in &seqs {
        for (i, g) in s.gaze.iter().enumerate() {
            let g = if s.key.side == Side::Right { mirror_angles(*g) } else { *g };
            gt.push_str(&format!(
                "{},{},{},{i},{:.6},{:.6}\n",
                s.key.subject_id,
                s.key.side.letter(),
                s.key.sequence,
                g.yaw_deg,
                g.pitch_deg
            ));
        }
    }
    write(&a.out.join("gt_samples.csv"), &gt)?;

    let summary = json!({
        "dataset_root": a.data.display().to_string(),
        "dataset_seed": ds.manifest.seed,
        "dataset_manifest_sha256": hash,
        "s_max": a.smax,
        "coverage": cov,
        "velocity_threshold_deg_s": a.threshold,
        "n_samples": evals[0].samples.len(),
        "models": model_rows,
        "comparison": comparison,
    });
    write(&a.out.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    for e in &evals {
        println!(
            "{:<12} mae yaw {:.4}  pitch {:.4}  mean {:.4}",
            e.name, e.stats.mae_yaw, e.stats.mae_pitch, e.stats.mae_mean
        );
    }
    println!("coverage {cov:.2} ({} samples, s_max {})", evals[0].samples.len(), a.smax);
    Ok(())
}

fn first_trace(report: &Path) -> Result<PathBuf> {
    let mut traces: Vec<PathBuf> = fs::read_dir(report)
        .map_err(|e| Error::io(report, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trace_") && n.ends_with(".csv"))
        })
        .collect();
    traces.sort();
    traces
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data(format!("no trace_*.csv in {}", report.display())))
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let svg = match a.kind {
        PlotKind::Trace => {
            let path = match &a.trace {
                Some(t) => a.report.join(format!("trace_{t}.csv")),
                None => first_trace(&a.report)?,
            };
            plot::trace_svg(&plot::read_trace(&path)?)
        }
        PlotKind::Improvement => plot::improvement_svg(&plot::read_improvement(&a.report.join("movement_improvement.csv"))?),
        PlotKind::Distribution => plot::distribution_svg(&plot::read_gt_samples(&a.report.join("gt_samples.csv"))?),
    };
    write(&a.out, &svg)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_annotate(a: AnnotateArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let keys = match a.split {
        SplitChoice::Train => ds.keys(Split::Train),
        SplitChoice::Val => ds.keys(Split::Val),
        SplitChoice::Test => ds.keys(Split::Test),
        SplitChoice::All => [Split::Train, Split::Val, Split::Test].iter().flat_map(|s| ds.keys(*s)).collect(),
    };
    let mut out = String::from("subject,side,sequence,frame,ivt,oracle\n");
    let (mut agree, mut total) = (0usize, 0usize);
    for key in keys {
        let (_, gaze, oracle) = read_gt(&key.dir(&ds.root).join(dataset::GT_FILE))?;
        let labels = annotate_frames(&gaze, a.threshold)?;
        for (i, (l, o)) in labels.iter().zip(&oracle).enumerate() {
            agree += usize::from(l == o);
            total += 1;
            out.push_str(&format!(
                "{},{},{},{i},{},{}\n",
                key.subject_id,
                key.side.letter(),
                key.sequence,
                l.as_str(),
                o.as_str()
            ));
        }
    }
    write(&a.out, &out)?;
    println!("{total} frames annotated; agreement with simulator labels {:.4}", agree as f64 / total.max(1) as f64);
    Ok(())
}
