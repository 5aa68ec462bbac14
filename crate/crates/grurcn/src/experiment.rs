//! Generate-or-load data, train, evaluate and write reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use grurcn_core::data::{self, Dataset, Evaluation, SynthSpec, VideoClip};
use grurcn_core::model::{self, Architecture, Model, Stream};
use grurcn_core::train::{self, Clock, EpochRecord, TrainLog};
use grurcn_core::Tensor;
use rand::SeedableRng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{DataSource, ExperimentConfig};
use crate::dataset;
use crate::metrics::{FusionReport, MetricsReport, ParameterCounts, RunReport, SCHEMA_VERSION};
use crate::{Error, Result};

/// Elapsed wall-clock time since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Called after every epoch with the run name.
pub type Progress<'a> = &'a mut dyn FnMut(&str, &EpochRecord);

pub const METRICS_FILE: &str = "metrics.json";
pub const TRAINLOG_FILE: &str = "trainlog.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// The configured dataset and the spec it was generated from.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, SynthSpec)> {
    match &cfg.data {
        DataSource::Generate { spec, sizes } => Ok((
            data::generate_dataset(spec, *sizes, cfg.seed)?,
            spec.clone(),
        )),
        DataSource::Path(p) => {
            let (d, spec, _) = dataset::load_dataset(p)?;
            if spec.classes() != cfg.model.classes {
                return Err(Error::Config(format!(
                    "key data.path: dataset has {} classes, model expects {}",
                    spec.classes(),
                    cfg.model.classes
                )));
            }
            Ok((d, spec))
        }
    }
}

/// Converts clips to the model's input stream.
pub fn stream_clips(clips: &[VideoClip], stream: Stream) -> Result<Vec<VideoClip>> {
    match stream {
        Stream::Rgb => Ok(clips.to_vec()),
        Stream::FrameDiff => Ok(clips
            .iter()
            .map(data::framediff_stream)
            .collect::<grurcn_core::Result<_>>()?),
    }
}

/// Name of a run in reports and output directories.
pub fn run_name(architecture: Architecture, stream: Stream) -> String {
    match stream {
        Stream::Rgb => architecture.name().to_string(),
        Stream::FrameDiff => format!("{}_framediff", architecture.name()),
    }
}

#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    val_acc: f64,
    seconds: f64,
}

/// A trained and evaluated model.
pub struct RunOutcome {
    pub report: RunReport,
    pub model: Model,
    pub log: TrainLog,
    pub evaluation: Evaluation,
}

fn parameter_counts(m: &Model, steps: usize) -> Result<ParameterCounts> {
    let mut c = ParameterCounts {
        total: 0,
        recurrent: 0,
        recurrent_formula: model::describe(m.config(), steps)?.recurrent_parameters(),
        heads: 0,
        backbone: 0,
    };
    for (name, t) in m.names().iter().zip(m.tensors()) {
        c.total += t.len();
        if name.starts_with("head.") {
            c.heads += t.len();
        } else if name.starts_with("backbone.") {
            c.backbone += t.len();
        } else {
            c.recurrent += t.len();
        }
    }
    Ok(c)
}

/// Evaluates `model` on the test split with the configured protocol.
pub fn evaluate_model(cfg: &ExperimentConfig, model: &Model, data: &Dataset) -> Result<Evaluation> {
    let test = stream_clips(&data.test.clips, model.config().stream)?;
    let mut predict = |x: &Tensor| model.predict(x);
    Ok(data::evaluate(
        &mut predict,
        &test,
        model.config().classes,
        &cfg.eval,
    )?)
}

/// Trains `cfg.model` into `dir` (trainlog and checkpoint) and evaluates
/// it. Paths in the report are prefixed with `rel`.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    dir: &Path,
    rel: &str,
    clock: &dyn Clock,
    progress: Progress,
) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let name = run_name(cfg.model.architecture, cfg.model.stream);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg.model.clone(), &mut rng)?;
    let train_clips = stream_clips(&data.train.clips, cfg.model.stream)?;
    let val_clips = stream_clips(&data.val.clips, cfg.model.stream)?;

    let log_path = dir.join(TRAINLOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(Error::io(&log_path))?);
    let mut write_err = None;
    let log = train::train_with(
        &mut model,
        &cfg.train,
        &train_clips,
        &val_clips,
        clock,
        &mut |r| {
            progress(&name, r);
            let line = LogLine {
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_loss: r.val_loss,
                val_acc: r.val_acc,
                seconds: r.seconds,
            };
            let text = serde_json::to_string(&line).expect("log line serialises");
            if let Err(e) = writeln!(log_file, "{text}").and_then(|_| log_file.flush()) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path)(e));
    }
    checkpoint::save_checkpoint(&dir.join(CHECKPOINT_DIR), &model)?;

    let evaluation = evaluate_model(cfg, &model, data)?;
    let best = log.best();
    let report = RunReport {
        name: name.clone(),
        architecture: cfg.model.architecture.name().into(),
        stream: cfg.model.stream.name().into(),
        test_accuracy: evaluation.accuracy,
        per_class_accuracy: evaluation.per_class_accuracy(),
        confusion: evaluation.confusion.clone(),
        parameters: parameter_counts(&model, cfg.train.crop.steps)?,
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        best_val_loss: best.map(|b| b.val_loss),
        trainlog: format!("{rel}{TRAINLOG_FILE}"),
        checkpoint: format!("{rel}{CHECKPOINT_DIR}"),
    };
    Ok(RunOutcome {
        report,
        model,
        log,
        evaluation,
    })
}

/// Single run of `cfg.model`; writes `metrics.json`, `trainlog.jsonl` and
/// `checkpoint/` into `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    clock: &dyn Clock,
    progress: Progress,
) -> Result<MetricsReport> {
    let (data, spec) = load_data(cfg)?;
    let run = train_and_evaluate(cfg, &data, out, "", clock, progress)?;
    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        class_names: spec.class_names(),
        runs: vec![run.report],
        fusion: None,
    };
    report.write(&out.join(METRICS_FILE))?;
    Ok(report)
}

/// Fuses two streams' per-clip scores and scores the result.
pub fn fuse(
    appearance: &Evaluation,
    motion: &Evaluation,
    labels: &[usize],
    classes: usize,
    weights: (f64, f64),
) -> Result<Evaluation> {
    let scores = appearance
        .scores
        .iter()
        .zip(&motion.scores)
        .map(|(a, b)| model::fuse_streams(a, b, weights.0, weights.1))
        .collect::<grurcn_core::Result<Vec<_>>>()?;
    Ok(Evaluation::from_scores(scores, labels, classes)?)
}

/// Everything produced by [`compare`].
pub struct Comparison {
    pub report: MetricsReport,
    pub runs: Vec<RunOutcome>,
    pub fusion: Option<Evaluation>,
}

/// Trains every architecture in `compare.architectures` on one dataset
/// (each in `out/<name>/`), optionally adds a frame-difference gru_rcn
/// stream fused with the RGB gru_rcn, and writes one `metrics.json`.
pub fn compare(
    cfg: &ExperimentConfig,
    out: &Path,
    clock: &dyn Clock,
    progress: Progress,
) -> Result<Comparison> {
    let (data, spec) = load_data(cfg)?;
    let mut plan: Vec<(Architecture, Stream)> =
        cfg.compare.iter().map(|&a| (a, Stream::Rgb)).collect();
    if cfg.fusion {
        if !cfg.compare.contains(&Architecture::GruRcn) {
            plan.push((Architecture::GruRcn, Stream::Rgb));
        }
        plan.push((Architecture::GruRcn, Stream::FrameDiff));
    }
    let mut runs = Vec::with_capacity(plan.len());
    for (arch, stream) in plan {
        let sub = cfg.with_model(arch, stream);
        let name = run_name(arch, stream);
        runs.push(train_and_evaluate(
            &sub,
            &data,
            &out.join(&name),
            &format!("{name}/"),
            clock,
            progress,
        )?);
    }

    let mut fusion = None;
    let mut fusion_report = None;
    if cfg.fusion {
        let find = |n: &str| {
            runs.iter()
                .find(|r| r.report.name == n)
                .expect("planned run")
        };
        let a_name = run_name(Architecture::GruRcn, Stream::Rgb);
        let m_name = run_name(Architecture::GruRcn, Stream::FrameDiff);
        let labels: Vec<usize> = data.test.clips.iter().map(|c| c.label).collect();
        let f = fuse(
            &find(&a_name).evaluation,
            &find(&m_name).evaluation,
            &labels,
            cfg.model.classes,
            (cfg.appearance_weight, cfg.motion_weight),
        )?;
        fusion_report = Some(FusionReport {
            appearance: a_name,
            motion: m_name,
            appearance_weight: cfg.appearance_weight,
            motion_weight: cfg.motion_weight,
            test_accuracy: f.accuracy,
            per_class_accuracy: f.per_class_accuracy(),
        });
        fusion = Some(f);
    }
    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        class_names: spec.class_names(),
        runs: runs.iter().map(|r| r.report.clone()).collect(),
        fusion: fusion_report,
    };
    report.write(&out.join(METRICS_FILE))?;
    Ok(Comparison {
        report,
        runs,
        fusion,
    })
}
