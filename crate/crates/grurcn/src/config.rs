//! Flat `section.key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown or malformed keys are reported by name.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use grurcn_core::backbone::BackboneConfig;
use grurcn_core::data::{Border, CropSpec, Pattern, Protocol, Shape, SplitSizes, SynthSpec, Views};
use grurcn_core::model::{Architecture, ModelConfig, Stream, APPEARANCE_WEIGHT, MOTION_WEIGHT};
use grurcn_core::train::{AdamConfig, TrainConfig};

use crate::{Error, Result};

/// Parsed `key → value` pairs.
pub type Pairs = BTreeMap<String, String>;

pub fn parse_pairs(text: &str) -> Result<Pairs> {
    let mut out = Pairs::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                n + 1
            ))
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("key {key} given twice")));
        }
    }
    Ok(out)
}

/// Consumes keys from a pair map, remembering which were used.
struct Reader {
    pairs: Pairs,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.pairs.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key {key}: cannot parse {v:?}: {e}"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("key {key}: cannot parse {s:?}: {e}")))
                })
                .collect(),
        }
    }

    fn named<T>(&mut self, key: &str, default: T, from: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                from(&v).ok_or_else(|| Error::Config(format!("key {key}: unknown value {v:?}")))
            }
        }
    }

    fn named_list<T>(
        &mut self,
        key: &str,
        default: Vec<T>,
        from: impl Fn(&str) -> Option<T>,
    ) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    from(s.trim())
                        .ok_or_else(|| Error::Config(format!("key {key}: unknown value {s:?}")))
                })
                .collect(),
        }
    }

    fn finish(self) -> Result<()> {
        match self.pairs.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

fn shape_name(s: Shape) -> &'static str {
    match s {
        Shape::Square => "square",
        Shape::Disk => "disk",
        Shape::Cross => "cross",
        Shape::Ring => "ring",
        Shape::Triangle => "triangle",
    }
}

fn shape_from(s: &str) -> Option<Shape> {
    Shape::ALL.into_iter().find(|&x| shape_name(x) == s)
}

fn border_from(s: &str) -> Option<Border> {
    match s {
        "bounce" => Some(Border::Bounce),
        "wrap" => Some(Border::Wrap),
        _ => None,
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Where clips come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Generate {
        spec: SynthSpec,
        sizes: SplitSizes,
    },
    /// A directory written by `generate`.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSource,
    /// Generator settings; for [`DataSource::Path`] they are replaced by
    /// the dataset manifest on load.
    pub spec: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: Protocol,
    /// Architectures run by `compare`.
    pub compare: Vec<Architecture>,
    /// Whether `compare` also trains a frame-difference stream and fuses.
    pub fusion: bool,
    pub appearance_weight: f64,
    pub motion_weight: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_pairs(Pairs::new(), None).expect("defaults are valid")
    }
}

/// Reads the `model.*` and `backbone.*` keys.
fn read_model(r: &mut Reader, classes: usize) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let db = BackboneConfig::default();
    let input: usize = r.get("model.input", db.input[1])?;
    let channels: usize = r.get("model.channels", db.input[0])?;
    let backbone = BackboneConfig {
        input: [channels, input, input],
        widths: r.list("backbone.widths", db.widths)?,
        pool_factors: r.list("backbone.pools", db.pool_factors)?,
        kernel: r.get("backbone.kernel", db.kernel)?,
    };
    let m = ModelConfig {
        architecture: r.named(
            "model.architecture",
            d.architecture,
            Architecture::from_name,
        )?,
        backbone,
        levels: r.list("model.levels", d.levels)?,
        hidden: r.list("model.hidden", d.hidden)?,
        kernel: r.get("model.kernel", d.kernel)?,
        dropout: r.get("model.dropout", d.dropout)?,
        classes,
        stream: r.named("model.stream", d.stream, Stream::from_name)?,
        freeze_backbone: r.get("model.freeze_backbone", d.freeze_backbone)?,
        stacked_candidate_input: r
            .get("model.stacked_candidate_input", d.stacked_candidate_input)?,
    };
    Ok(m)
}

/// Key/value form of a model configuration, as stored in checkpoints.
pub fn model_pairs(m: &ModelConfig) -> Pairs {
    let mut p = Pairs::new();
    let mut put = |k: &str, v: String| {
        p.insert(k.to_string(), v);
    };
    put("model.architecture", m.architecture.name().into());
    put("model.channels", m.backbone.input[0].to_string());
    put("model.input", m.backbone.input[1].to_string());
    put("backbone.widths", join(&m.backbone.widths));
    put("backbone.pools", join(&m.backbone.pool_factors));
    put("backbone.kernel", m.backbone.kernel.to_string());
    put("model.levels", join(&m.levels));
    put("model.hidden", join(&m.hidden));
    put("model.kernel", m.kernel.to_string());
    put("model.dropout", m.dropout.to_string());
    put("model.classes", m.classes.to_string());
    put("model.stream", m.stream.name().into());
    put("model.freeze_backbone", m.freeze_backbone.to_string());
    put(
        "model.stacked_candidate_input",
        m.stacked_candidate_input.to_string(),
    );
    p
}

/// Inverse of [`model_pairs`].
pub fn model_from_pairs(p: &Pairs) -> Result<ModelConfig> {
    let mut r = Reader { pairs: p.clone() };
    let classes: usize = r.get("model.classes", 0)?;
    let m = read_model(&mut r, classes)?;
    if m.backbone.input[1] != m.backbone.input[2] {
        return Err(Error::Config("model.input must be square".into()));
    }
    r.finish()?;
    m.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(m)
}

/// Key/value form of a generator spec, as stored in dataset manifests.
pub fn spec_pairs(s: &SynthSpec) -> Pairs {
    let mut p = Pairs::new();
    let mut put = |k: &str, v: String| {
        p.insert(k.to_string(), v);
    };
    put("data.canvas", s.canvas.to_string());
    put("data.frames", s.frames.to_string());
    put(
        "data.patterns",
        s.patterns
            .iter()
            .map(|p| p.name())
            .collect::<Vec<_>>()
            .join(","),
    );
    put("data.speeds", join(&s.speeds));
    put("data.include_static", s.include_static.to_string());
    put(
        "data.shapes",
        s.shapes
            .iter()
            .map(|&x| shape_name(x))
            .collect::<Vec<_>>()
            .join(","),
    );
    put("data.sprite_min", s.sprite_min.to_string());
    put("data.sprite_max", s.sprite_max.to_string());
    put("data.noise", s.noise.to_string());
    put(
        "data.appearance_confound",
        s.appearance_confound.to_string(),
    );
    put(
        "data.border",
        match s.border {
            Border::Bounce => "bounce",
            Border::Wrap => "wrap",
        }
        .into(),
    );
    p
}

fn read_spec(r: &mut Reader) -> Result<SynthSpec> {
    let d = SynthSpec::default();
    let s = SynthSpec {
        canvas: r.get("data.canvas", d.canvas)?,
        frames: r.get("data.frames", d.frames)?,
        patterns: r.named_list("data.patterns", d.patterns, Pattern::from_name)?,
        speeds: r.list("data.speeds", d.speeds)?,
        include_static: r.get("data.include_static", d.include_static)?,
        shapes: r.named_list("data.shapes", d.shapes, shape_from)?,
        sprite_min: r.get("data.sprite_min", d.sprite_min)?,
        sprite_max: r.get("data.sprite_max", d.sprite_max)?,
        noise: r.get("data.noise", d.noise)?,
        appearance_confound: r.get("data.appearance_confound", d.appearance_confound)?,
        border: r.named("data.border", d.border, border_from)?,
    };
    Ok(s)
}

/// Inverse of [`spec_pairs`].
pub fn spec_from_pairs(p: &Pairs) -> Result<SynthSpec> {
    let mut r = Reader { pairs: p.clone() };
    let s = read_spec(&mut r)?;
    r.finish()?;
    s.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(s)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?, None)
    }

    /// Builds a configuration from pairs. `spec_override` replaces the
    /// `data.*` generator keys (used when a dataset is loaded from disk).
    pub fn from_pairs(pairs: Pairs, spec_override: Option<SynthSpec>) -> Result<Self> {
        let mut r = Reader { pairs };
        let seed: u64 = r.get("seed", 0)?;
        let out = r.raw("out").map(PathBuf::from);
        let path = r.raw("data.path").map(PathBuf::from);
        let parsed_spec = read_spec(&mut r)?;
        let spec = spec_override.unwrap_or(parsed_spec);
        let sizes = SplitSizes {
            train: r.get("data.train", 800)?,
            val: r.get("data.val", 100)?,
            test: r.get("data.test", 200)?,
        };
        let model = read_model(&mut r, spec.classes())?;
        let input = model.backbone.input[1];
        let dt = TrainConfig::default();
        let da = AdamConfig::default();
        let crop = CropSpec {
            ladder: r.list("train.crop_sizes", dt.crop.ladder)?,
            steps: r.get("train.crop_frames", dt.crop.steps)?,
            output: input,
        };
        let dp = Protocol::default();
        let eval = Protocol {
            sub_volumes: r.get("eval.sub_volumes", dp.sub_volumes)?,
            steps: crop.steps,
            side: r.get("eval.side", input)?,
            output: input,
            views: r.named("eval.views", dp.views, |s| match s {
                "corners_center" => Some(Views::CornersAndCenter),
                "center" => Some(Views::Center),
                _ => None,
            })?,
            flips: r.get("eval.flips", dp.flips)?,
        };
        let train = TrainConfig {
            max_epochs: r.get("train.epochs", dt.max_epochs)?,
            batch_size: r.get("train.batch_size", dt.batch_size)?,
            patience: r.get("train.patience", dt.patience)?,
            adam: AdamConfig {
                lr: r.get("train.lr", da.lr)?,
                beta1: r.get("train.beta1", da.beta1)?,
                beta2: r.get("train.beta2", da.beta2)?,
                eps: r.get("train.eps", da.eps)?,
            },
            validation: Protocol::single_view(crop.steps, eval.side, input),
            crop,
            seed,
        };
        let compare = r.named_list(
            "compare.architectures",
            vec![
                Architecture::FcGruBaseline,
                Architecture::GruRcn,
                Architecture::BidirGruRcn,
            ],
            Architecture::from_name,
        )?;
        let fusion = r.get("compare.fusion", true)?;
        let appearance_weight = r.get("compare.appearance_weight", APPEARANCE_WEIGHT)?;
        let motion_weight = r.get("compare.motion_weight", MOTION_WEIGHT)?;
        r.finish()?;

        let data = match path {
            Some(p) => DataSource::Path(p),
            None => DataSource::Generate {
                spec: spec.clone(),
                sizes,
            },
        };
        let cfg = Self {
            seed,
            out,
            data,
            spec,
            model,
            train,
            eval,
            compare,
            fusion,
            appearance_weight,
            motion_weight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks, each naming the key at fault.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config(format!("key {key}: {why}")));
        if let DataSource::Generate { spec, sizes } = &self.data {
            spec.validate()
                .map_err(|e| Error::Config(format!("data: {e}")))?;
            for (k, n) in [
                ("data.train", sizes.train),
                ("data.val", sizes.val),
                ("data.test", sizes.test),
            ] {
                if n == 0 {
                    return bad(k, "must be at least 1".into());
                }
            }
        }
        if self.model.backbone.input[1] != self.model.backbone.input[2] {
            return bad("model.input", "must be square".into());
        }
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        let frames = match self.model.stream {
            Stream::Rgb => self.spec.frames,
            Stream::FrameDiff => self.spec.frames.saturating_sub(1),
        };
        if self.train.crop.steps == 0 || self.train.crop.steps > frames {
            return bad(
                "train.crop_frames",
                format!(
                    "{} does not fit clips of {frames} frames",
                    self.train.crop.steps
                ),
            );
        }
        if self.fusion && self.spec.frames < self.train.crop.steps + 1 {
            return bad(
                "compare.fusion",
                "frame-difference clips are shorter than train.crop_frames".into(),
            );
        }
        let canvas = self.spec.canvas;
        if self.train.crop.ladder.is_empty()
            || self.train.crop.ladder.iter().any(|&s| s == 0 || s > canvas)
        {
            return bad(
                "train.crop_sizes",
                format!(
                    "{:?} must be non-empty and fit the {canvas}-pixel canvas",
                    self.train.crop.ladder
                ),
            );
        }
        if self.eval.side == 0 || self.eval.side > canvas {
            return bad(
                "eval.side",
                format!("{} does not fit the {canvas}-pixel canvas", self.eval.side),
            );
        }
        if self.eval.sub_volumes == 0 {
            return bad("eval.sub_volumes", "must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1".into());
        }
        if !(self.train.adam.lr >= 0.0) {
            return bad("train.lr", "must be non-negative".into());
        }
        if self.compare.is_empty() {
            return bad("compare.architectures", "is empty".into());
        }
        if self.appearance_weight < 0.0
            || self.motion_weight < 0.0
            || self.appearance_weight + self.motion_weight <= 0.0
        {
            return bad(
                "compare.motion_weight",
                "stream weights must be non-negative and not both zero".into(),
            );
        }
        Ok(())
    }

    /// Copy with another seed (dataset, initialisation and training).
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.train.seed = seed;
        c
    }

    /// Copy running `architecture` on `stream`.
    pub fn with_model(&self, architecture: Architecture, stream: Stream) -> Self {
        let mut c = self.clone();
        c.model.architecture = architecture;
        c.model.stream = stream;
        c
    }
}
