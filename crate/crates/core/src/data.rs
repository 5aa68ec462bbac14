//! Synthetic moving-sprite videos whose labels are motion patterns, plus
//! random crop augmentation and the multi-view evaluation protocol.
//!
//! Motion classes are unchanged by a horizontal mirror: a horizontal or
//! diagonal sprite moves left or right at random, so averaging predictions
//! over flipped views never contradicts the label.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// One labelled video, frames `T×C×H×W` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Tensor,
    pub label: usize,
}

impl VideoClip {
    pub fn new(frames: Tensor, label: usize) -> Result<Self> {
        if frames.rank() != 4 || frames.shape()[0] == 0 {
            return Err(shape_err(
                "VideoClip",
                format!("frames must be T×C×H×W, got {:?}", frames.shape()),
            ));
        }
        Ok(Self { frames, label })
    }

    pub fn steps(&self) -> usize {
        self.frames.shape()[0]
    }

    /// `(T, C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.frames.shape();
        (s[0], s[1], s[2], s[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Up,
    Down,
    /// Left or right, chosen per clip.
    Horizontal,
    /// Up-left or up-right, chosen per clip.
    Diagonal,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::Up,
        Pattern::Down,
        Pattern::Horizontal,
        Pattern::Diagonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Up => "up",
            Pattern::Down => "down",
            Pattern::Horizontal => "horizontal",
            Pattern::Diagonal => "diagonal",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Bounce,
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    Square,
    Disk,
    Cross,
    Ring,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Square,
        Shape::Disk,
        Shape::Cross,
        Shape::Ring,
        Shape::Triangle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether pixel `(y, x)` of an `s×s` sprite is lit.
    pub fn covers(self, y: usize, x: usize, s: usize) -> bool {
        let c = (s as f64 - 1.0) / 2.0;
        let (dy, dx) = (y as f64 - c, x as f64 - c);
        let r = s as f64 / 2.0;
        match self {
            Shape::Square => true,
            Shape::Disk => dy * dy + dx * dx <= r * r,
            Shape::Cross => dy.abs() <= s as f64 / 6.0 + 0.5 || dx.abs() <= s as f64 / 6.0 + 0.5,
            Shape::Ring => {
                let d2 = dy * dy + dx * dx;
                d2 <= r * r && d2 >= (r - 1.5) * (r - 1.5)
            }
            Shape::Triangle => 2 * x + 1 >= s - y.min(s) && 2 * x < s + y + 1,
        }
    }
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub canvas: usize,
    pub frames: usize,
    pub patterns: Vec<Pattern>,
    /// Pixels per frame, one class per `(pattern, speed)`.
    pub speeds: Vec<usize>,
    /// Adds a speed-0 class.
    pub include_static: bool,
    pub shapes: Vec<Shape>,
    /// Inclusive sprite side range.
    pub sprite_min: usize,
    pub sprite_max: usize,
    /// Background noise is `U(0, noise)` per pixel and frame.
    pub noise: f64,
    /// When set, sprite appearance is drawn independently of the label;
    /// otherwise the shape is tied to the class.
    pub appearance_confound: bool,
    pub border: Border,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            canvas: 40,
            frames: 16,
            patterns: Pattern::ALL.to_vec(),
            speeds: vec![1, 2],
            include_static: false,
            shapes: Shape::ALL.to_vec(),
            sprite_min: 5,
            sprite_max: 8,
            noise: 0.1,
            appearance_confound: true,
            border: Border::Bounce,
        }
    }
}

/// Motion class: a pattern at a speed, or the static class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Motion {
    pub pattern: Option<Pattern>,
    pub speed: usize,
}

impl Motion {
    pub fn name(self) -> String {
        match self.pattern {
            Some(p) => format!("{}_{}", p.name(), self.speed),
            None => "static".into(),
        }
    }
}

impl SynthSpec {
    pub fn motions(&self) -> Vec<Motion> {
        let mut out: Vec<Motion> = self
            .patterns
            .iter()
            .flat_map(|&p| {
                self.speeds.iter().map(move |&speed| Motion {
                    pattern: Some(p),
                    speed,
                })
            })
            .collect();
        if self.include_static {
            out.push(Motion {
                pattern: None,
                speed: 0,
            });
        }
        out
    }

    pub fn classes(&self) -> usize {
        self.motions().len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.motions().into_iter().map(Motion::name).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Invalid("data.frames must be at least 1".into()));
        }
        if self.classes() < 2 {
            return Err(Error::Invalid(
                "data needs at least two motion classes".into(),
            ));
        }
        if self.speeds.contains(&0) {
            return Err(Error::Invalid(
                "data.speeds must be positive; use data.include_static".into(),
            ));
        }
        if self.shapes.is_empty() {
            return Err(Error::Invalid("data.shapes is empty".into()));
        }
        if self.sprite_min == 0 || self.sprite_min > self.sprite_max {
            return Err(Error::Invalid(format!(
                "sprite size range [{}, {}] is empty",
                self.sprite_min, self.sprite_max
            )));
        }
        if self.sprite_max > self.canvas {
            return Err(Error::Invalid(format!(
                "sprite side {} exceeds canvas {}",
                self.sprite_max, self.canvas
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Invalid(format!(
                "data.noise {} outside [0, 1]",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Generative parameters of one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipMeta {
    pub seed: u64,
    pub shape: Shape,
    pub size: usize,
    pub intensity: f64,
    /// Top-left sprite position at frame 0, `(y, x)`.
    pub start: (i64, i64),
    /// Pixels per frame, `(dy, dx)`.
    pub velocity: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub clips: Vec<VideoClip>,
    pub meta: Vec<ClipMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &SplitData {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Seed of clip `index` in `split`: distinct for every triple.
pub fn clip_seed(seed: u64, split: Split, index: usize) -> u64 {
    // splitmix64 finaliser over a packed key
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((split as u64) << 40) ^ index as u64);
    let mut z = key.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn position(p0: i64, v: i64, t: usize, span: i64, border: Border) -> i64 {
    let raw = p0 + v * t as i64;
    match border {
        Border::Wrap => raw,
        Border::Bounce => {
            if span == 0 {
                return 0;
            }
            let period = 2 * span;
            let m = raw.rem_euclid(period);
            if m <= span {
                m
            } else {
                period - m
            }
        }
    }
}

/// Renders one clip with label `label`.
pub fn generate_clip(spec: &SynthSpec, label: usize, seed: u64) -> Result<(VideoClip, ClipMeta)> {
    spec.validate()?;
    let motions = spec.motions();
    let motion = *motions.get(label).ok_or(Error::LabelOutOfRange {
        label,
        classes: motions.len(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = if spec.appearance_confound {
        spec.shapes[rng.gen_range(0..spec.shapes.len())]
    } else {
        spec.shapes[label % spec.shapes.len()]
    };
    let size = rng.gen_range(spec.sprite_min..=spec.sprite_max);
    let intensity = rng.gen_range(0.6..1.0);
    let v = motion.speed as i64;
    let sign = if rng.gen::<bool>() { 1 } else { -1 };
    let velocity = match motion.pattern {
        None => (0, 0),
        Some(Pattern::Up) => (-v, 0),
        Some(Pattern::Down) => (v, 0),
        Some(Pattern::Horizontal) => (0, sign * v),
        Some(Pattern::Diagonal) => (-v, sign * v),
    };
    let span = (spec.canvas - size) as i64;
    let travel = (spec.frames as i64 - 1).max(0);
    // Starts that keep the whole path on the canvas, when one exists.
    let mut start_on = |d: i64| -> i64 {
        let reach = d.abs() * travel;
        if reach <= span {
            let lo = if d < 0 { reach } else { 0 };
            let hi = if d > 0 { span - reach } else { span };
            rng.gen_range(lo..=hi)
        } else {
            rng.gen_range(0..=span)
        }
    };
    let start = (start_on(velocity.0), start_on(velocity.1));

    let n = spec.canvas;
    let mut data = vec![0.0; spec.frames * n * n];
    let mask: Vec<bool> = (0..size * size)
        .map(|i| shape.covers(i / size, i % size, size))
        .collect();
    for t in 0..spec.frames {
        let plane = &mut data[t * n * n..(t + 1) * n * n];
        if spec.noise > 0.0 {
            plane
                .iter_mut()
                .for_each(|p| *p = rng.gen::<f64>() * spec.noise);
        }
        let y0 = position(start.0, velocity.0, t, span, spec.border);
        let x0 = position(start.1, velocity.1, t, span, spec.border);
        for sy in 0..size {
            for sx in 0..size {
                if !mask[sy * size + sx] {
                    continue;
                }
                let y = (y0 + sy as i64).rem_euclid(n as i64) as usize;
                let x = (x0 + sx as i64).rem_euclid(n as i64) as usize;
                plane[y * n + x] = intensity;
            }
        }
    }
    let frames = Tensor::new(&[spec.frames, 1, n, n], data)?;
    let meta = ClipMeta {
        seed,
        shape,
        size,
        intensity,
        start,
        velocity,
    };
    Ok((VideoClip::new(frames, label)?, meta))
}

/// Clip counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Generates every split. Labels cycle through the classes, so each split
/// is as balanced as its size allows.
pub fn generate_dataset(spec: &SynthSpec, sizes: SplitSizes, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if Split::ALL.iter().any(|&s| sizes.get(s) == 0) {
        return Err(Error::Invalid("every split needs at least one clip".into()));
    }
    let classes = spec.classes();
    let make = |split: Split| -> Result<SplitData> {
        let n = sizes.get(split);
        let mut clips = Vec::with_capacity(n);
        let mut meta = Vec::with_capacity(n);
        for i in 0..n {
            let (c, m) = generate_clip(spec, i % classes, clip_seed(seed, split, i))?;
            clips.push(c);
            meta.push(m);
        }
        Ok(SplitData { clips, meta })
    };
    Ok(Dataset {
        train: make(Split::Train)?,
        val: make(Split::Val)?,
        test: make(Split::Test)?,
    })
}

/// Intensity-weighted centroid `(y, x)` of every frame.
pub fn centroids(clip: &VideoClip) -> Vec<(f64, f64)> {
    let (t, c, h, w) = clip.dims();
    (0..t)
        .map(|i| {
            let plane = &clip.frames.data()[i * c * h * w..(i + 1) * c * h * w];
            let (mut m, mut my, mut mx) = (0.0, 0.0, 0.0);
            for (j, &v) in plane.iter().enumerate() {
                let (y, x) = ((j / w) % h, j % w);
                m += v;
                my += v * y as f64;
                mx += v * x as f64;
            }
            if m == 0.0 {
                (0.0, 0.0)
            } else {
                (my / m, mx / m)
            }
        })
        .collect()
}

/// Hand-coded classifier reading the motion class off the centroid path of
/// a noise-free clip: the sign of the vertical displacement, whether there
/// is horizontal displacement, and the per-frame magnitude.
pub fn trajectory_oracle(spec: &SynthSpec, clip: &VideoClip) -> usize {
    let c = centroids(clip);
    let steps = (c.len().max(2) - 1) as f64;
    let (first, last) = (c[0], c[c.len() - 1]);
    let dy = (last.0 - first.0) / steps;
    let dx = (last.1 - first.1) / steps;
    let speed = libm::round(dy.abs().max(dx.abs())) as usize;
    let pattern = if speed == 0 {
        None
    } else if dy.abs() < 0.5 {
        Some(Pattern::Horizontal)
    } else if dy > 0.0 {
        Some(Pattern::Down)
    } else if dx.abs() >= 0.5 {
        Some(Pattern::Diagonal)
    } else {
        Some(Pattern::Up)
    };
    spec.motions()
        .iter()
        .position(|m| m.pattern == pattern && (pattern.is_none() || m.speed == speed))
        .unwrap_or(usize::MAX)
}

/// Frame differences `clip[t+1] − clip[t]` mapped to `[0, 1]` by `(d+1)/2`.
pub fn framediff_stream(clip: &VideoClip) -> Result<VideoClip> {
    let (t, c, h, w) = clip.dims();
    if t < 2 {
        return Err(Error::EmptySequence(
            "framediff_stream needs at least two frames",
        ));
    }
    let plane = c * h * w;
    let src = clip.frames.data();
    let data = (0..(t - 1) * plane)
        .map(|i| (src[i + plane] - src[i] + 1.0) / 2.0)
        .collect();
    VideoClip::new(Tensor::new(&[t - 1, c, h, w], data)?, clip.label)
}

/// Random crop augmentation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSpec {
    /// Candidate square crop sides.
    pub ladder: Vec<usize>,
    pub steps: usize,
    /// Model input side after resizing.
    pub output: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            ladder: vec![32, 28, 24, 21],
            steps: 10,
            output: 32,
        }
    }
}

/// A window of a clip: first frame, frame count, top-left corner, side,
/// and whether to mirror horizontally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct View {
    pub t0: usize,
    pub steps: usize,
    pub y: usize,
    pub x: usize,
    pub side: usize,
    pub flip: bool,
}

/// Bilinear resize of one `h×w` plane with half-pixel centres.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coords = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = libm::floor(s) as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = coords(out_h, h);
    let xs = coords(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Extracts `view` from `clip` and resizes it to `output×output`.
pub fn extract_view(clip: &VideoClip, view: View, output: usize) -> Result<Tensor> {
    let (t, c, h, w) = clip.dims();
    if view.t0 + view.steps > t
        || view.y + view.side > h
        || view.x + view.side > w
        || view.steps == 0
    {
        return Err(shape_err(
            "extract_view",
            format!("{view:?} does not fit a {t}×{c}×{h}×{w} clip"),
        ));
    }
    let s = view.side;
    let mut out = Vec::with_capacity(view.steps * c * output * output);
    let mut window = vec![0.0; s * s];
    for f in view.t0..view.t0 + view.steps {
        for ch in 0..c {
            let base = (f * c + ch) * h * w;
            let plane = &clip.frames.data()[base..base + h * w];
            for yy in 0..s {
                for xx in 0..s {
                    let sx = if view.flip { s - 1 - xx } else { xx };
                    window[yy * s + xx] = plane[(view.y + yy) * w + view.x + sx];
                }
            }
            if s == output {
                out.extend_from_slice(&window);
            } else {
                out.extend(resize_bilinear(&window, s, s, output, output));
            }
        }
    }
    Tensor::new(&[view.steps, c, output, output], out)
}

/// Random spatio-temporal crop resized to the model input.
pub fn sample_crop<R: Rng + ?Sized>(
    clip: &VideoClip,
    spec: &CropSpec,
    rng: &mut R,
) -> Result<Tensor> {
    let (t, _, h, w) = clip.dims();
    if t < spec.steps {
        return Err(shape_err(
            "sample_crop",
            format!("clip has {t} frames, crop needs {}", spec.steps),
        ));
    }
    let largest = spec.ladder.iter().copied().max().unwrap_or(0);
    if largest == 0 || largest > h || largest > w {
        return Err(shape_err(
            "sample_crop",
            format!("crop ladder {:?} does not fit a {h}×{w} clip", spec.ladder),
        ));
    }
    let side = *spec.ladder.choose(rng).expect("non-empty ladder");
    let view = View {
        t0: rng.gen_range(0..=t - spec.steps),
        steps: spec.steps,
        y: rng.gen_range(0..=h - side),
        x: rng.gen_range(0..=w - side),
        side,
        flip: false,
    };
    extract_view(clip, view, spec.output)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Views {
    /// Centre crop only.
    Center,
    /// Four corners and the centre.
    CornersAndCenter,
}

/// Test-time sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol {
    pub sub_volumes: usize,
    pub steps: usize,
    /// Spatial crop side before resizing to `output`.
    pub side: usize,
    pub output: usize,
    pub views: Views,
    pub flips: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            sub_volumes: 5,
            steps: 10,
            side: 32,
            output: 32,
            views: Views::CornersAndCenter,
            flips: true,
        }
    }
}

impl Protocol {
    /// Middle sub-volume, centre crop, no flips.
    pub fn single_view(steps: usize, side: usize, output: usize) -> Self {
        Self {
            sub_volumes: 1,
            steps,
            side,
            output,
            views: Views::Center,
            flips: false,
        }
    }

    /// Every view of a `t×h×w` clip, in a fixed order.
    pub fn views(&self, t: usize, h: usize, w: usize) -> Result<Vec<View>> {
        if t < self.steps
            || self.side > h
            || self.side > w
            || self.sub_volumes == 0
            || self.steps == 0
        {
            return Err(shape_err(
                "evaluate",
                format!(
                    "{} sub-volumes of {} frames at side {} do not fit a {t}×{h}×{w} clip",
                    self.sub_volumes, self.steps, self.side
                ),
            ));
        }
        let room = t - self.steps;
        let starts: Vec<usize> = if self.sub_volumes == 1 {
            vec![room / 2]
        } else {
            (0..self.sub_volumes)
                .map(|i| {
                    libm::round(i as f64 * room as f64 / (self.sub_volumes - 1) as f64) as usize
                })
                .collect()
        };
        let (my, mx) = (h - self.side, w - self.side);
        let corners: Vec<(usize, usize)> = match self.views {
            Views::Center => vec![(my / 2, mx / 2)],
            Views::CornersAndCenter => vec![(0, 0), (0, mx), (my, 0), (my, mx), (my / 2, mx / 2)],
        };
        let flips: &[bool] = if self.flips { &[false, true] } else { &[false] };
        let mut out = Vec::new();
        for &t0 in &starts {
            for &(y, x) in &corners {
                for &flip in flips {
                    out.push(View {
                        t0,
                        steps: self.steps,
                        y,
                        x,
                        side: self.side,
                        flip,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Outcome of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// View-averaged probabilities per clip.
    pub scores: Vec<Tensor>,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    /// Scores predictions against `labels`.
    pub fn from_scores(scores: Vec<Tensor>, labels: &[usize], classes: usize) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(shape_err(
                "evaluate",
                format!("{} scores for {} labels", scores.len(), labels.len()),
            ));
        }
        let predictions: Vec<usize> = scores.iter().map(Tensor::argmax).collect();
        let mut confusion = vec![vec![0; classes]; classes];
        let mut correct = 0;
        for (&p, &y) in predictions.iter().zip(labels) {
            if y >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: y.max(p),
                    classes,
                });
            }
            confusion[y][p] += 1;
            correct += usize::from(p == y);
        }
        let accuracy = if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        };
        Ok(Self {
            scores,
            predictions,
            accuracy,
            confusion,
        })
    }

    /// Accuracy per true class (0 for classes without clips).
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect()
    }
}

/// View-averaged probabilities of `predict` on one clip.
pub fn clip_scores(
    predict: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    clip: &VideoClip,
    protocol: &Protocol,
) -> Result<Tensor> {
    let (t, _, h, w) = clip.dims();
    let views = protocol.views(t, h, w)?;
    let mut acc: Option<Vec<f64>> = None;
    for v in &views {
        let p = predict(&extract_view(clip, *v, protocol.output)?)?;
        match &mut acc {
            None => acc = Some(p.into_data()),
            Some(a) => a.iter_mut().zip(p.data()).for_each(|(s, x)| *s += x),
        }
    }
    let mut a = acc.expect("at least one view");
    let n = views.len() as f64;
    a.iter_mut().for_each(|s| *s /= n);
    Ok(Tensor::vector(&a))
}

/// Multi-view evaluation: probabilities are averaged over every view of
/// every sub-volume, then the argmax (lowest index on ties) is predicted.
pub fn evaluate(
    predict: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    clips: &[VideoClip],
    classes: usize,
    protocol: &Protocol,
) -> Result<Evaluation> {
    let scores = clips
        .iter()
        .map(|c| clip_scores(predict, c, protocol))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    Evaluation::from_scores(scores, &labels, classes)
}
