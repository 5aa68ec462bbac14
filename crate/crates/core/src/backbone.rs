//! Small convolutional percept extractor.
//!
//! Each stage is a 3×3 same-padded convolution, a rectifier and a max-pool.
//! The pooled output of every stage is one percept level, so the levels come
//! out at strictly decreasing spatial resolution. Frames are processed
//! independently: there is no temporal mixing inside the backbone.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::init;
use crate::kernels::{Pair, PoolMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Frame shape `C×H×W`.
    pub input: [usize; 3],
    /// Output channels per stage.
    pub widths: Vec<usize>,
    /// Max-pool factor per stage (window = stride).
    pub pool_factors: Vec<usize>,
    /// Odd convolution kernel side.
    pub kernel: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input: [1, 32, 32],
            widths: alloc::vec![16, 32, 64],
            pool_factors: alloc::vec![2, 2, 2],
            kernel: 3,
        }
    }
}

impl BackboneConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Invalid("backbone needs at least one stage".into()));
        }
        if self.widths.len() != self.pool_factors.len() {
            return Err(Error::Invalid(format!(
                "{} stage widths but {} pool factors",
                self.widths.len(),
                self.pool_factors.len()
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Invalid("backbone kernel must be odd".into()));
        }
        if self.input.contains(&0) || self.widths.contains(&0) {
            return Err(Error::Invalid("backbone sizes must be positive".into()));
        }
        let (mut h, mut w) = (self.input[1], self.input[2]);
        for &f in &self.pool_factors {
            if f < 2 {
                return Err(Error::Invalid(
                    "pool factors must be at least 2 so resolutions strictly decrease".into(),
                ));
            }
            if h % f != 0 || w % f != 0 {
                return Err(Error::Invalid(format!(
                    "a {h}×{w} map does not divide by pool factor {f}"
                )));
            }
            h /= f;
            w /= f;
        }
        Ok(())
    }

    /// `C×H×W` of every percept level.
    pub fn level_shapes(&self) -> Vec<[usize; 3]> {
        let (mut h, mut w) = (self.input[1], self.input[2]);
        self.widths
            .iter()
            .zip(&self.pool_factors)
            .map(|(&c, &f)| {
                h /= f;
                w /= f;
                [c, h, w]
            })
            .collect()
    }
}

/// Stage kernels and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub stages: Vec<(T, T)>,
}

impl<T> Backbone<T> {
    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&T) -> core::result::Result<U, E>,
    ) -> core::result::Result<Backbone<U>, E> {
        let stages = self
            .stages
            .iter()
            .map(|(k, b)| Ok((f(k)?, f(b)?)))
            .collect::<core::result::Result<_, E>>()?;
        Ok(Backbone { stages })
    }
}

impl Backbone<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel;
        let mut prev = cfg.input[0];
        let mut stages = Vec::with_capacity(cfg.levels());
        for &c in &cfg.widths {
            let kernel = init::he_uniform(&[c, prev, k, k], prev * k * k, rng);
            stages.push((kernel, init::zeros(c)));
            prev = c;
        }
        Ok(Self { stages })
    }

    pub fn zeros(cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel;
        let mut prev = cfg.input[0];
        let stages = cfg
            .widths
            .iter()
            .map(|&c| {
                let s = (Tensor::zeros(&[c, prev, k, k]), init::zeros(c));
                prev = c;
                s
            })
            .collect();
        Ok(Self { stages })
    }

    pub fn element_count(&self) -> usize {
        self.stages.iter().map(|(k, b)| k.len() + b.len()).sum()
    }
}

/// Percept maps indexed `[t][level]`.
pub type PerceptStack = Vec<Vec<Var>>;

/// Runs the backbone on one frame and returns every stage's pooled output.
pub fn frame_percepts(
    tape: &mut Tape,
    backbone: &Backbone<Var>,
    cfg: &BackboneConfig,
    frame: Var,
) -> Result<Vec<Var>> {
    let shape = tape.value(frame).shape();
    if shape != cfg.input {
        return Err(shape_err(
            "extract_percepts",
            format!(
                "frame {shape:?} does not match backbone input {:?}",
                cfg.input
            ),
        ));
    }
    let mut x = frame;
    let mut levels = Vec::with_capacity(backbone.stages.len());
    for ((kernel, bias), &f) in backbone.stages.iter().zip(&cfg.pool_factors) {
        let c = tape.conv2d_same(x, *kernel, *bias)?;
        let a = tape.relu(c)?;
        x = tape.pool2d(a, PoolMode::Max, Pair::square(f), Pair::square(f))?;
        levels.push(x);
    }
    Ok(levels)
}

/// Applies the backbone to every frame of a `T×C×H×W` clip.
pub fn extract_percepts(
    tape: &mut Tape,
    backbone: &Backbone<Var>,
    cfg: &BackboneConfig,
    frames: &Tensor,
) -> Result<PerceptStack> {
    if frames.rank() != 4 {
        return Err(shape_err(
            "extract_percepts",
            format!("clip must be T×C×H×W, got {:?}", frames.shape()),
        ));
    }
    (0..frames.shape()[0])
        .map(|t| {
            let frame = tape.constant(frames.slice_outer(t)?)?;
            frame_percepts(tape, backbone, cfg, frame)
        })
        .collect()
}
