//! Dataset directories: `manifest.json` (spec, seed, split sizes, class
//! names, labels, generative parameters) and `clip_<split>_<index>.grcn`.

use std::collections::BTreeMap;
use std::path::Path;

use grurcn_core::data::{
    ClipMeta, Dataset, Shape, Split, SplitData, SplitSizes, SynthSpec, VideoClip,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, Pairs};
use crate::tensor_io::{read_tensor, write_tensor};
use crate::{Error, Result};

pub const FORMAT: &str = "grurcn-dataset";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub label: usize,
    pub seed: u64,
    pub shape: usize,
    pub size: usize,
    pub intensity: f64,
    pub start: (i64, i64),
    pub velocity: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: Pairs,
    pub sizes: BTreeMap<String, usize>,
    pub class_names: Vec<String>,
    pub clips: BTreeMap<String, Vec<ClipRecord>>,
}

pub fn clip_file(split: Split, index: usize) -> String {
    format!("clip_{}_{index}.grcn", split.name())
}

pub fn save_dataset(dir: &Path, spec: &SynthSpec, seed: u64, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut sizes = BTreeMap::new();
    let mut clips = BTreeMap::new();
    for split in Split::ALL {
        let s = data.split(split);
        sizes.insert(split.name().to_string(), s.clips.len());
        let mut records = Vec::with_capacity(s.clips.len());
        for (i, (clip, m)) in s.clips.iter().zip(&s.meta).enumerate() {
            write_tensor(&dir.join(clip_file(split, i)), &clip.frames)?;
            records.push(ClipRecord {
                label: clip.label,
                seed: m.seed,
                shape: m.shape.index(),
                size: m.size,
                intensity: m.intensity,
                start: m.start,
                velocity: m.velocity,
            });
        }
        clips.insert(split.name().to_string(), records);
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: 1,
        seed,
        spec: config::spec_pairs(spec),
        sizes,
        class_names: spec.class_names(),
        clips,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&path, text + "\n").map_err(Error::io(&path))
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, SynthSpec, DatasetManifest)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::format(&path, "not a version 1 dataset manifest"));
    }
    let spec = config::spec_from_pairs(&manifest.spec)?;
    let classes = spec.classes();
    let load = |split: Split| -> Result<SplitData> {
        let records = manifest
            .clips
            .get(split.name())
            .ok_or_else(|| Error::format(&path, format!("no {} split", split.name())))?;
        let mut clips = Vec::with_capacity(records.len());
        let mut meta = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.label >= classes {
                return Err(Error::format(
                    &path,
                    format!("label {} out of range", r.label),
                ));
            }
            let shape = *Shape::ALL
                .get(r.shape)
                .ok_or_else(|| Error::format(&path, format!("unknown shape {}", r.shape)))?;
            let frames = read_tensor(&dir.join(clip_file(split, i)))?;
            clips.push(VideoClip::new(frames, r.label)?);
            meta.push(ClipMeta {
                seed: r.seed,
                shape,
                size: r.size,
                intensity: r.intensity,
                start: r.start,
                velocity: r.velocity,
            });
        }
        Ok(SplitData { clips, meta })
    };
    let data = Dataset {
        train: load(Split::Train)?,
        val: load(Split::Val)?,
        test: load(Split::Test)?,
    };
    Ok((data, spec, manifest))
}

/// Split sizes recorded in a manifest.
pub fn manifest_sizes(m: &DatasetManifest) -> SplitSizes {
    let get = |s: Split| m.sizes.get(s.name()).copied().unwrap_or(0);
    SplitSizes {
        train: get(Split::Train),
        val: get(Split::Val),
        test: get(Split::Test),
    }
}
