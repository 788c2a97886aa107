//! WLASL-style manifests.
//!
//! The file is a JSON array of glosses, each with its instances:
//!
//! ```json
//! [{"gloss": "book",
//!   "instances": [{"video_id": "69241", "split": "train",
//!                  "frame_start": 1, "frame_end": -1}]}]
//! ```
//!
//! `frame_end = -1` means "until the end of the video"; the frame count is
//! then unknown until the video is read. Other instance fields (bbox, fps,
//! signer_id, …) are accepted and ignored.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, VideoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub video_id: String,
    pub class: usize,
    pub split: Split,
    pub frame_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Gloss names; the position is the class index (sorted by name).
    pub glosses: Vec<String>,
    pub instances: Vec<Instance>,
}

#[derive(Deserialize, Serialize)]
struct RawGloss {
    gloss: String,
    instances: Vec<RawInstance>,
}

#[derive(Deserialize, Serialize)]
struct RawInstance {
    video_id: String,
    split: Split,
    #[serde(default = "one")]
    frame_start: i64,
    #[serde(default = "minus_one")]
    frame_end: i64,
}

fn one() -> i64 {
    1
}

fn minus_one() -> i64 {
    -1
}

/// 1-based line of the `nth` (0-based) occurrence of `needle`.
fn line_of(text: &str, needle: &str, nth: usize) -> usize {
    text.match_indices(needle)
        .nth(nth)
        .map(|(pos, _)| text[..pos].matches('\n').count() + 1)
        .unwrap_or(0)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let raw: Vec<RawGloss> = serde_json::from_str(text).map_err(|e| VideoError::Manifest {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut by_name: BTreeMap<&str, &RawGloss> = BTreeMap::new();
    for g in &raw {
        if g.gloss.is_empty() {
            return Err(VideoError::Manifest {
                line: line_of(text, "\"gloss\"", 0),
                msg: "empty gloss name".into(),
            });
        }
        if by_name.insert(&g.gloss, g).is_some() {
            return Err(VideoError::Manifest {
                line: line_of(text, &format!("\"{}\"", g.gloss), 1),
                msg: format!("duplicate gloss {:?}", g.gloss),
            });
        }
    }
    let glosses: Vec<String> = by_name.keys().map(|s| s.to_string()).collect();
    let class_of: HashMap<&str, usize> = glosses.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();

    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut instances = Vec::new();
    let mut ordinal = 0usize;
    for g in &raw {
        for inst in &g.instances {
            if inst.video_id.is_empty() {
                return Err(VideoError::Manifest {
                    line: line_of(text, "\"video_id\"", ordinal),
                    msg: "empty video_id".into(),
                });
            }
            if let Some(first) = seen.insert(&inst.video_id, ordinal) {
                return Err(VideoError::Manifest {
                    line: line_of(text, "\"video_id\"", ordinal),
                    msg: format!(
                        "duplicate video id {:?} (first seen at line {})",
                        inst.video_id,
                        line_of(text, "\"video_id\"", first)
                    ),
                });
            }
            let frame_count = (inst.frame_end >= inst.frame_start && inst.frame_start >= 1)
                .then(|| (inst.frame_end - inst.frame_start + 1) as usize);
            instances.push(Instance {
                video_id: inst.video_id.clone(),
                class: class_of[g.gloss.as_str()],
                split: inst.split,
                frame_count,
            });
            ordinal += 1;
        }
    }
    Ok(DatasetManifest { glosses, instances })
}

/// Training and validation combined for training; the test split doubles as
/// validation.
pub fn merge_train_val(manifest: &DatasetManifest) -> DatasetManifest {
    let instances = manifest
        .instances
        .iter()
        .map(|i| Instance {
            split: if i.split == Split::Val { Split::Train } else { i.split },
            ..i.clone()
        })
        .collect();
    DatasetManifest {
        glosses: manifest.glosses.clone(),
        instances,
    }
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.glosses.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    pub fn class_of(&self, gloss: &str) -> Option<usize> {
        self.glosses.binary_search_by(|g| g.as_str().cmp(gloss)).ok()
    }

    /// (train, val, test) counts for each class.
    pub fn split_counts(&self) -> Vec<[usize; 3]> {
        let mut counts = vec![[0usize; 3]; self.glosses.len()];
        for i in &self.instances {
            counts[i.class][i.split as usize] += 1;
        }
        counts
    }

    /// Keeps the `n` glosses with the most instances (ties: earlier name)
    /// and re-indexes classes.
    pub fn top_glosses(&self, n: usize) -> DatasetManifest {
        let mut counts: Vec<(usize, usize)> = self.split_counts().iter().map(|c| c.iter().sum()).enumerate().collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let names: Vec<String> = counts.iter().take(n).map(|&(c, _)| self.glosses[c].clone()).collect();
        self.restrict(&names).expect("names come from the manifest")
    }

    /// Keeps only the listed glosses; naming a gloss the manifest lacks is an error.
    pub fn restrict(&self, names: &[String]) -> Result<DatasetManifest> {
        let mut keep: Vec<String> = Vec::with_capacity(names.len());
        for n in names {
            if self.class_of(n).is_none() {
                return Err(VideoError::Manifest {
                    line: 0,
                    msg: format!("unknown gloss {n:?}"),
                });
            }
            keep.push(n.clone());
        }
        keep.sort();
        keep.dedup();
        let remap: HashMap<usize, usize> = keep
            .iter()
            .enumerate()
            .map(|(new, name)| (self.class_of(name).unwrap(), new))
            .collect();
        let instances = self
            .instances
            .iter()
            .filter_map(|i| remap.get(&i.class).map(|&c| Instance { class: c, ..i.clone() }))
            .collect();
        Ok(DatasetManifest {
            glosses: keep,
            instances,
        })
    }

    /// Checks the published WLASL100 statistics: 18–40 videos per gloss and
    /// 12–203 frames per video where the count is known.
    pub fn validate_wlasl_bounds(&self) -> std::result::Result<(), String> {
        for (c, counts) in self.split_counts().iter().enumerate() {
            let total: usize = counts.iter().sum();
            if !(18..=40).contains(&total) {
                return Err(format!("gloss {:?} has {total} instances, outside [18, 40]", self.glosses[c]));
            }
        }
        for i in &self.instances {
            if let Some(n) = i.frame_count {
                if !(12..=203).contains(&n) {
                    return Err(format!("video {} has {n} frames, outside [12, 203]", i.video_id));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<RawGloss> = self
            .glosses
            .iter()
            .enumerate()
            .map(|(c, g)| RawGloss {
                gloss: g.clone(),
                instances: self
                    .instances
                    .iter()
                    .filter(|i| i.class == c)
                    .map(|i| RawInstance {
                        video_id: i.video_id.clone(),
                        split: i.split,
                        frame_start: 1,
                        frame_end: i.frame_count.map_or(-1, |n| n as i64),
                    })
                    .collect(),
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("manifest serializes")
    }
}
