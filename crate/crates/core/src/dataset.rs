//! Dataset manifests.
//!
//! A manifest (conventionally `dataset.manifest`) is a JSON document:
//!
//! ```json
//! {
//!   "format": "avsumm-manifest",
//!   "version": 1,
//!   "name": "synthetic",
//!   "videos": [
//!     {
//!       "id": "video_000",
//!       "visual": "video_000.visual.mf2f",
//!       "audio": "video_000.audio.mf2f",
//!       "fps": 2.0,
//!       "n_frames": 48,
//!       "fold": 0,
//!       "user_scores": [[0.1, 0.2, ...], ...],
//!       "picks": [0, 15, 30, ...]
//!     }
//!   ]
//! }
//! ```
//!
//! Feature paths are relative to the manifest's directory. `picks` (the raw
//! frame index of each sampled frame) is optional. Every invariant is checked
//! when the manifest is loaded; a loaded [`Dataset`] is never partially valid.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_features_expecting, FeatureSequence, Modality};

pub const MANIFEST_FORMAT: &str = "avsumm-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE_NAME: &str = "dataset.manifest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub visual: PathBuf,
    pub audio: PathBuf,
    pub fps: f64,
    pub n_frames: usize,
    #[serde(default)]
    pub fold: usize,
    pub user_scores: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picks: Option<Vec<usize>>,
}

/// One video with its loaded features and annotations.
#[derive(Clone, Debug)]
pub struct Video {
    pub id: String,
    pub fps: f64,
    pub fold: usize,
    /// `U × T` per-user frame importance in `[0, 1]`.
    pub user_scores: Vec<Vec<f64>>,
    pub picks: Option<Vec<usize>>,
    pub visual: FeatureSequence,
    pub audio: FeatureSequence,
    pub visual_path: PathBuf,
    pub audio_path: PathBuf,
}

impl Video {
    pub fn n_frames(&self) -> usize {
        self.visual.frames()
    }

    pub fn duration_secs(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }

    /// Per-frame mean over users.
    pub fn mean_scores(&self) -> Vec<f64> {
        let users = self.user_scores.len() as f64;
        (0..self.n_frames())
            .map(|t| self.user_scores.iter().map(|u| u[t]).sum::<f64>() / users)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub root: PathBuf,
    videos: Vec<Video>,
}

impl Dataset {
    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// `(train, test)` for a held-out fold.
    pub fn split(&self, test_fold: usize) -> (Vec<&Video>, Vec<&Video>) {
        self.videos.iter().partition(|v| v.fold != test_fold)
    }

    /// Builds a dataset from already-validated parts.
    pub fn from_videos(name: impl Into<String>, root: PathBuf, videos: Vec<Video>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::video(&v.id, "duplicate video id"));
            }
            validate_video(v)?;
        }
        Ok(Dataset {
            name: name.into(),
            root,
            videos,
        })
    }
}

fn validate_video(v: &Video) -> Result<()> {
    let (tv, ta) = (v.visual.frames(), v.audio.frames());
    if tv != ta {
        return Err(Error::video(
            &v.id,
            format!("modalities are not aligned: visual T={tv}, audio T={ta}"),
        ));
    }
    if !(v.fps.is_finite() && v.fps > 0.0) {
        return Err(Error::video(&v.id, format!("invalid fps {}", v.fps)));
    }
    if v.user_scores.is_empty() {
        return Err(Error::video(&v.id, "no user scores"));
    }
    for (u, row) in v.user_scores.iter().enumerate() {
        if row.len() != tv {
            return Err(Error::video(
                &v.id,
                format!("user {u} has {} scores, expected {tv}", row.len()),
            ));
        }
        if let Some(bad) = row.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::video(
                &v.id,
                format!("user {u} score {bad} outside [0, 1]"),
            ));
        }
    }
    if let Some(picks) = &v.picks {
        if picks.len() != tv {
            return Err(Error::video(
                &v.id,
                format!("picks has {} entries, expected {tv}", picks.len()),
            ));
        }
    }
    Ok(())
}

fn load_entry(root: &Path, entry: &ManifestEntry) -> Result<Video> {
    let visual_path = root.join(&entry.visual);
    let audio_path = root.join(&entry.audio);
    let wrap = |e: Error| Error::video(&entry.id, e.to_string());
    let visual = read_features_expecting(&visual_path, Modality::Visual).map_err(wrap)?;
    let audio = read_features_expecting(&audio_path, Modality::Audio).map_err(wrap)?;
    if visual.frames() != entry.n_frames {
        return Err(Error::video(
            &entry.id,
            format!(
                "n_frames is {} but visual features have T={}",
                entry.n_frames,
                visual.frames()
            ),
        ));
    }
    let video = Video {
        id: entry.id.clone(),
        fps: entry.fps,
        fold: entry.fold,
        user_scores: entry.user_scores.clone(),
        picks: entry.picks.clone(),
        visual,
        audio,
        visual_path,
        audio_path,
    };
    validate_video(&video)?;
    Ok(video)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest_err = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(manifest_err(format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(manifest_err(format!(
            "unsupported version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    let mut seen = HashSet::new();
    for entry in &manifest.videos {
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::video(&entry.id, "duplicate video id"));
        }
    }
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let videos = manifest
        .videos
        .par_iter()
        .map(|entry| load_entry(&root, entry))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: manifest.name,
        root,
        videos,
    })
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
