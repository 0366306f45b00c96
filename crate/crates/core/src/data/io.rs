//! On-disk dataset layout:
//!
//! ```text
//! <dir>/dataset.json        manifest
//! <dir>/<video_id>.csv      one row per time step
//! ```
//!
//! CSV header: `t,<mod>_0,…,<mod>_{d-1},<mod2>_0,…,<target>,…` with modalities
//! and targets in manifest order. `t` is a 0-based integer; all other values
//! are written with 17 significant digits so they round-trip exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, EmotionTrace, ModalitySpec, MultimodalVideo, Split};
use crate::error::{Error, Result};
use crate::nn::Matrix2D;

pub const MANIFEST_FILE: &str = "dataset.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub modalities: Vec<ModalitySpec>,
    pub targets: Vec<String>,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub video_id: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub csv_path: String,
    pub split: Split,
}

fn header(modalities: &[ModalitySpec], targets: &[String]) -> String {
    let mut cols = vec!["t".to_string()];
    for m in modalities {
        cols.extend((0..m.dim).map(|i| format!("{}_{i}", m.name)));
    }
    cols.extend(targets.iter().cloned());
    cols.join(",")
}

pub fn write_dataset(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let head = header(&corpus.modalities, &corpus.targets);
    let mut entries = Vec::with_capacity(corpus.videos.len());
    for video in &corpus.videos {
        video.validate()?;
        let csv_path = format!("{}.csv", video.video_id);
        let mut out = String::with_capacity(video.len() * 24 * (corpus.feature_dim() + 3));
        out.push_str(&head);
        out.push('\n');
        let labels: Vec<&EmotionTrace> = corpus
            .targets
            .iter()
            .map(|t| video.label(t))
            .collect::<Result<_>>()?;
        for t in 0..video.len() {
            write!(out, "{t}").unwrap();
            for (_, m) in &video.modalities {
                for v in m.row(t) {
                    write!(out, ",{v:.16e}").unwrap();
                }
            }
            for l in &labels {
                write!(out, ",{:.16e}", l.values()[t]).unwrap();
            }
            out.push('\n');
        }
        let path = dir.join(&csv_path);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestVideo {
            video_id: video.video_id.clone(),
            steps: video.len(),
            csv_path,
            split: video.split,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        modalities: corpus.modalities.clone(),
        targets: corpus.targets.clone(),
        videos: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::parse(&manifest_path, e.line(), e.to_string())
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            &manifest_path,
            1,
            format!("unsupported schema_version {}", manifest.schema_version),
        ));
    }
    let videos = manifest
        .videos
        .iter()
        .map(|entry| read_video(&dir.join(&entry.csv_path), entry, &manifest))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        modalities: manifest.modalities,
        targets: manifest.targets,
        videos,
    })
}

fn read_video(path: &PathBuf, entry: &ManifestVideo, manifest: &Manifest) -> Result<MultimodalVideo> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let expected = header(&manifest.modalities, &manifest.targets);
    match lines.next() {
        Some(h) if h.trim_end() == expected => {}
        Some(h) => {
            return Err(Error::parse(
                path,
                1,
                format!("header `{h}` does not match manifest (expected `{expected}`)"),
            ))
        }
        None => return Err(Error::parse(path, 1, "missing header")),
    }
    let feature_dim: usize = manifest.modalities.iter().map(|m| m.dim).sum();
    let width = 1 + feature_dim + manifest.targets.len();
    let mut features = Vec::with_capacity(entry.steps * feature_dim);
    let mut labels = vec![Vec::with_capacity(entry.steps); manifest.targets.len()];
    let mut rows = 0usize;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let t: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad time index `{}`", fields[0])))?;
        if t != rows {
            return Err(Error::parse(path, line_no, format!("expected t={rows}, found t={t}")));
        }
        for (col, field) in fields.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, format!("non-finite value in column {col}")));
            }
            if col <= feature_dim {
                features.push(v);
            } else {
                labels[col - 1 - feature_dim].push(v);
            }
        }
        rows += 1;
    }
    if rows != entry.steps {
        return Err(Error::parse(
            path,
            rows + 1,
            format!("manifest lists T={} but file has {rows} data rows", entry.steps),
        ));
    }
    let all = Matrix2D::from_vec(rows, feature_dim, features)?;
    let mut modalities = Vec::with_capacity(manifest.modalities.len());
    let mut col = 0;
    for m in &manifest.modalities {
        let mut data = Vec::with_capacity(rows * m.dim);
        for r in 0..rows {
            data.extend_from_slice(&all.row(r)[col..col + m.dim]);
        }
        col += m.dim;
        modalities.push((m.name.clone(), Matrix2D::from_vec(rows, m.dim, data)?));
    }
    let labels = manifest
        .targets
        .iter()
        .zip(labels)
        .map(|(name, values)| {
            EmotionTrace::new(values)
                .map(|l| (name.clone(), l))
                .map_err(|e| Error::parse(path, 0, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    MultimodalVideo::new(entry.video_id.clone(), entry.split, modalities, labels)
}
