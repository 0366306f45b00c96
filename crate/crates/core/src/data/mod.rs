//! Multimodal videos with continuous emotion labels: the in-memory model, a
//! synthetic generator, and the on-disk manifest + CSV format.

mod generator;
mod io;

pub use generator::{generate_corpus, generate_video, GeneratorConfig, ModalitySpec};
pub use io::{read_dataset, write_dataset, Manifest, ManifestVideo, MANIFEST_FILE, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-step emotion intensities, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTrace {
    values: Vec<f64>,
}

impl EmotionTrace {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("emotion trace"));
        }
        if let Some(v) = values.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "emotion value {v} outside [-1, 1]"
            )));
        }
        Ok(Self { values })
    }

    /// Clamps every value into `[-1, 1]` (non-finite values are rejected).
    pub fn clamped(values: Vec<f64>) -> Result<Self> {
        Self::new(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalVideo {
    pub video_id: String,
    pub split: Split,
    /// Feature matrices (T × d_m) in manifest order.
    pub modalities: Vec<(String, Matrix2D)>,
    /// Label traces in manifest order.
    pub labels: Vec<(String, EmotionTrace)>,
}

impl MultimodalVideo {
    pub fn new(
        video_id: impl Into<String>,
        split: Split,
        modalities: Vec<(String, Matrix2D)>,
        labels: Vec<(String, EmotionTrace)>,
    ) -> Result<Self> {
        let video = Self {
            video_id: video_id.into(),
            split,
            modalities,
            labels,
        };
        video.validate()?;
        Ok(video)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.len();
        if len == 0 {
            return Err(Error::Empty("video has no time steps"));
        }
        for (_, m) in &self.modalities {
            if m.rows() != len {
                return Err(Error::DimensionMismatch {
                    context: "modality row count",
                    expected: len,
                    actual: m.rows(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("modality features"));
            }
        }
        for (_, l) in &self.labels {
            if l.len() != len {
                return Err(Error::DimensionMismatch {
                    context: "label trace length",
                    expected: len,
                    actual: l.len(),
                });
            }
        }
        Ok(())
    }

    /// Number of time steps T.
    pub fn len(&self) -> usize {
        self.modalities
            .first()
            .map(|(_, m)| m.rows())
            .or_else(|| self.labels.first().map(|(_, l)| l.len()))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Σ d_m.
    pub fn feature_dim(&self) -> usize {
        self.modalities.iter().map(|(_, m)| m.cols()).sum()
    }

    pub fn label(&self, target: &str) -> Result<&EmotionTrace> {
        self.labels
            .iter()
            .find(|(name, _)| name == target)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidConfig(format!(
                "video {} has no label `{target}`",
                self.video_id
            )))
    }

    /// Per-step concatenation of every modality (T × Σd_m).
    pub fn concat_features(&self) -> Matrix2D {
        let parts: Vec<&Matrix2D> = self.modalities.iter().map(|(_, m)| m).collect();
        Matrix2D::hconcat(&parts).expect("modalities share a row count")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub modalities: Vec<ModalitySpec>,
    pub targets: Vec<String>,
    pub videos: Vec<MultimodalVideo>,
}

impl Corpus {
    pub fn feature_dim(&self) -> usize {
        self.modalities.iter().map(|m| m.dim).sum()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &MultimodalVideo> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn video(&self, id: &str) -> Option<&MultimodalVideo> {
        self.videos.iter().find(|v| v.video_id == id)
    }
}
