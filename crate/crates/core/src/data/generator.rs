//! Synthetic multimodal emotion corpus.
//!
//! Each label target follows `z_t = tanh(MA_h(W_t))` where `W` is a Gaussian
//! random walk and `MA_h` a centered moving average of half-width `h`. Every
//! modality observes both targets through a fixed mixing matrix shared by all
//! videos, plus a per-video constant offset (the idiosyncratic baseline of one
//! person) and i.i.d. observation noise:
//!
//! ```text
//! x_t^m = M_m · [z_t^arousal, z_t^valence] + b_video,m + ε_t
//! ```
//!
//! Offsets and noise are expressed in units of the feature signal standard
//! deviation, i.e. the pooled standard deviation of `M_m · z_t` over a fixed
//! calibration set of latent traces. The calibration set depends only on the
//! walk parameters and the seed, never on the number of videos generated.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, EmotionTrace, MultimodalVideo, Split};
use crate::error::{Error, Result};
use crate::nn::Matrix2D;
use crate::seed::substream;

pub const TARGETS: [&str; 2] = ["arousal", "valence"];
const CALIBRATION_TRACES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_videos: usize,
    /// Time steps per video.
    pub steps: usize,
    pub modalities: Vec<ModalitySpec>,
    /// Standard deviation of one random-walk increment.
    pub walk_std: f64,
    /// Half-width of the moving average applied to the walk.
    pub smoothing_half_width: usize,
    /// Per-video offset amplitude, in units of feature signal std.
    pub bias_amplitude: f64,
    /// Observation noise std, in units of feature signal std.
    pub obs_noise: f64,
    pub train_videos: usize,
    pub validation_videos: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_videos: 14,
            steps: 2000,
            modalities: vec![ModalitySpec::new("acoustic", 6), ModalitySpec::new("visual", 10)],
            walk_std: 0.02,
            smoothing_half_width: 10,
            bias_amplitude: 2.0,
            obs_noise: 1.0,
            train_videos: 9,
            validation_videos: 1,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("generator: {m}")));
        if self.num_videos == 0 || self.steps == 0 {
            return bad("num_videos and steps must be positive");
        }
        if self.modalities.is_empty() || self.modalities.iter().any(|m| m.dim == 0) {
            return bad("need at least one modality, each with positive dim");
        }
        if !(self.walk_std > 0.0 && self.walk_std.is_finite()) {
            return bad("walk_std must be positive");
        }
        if !(self.bias_amplitude >= 0.0 && self.bias_amplitude.is_finite()) {
            return bad("bias_amplitude must be >= 0");
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return bad("obs_noise must be >= 0");
        }
        if self.train_videos + self.validation_videos > self.num_videos {
            return bad("train + validation videos exceed num_videos");
        }
        Ok(())
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train_videos {
            Split::Train
        } else if index < self.train_videos + self.validation_videos {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

/// Mixing matrix for one modality: d_m × 2, rows scaled to unit L2 norm.
fn mixing_matrix(cfg: &GeneratorConfig, modality: &ModalitySpec) -> Vec<[f64; 2]> {
    let mut rng = substream(cfg.seed, &format!("mixing/{}", modality.name));
    (0..modality.dim)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let n = (a * a + b * b).sqrt().max(1e-12);
            [a / n, b / n]
        })
        .collect()
}

fn latent_trace(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.steps;
    let mut walk = Vec::with_capacity(n);
    let mut x = 0.0;
    for _ in 0..n {
        let step: f64 = StandardNormal.sample(rng);
        x += cfg.walk_std * step;
        walk.push(x);
    }
    // Centered moving average, truncated at the ends.
    let h = cfg.smoothing_half_width;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + walk[i];
    }
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(h);
            let hi = (t + h + 1).min(n);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).tanh()
        })
        .collect()
}

/// Pooled standard deviation of the noiseless feature signal `M·z`.
fn signal_std(cfg: &GeneratorConfig, mixing: &[Vec<[f64; 2]>]) -> f64 {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for i in 0..CALIBRATION_TRACES {
        let za = latent_trace(cfg, &mut substream(cfg.seed, &format!("calibration/{i}/{}", TARGETS[0])));
        let zv = latent_trace(cfg, &mut substream(cfg.seed, &format!("calibration/{i}/{}", TARGETS[1])));
        for m in mixing {
            for row in m {
                for t in 0..cfg.steps {
                    let s = row[0] * za[t] + row[1] * zv[t];
                    sum += s;
                    sum_sq += s * s;
                    count += 1;
                }
            }
        }
    }
    let mean = sum / count as f64;
    (sum_sq / count as f64 - mean * mean).max(0.0).sqrt()
}

pub fn generate_video(cfg: &GeneratorConfig, video_index: usize) -> Result<MultimodalVideo> {
    cfg.validate()?;
    let mixing: Vec<_> = cfg.modalities.iter().map(|m| mixing_matrix(cfg, m)).collect();
    let scale = signal_std(cfg, &mixing);
    generate_with(cfg, video_index, &mixing, scale)
}

fn generate_with(
    cfg: &GeneratorConfig,
    video_index: usize,
    mixing: &[Vec<[f64; 2]>],
    scale: f64,
) -> Result<MultimodalVideo> {
    let prefix = format!("video/{video_index}");
    let latents: Vec<Vec<f64>> = TARGETS
        .iter()
        .map(|t| latent_trace(cfg, &mut substream(cfg.seed, &format!("{prefix}/latent/{t}"))))
        .collect();

    let offset_dist = Normal::new(0.0, cfg.bias_amplitude * scale)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noise_dist = Normal::new(0.0, cfg.obs_noise * scale)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut modalities = Vec::with_capacity(cfg.modalities.len());
    for (spec, m) in cfg.modalities.iter().zip(mixing) {
        let mut offset_rng = substream(cfg.seed, &format!("{prefix}/offset/{}", spec.name));
        let offsets: Vec<f64> = (0..spec.dim).map(|_| offset_dist.sample(&mut offset_rng)).collect();
        let mut noise_rng = substream(cfg.seed, &format!("{prefix}/noise/{}", spec.name));
        let mut data = Vec::with_capacity(cfg.steps * spec.dim);
        for t in 0..cfg.steps {
            for (i, row) in m.iter().enumerate() {
                let signal = row[0] * latents[0][t] + row[1] * latents[1][t];
                data.push(signal + offsets[i] + noise_dist.sample(&mut noise_rng));
            }
        }
        modalities.push((spec.name.clone(), Matrix2D::from_vec(cfg.steps, spec.dim, data)?));
    }
    let labels = TARGETS
        .iter()
        .zip(latents)
        .map(|(name, z)| Ok((name.to_string(), EmotionTrace::new(z)?)))
        .collect::<Result<Vec<_>>>()?;
    MultimodalVideo::new(format!("video_{video_index:03}"), cfg.split_of(video_index), modalities, labels)
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mixing: Vec<_> = cfg.modalities.iter().map(|m| mixing_matrix(cfg, m)).collect();
    let scale = signal_std(cfg, &mixing);
    let videos = (0..cfg.num_videos)
        .map(|i| generate_with(cfg, i, &mixing, scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        modalities: cfg.modalities.clone(),
        targets: TARGETS.iter().map(|s| s.to_string()).collect(),
        videos,
    })
}
