//! Windowed segments, within-video comparison pairs, and the difference
//! tensors that make up the local ranking dataset.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultimodalVideo;
use crate::error::{Error, Result};
use crate::global_ranker::Outcome;
use crate::nn::Matrix2D;

/// Window `[t − w, t + w]` of one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub video_id: String,
    pub center: usize,
    pub half_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub j: SegmentRef,
    pub k: SegmentRef,
    /// `Some(true)` iff the label at `j` exceeds the label at `k`.
    pub true_rank: Option<bool>,
    /// Model estimate of P(label at j > label at k).
    pub predicted_prob: Option<f64>,
}

impl ComparisonPair {
    pub fn video_id(&self) -> &str {
        &self.j.video_id
    }

    /// Binary outcome for global ranking: the prediction thresholded at 0.5
    /// if present, otherwise the ground truth.
    pub fn outcome(&self) -> Option<Outcome> {
        let j_wins = match (self.predicted_prob, self.true_rank) {
            (Some(p), _) => p >= 0.5,
            (None, Some(r)) => r,
            (None, None) => return None,
        };
        Some(Outcome {
            j: self.j.center,
            k: self.k.center,
            j_wins,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalExample {
    /// (2w+1) × Σd_m; row r is `concat(x at k-window row r) − concat(x at j-window row r)`.
    pub x_local: Matrix2D,
    pub label: bool,
}

fn check_window(len: usize, t: usize, w: usize) -> Result<()> {
    if w == 0 {
        return Err(Error::InvalidConfig("window half-width must be >= 1".into()));
    }
    if t < w || t + w >= len {
        return Err(Error::SegmentOutOfRange { t, w, len });
    }
    Ok(())
}

/// Rows `t − w ..= t + w` of the modality-concatenated features.
pub fn extract_segment(video: &MultimodalVideo, t: usize, w: usize) -> Result<Matrix2D> {
    check_window(video.len(), t, w)?;
    let parts: Vec<Matrix2D> = video
        .modalities
        .iter()
        .map(|(_, m)| m.slice_rows(t - w, t + w + 1))
        .collect();
    Matrix2D::hconcat(&parts.iter().collect::<Vec<_>>())
}

/// Difference tensor `x_k − x_j` read from an already-concatenated feature
/// matrix (T × Σd_m). Used on hot paths to avoid re-concatenating modalities.
pub fn difference_from_features(features: &Matrix2D, j: usize, k: usize, w: usize) -> Result<Matrix2D> {
    check_window(features.rows(), j, w)?;
    check_window(features.rows(), k, w)?;
    let cols = features.cols();
    let len = (2 * w + 1) * cols;
    let a = &features.as_slice()[(k - w) * cols..(k - w) * cols + len];
    let b = &features.as_slice()[(j - w) * cols..(j - w) * cols + len];
    let data = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Matrix2D::from_vec(2 * w + 1, cols, data)
}

pub fn build_local_example(video: &MultimodalVideo, pair: &ComparisonPair) -> Result<LocalExample> {
    let w = pair.j.half_width;
    if pair.k.half_width != w {
        return Err(Error::InvalidConfig("pair windows differ in width".into()));
    }
    let label = pair
        .true_rank
        .ok_or_else(|| Error::InvalidConfig("pair has no ground-truth rank".into()))?;
    let xj = extract_segment(video, pair.j.center, w)?;
    let xk = extract_segment(video, pair.k.center, w)?;
    Ok(LocalExample {
        x_local: xk.sub(&xj)?,
        label,
    })
}

fn segment(video: &MultimodalVideo, center: usize, w: usize) -> SegmentRef {
    SegmentRef {
        video_id: video.video_id.clone(),
        center,
        half_width: w,
    }
}

fn interior(video: &MultimodalVideo, w: usize) -> Result<(usize, usize)> {
    if w == 0 {
        return Err(Error::InvalidConfig("window half-width must be >= 1".into()));
    }
    let len = video.len();
    if len < 2 * w + 2 {
        return Err(Error::InvalidConfig(format!(
            "video {} has {len} steps; need at least {} for w={w}",
            video.video_id,
            2 * w + 2
        )));
    }
    Ok((w, len - 1 - w))
}

/// Draws `count` labeled pairs with centers uniform over the interior,
/// rejecting `j == k` and label gaps below `tie_eps`.
pub fn sample_pairs<R: Rng + ?Sized>(
    video: &MultimodalVideo,
    target: &str,
    count: usize,
    w: usize,
    tie_eps: f64,
    rng: &mut R,
) -> Result<Vec<ComparisonPair>> {
    let (lo, hi) = interior(video, w)?;
    let y = video.label(target)?.values();
    let max_draws = count.saturating_mul(100);
    let mut pairs = Vec::with_capacity(count);
    let mut draws = 0;
    while pairs.len() < count {
        if draws == max_draws {
            return Err(Error::PairSampling {
                wanted: count,
                found: pairs.len(),
                draws,
                tie_eps,
            });
        }
        draws += 1;
        let j = rng.random_range(lo..=hi);
        let k = rng.random_range(lo..=hi);
        if j == k || (y[j] - y[k]).abs() < tie_eps {
            continue;
        }
        pairs.push(ComparisonPair {
            j: segment(video, j, w),
            k: segment(video, k, w),
            true_rank: Some(y[j] > y[k]),
            predicted_prob: None,
        });
    }
    Ok(pairs)
}

/// Draws `count` pairs without consulting labels (for inference).
pub fn sample_unlabeled_pairs<R: Rng + ?Sized>(
    video: &MultimodalVideo,
    count: usize,
    w: usize,
    rng: &mut R,
) -> Result<Vec<ComparisonPair>> {
    let (lo, hi) = interior(video, w)?;
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let j = rng.random_range(lo..=hi);
        let k = rng.random_range(lo..=hi);
        if j == k {
            continue;
        }
        pairs.push(ComparisonPair {
            j: segment(video, j, w),
            k: segment(video, k, w),
            true_rank: None,
            predicted_prob: None,
        });
    }
    Ok(pairs)
}

/// Writes `video_id,j_t,k_t,r`; `r` is the binary outcome (prediction if
/// present, else ground truth) or empty when neither is known.
pub fn write_pairs_csv(path: &Path, pairs: &[ComparisonPair]) -> Result<()> {
    let mut out = String::from("video_id,j_t,k_t,r\n");
    for p in pairs {
        let r = p
            .outcome()
            .map(|o| u8::from(o.j_wins).to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{},{r}\n", p.video_id(), p.j.center, p.k.center));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a pair CSV. Rows carry no window width, so `w` is supplied by the caller;
/// `r` comes back as `true_rank`.
pub fn read_pairs_csv(path: &Path, w: usize) -> Result<Vec<ComparisonPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "video_id,j_t,k_t,r")) => {}
        _ => return Err(Error::parse(path, 1, "expected header `video_id,j_t,k_t,r`")),
    }
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::parse(path, line_no, "expected 4 fields"));
        }
        let parse_t = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, line_no, format!("bad time index `{s}`")))
        };
        let (j, k) = (parse_t(f[1])?, parse_t(f[2])?);
        let r = match f[3] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(Error::parse(path, line_no, format!("bad rank `{other}`"))),
        };
        let seg = |center| SegmentRef {
            video_id: f[0].to_string(),
            center,
            half_width: w,
        };
        pairs.push(ComparisonPair {
            j: seg(j),
            k: seg(k),
            true_rank: r,
            predicted_prob: None,
        });
    }
    Ok(pairs)
}
