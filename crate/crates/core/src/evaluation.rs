//! Agreement metrics and experiment reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "metric input lengths",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("metric needs at least two values"));
    }
    Ok(())
}

/// Lin's concordance correlation coefficient with population (1/N) moments.
///
/// Returns 0 when both sequences are constant and equal (all three terms of
/// the denominator below 1e-12).
pub fn ccc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    va /= n;
    vb /= n;
    cov /= n;
    let gap2 = (ma - mb) * (ma - mb);
    if va < 1e-12 && vb < 1e-12 && gap2 < 1e-12 {
        return Ok(0.0);
    }
    Ok((2.0 * cov / (va + vb + gap2)).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Fraction of `predicted` that agree with `truth`.
pub fn pair_accuracy(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "pair accuracy lengths",
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("pair accuracy over zero pairs"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CccAggregation {
    /// Unweighted mean of per-video CCCs.
    #[default]
    PerVideo,
    /// One CCC over all test videos concatenated.
    Concatenated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub ccc: f64,
    /// Spearman correlation of the rank trace with the labels, when a trace exists.
    pub rank_spearman: Option<f64>,
}

/// Per-video material needed to score one test video.
#[derive(Debug, Clone)]
pub struct VideoArtifacts<'a> {
    pub video_id: &'a str,
    pub labels: &'a [f64],
    pub predictions: Option<&'a [f64]>,
    pub rank_trace: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub target: String,
    pub mode: String,
    pub rank_source: String,
    pub aggregation: CccAggregation,
    pub per_video: Vec<VideoScore>,
    /// CCC under `aggregation`.
    pub ccc: f64,
    pub mean_video_ccc: f64,
    pub concatenated_ccc: f64,
    /// Local ranker accuracy on held-out evaluation pairs, when ranking ran.
    pub local_pair_accuracy: Option<f64>,
    pub mean_rank_spearman: Option<f64>,
    pub config_fingerprint: String,
}

/// Deterministic aggregation of per-video results. `local_pairs` holds
/// `(predicted, truth)` outcomes for held-out pairs when ranking ran.
pub fn assemble_report(
    target: &str,
    mode: &str,
    rank_source: &str,
    aggregation: CccAggregation,
    videos: &[VideoArtifacts<'_>],
    local_pairs: Option<(&[bool], &[bool])>,
    config_fingerprint: &str,
) -> Result<EvaluationReport> {
    if videos.is_empty() {
        return Err(Error::Empty("no test videos to evaluate"));
    }
    let mut per_video = Vec::with_capacity(videos.len());
    let mut all_y = Vec::new();
    let mut all_p = Vec::new();
    for v in videos {
        let pred = v.predictions.ok_or(Error::MissingStage("predict"))?;
        per_video.push(VideoScore {
            video_id: v.video_id.to_string(),
            ccc: ccc(pred, v.labels)?,
            rank_spearman: v.rank_trace.map(|e| spearman(e, v.labels)).transpose()?,
        });
        all_y.extend_from_slice(v.labels);
        all_p.extend_from_slice(pred);
    }
    let mean_video_ccc = per_video.iter().map(|s| s.ccc).sum::<f64>() / per_video.len() as f64;
    let concatenated_ccc = ccc(&all_p, &all_y)?;
    let spearmans: Vec<f64> = per_video.iter().filter_map(|s| s.rank_spearman).collect();
    let mean_rank_spearman =
        (!spearmans.is_empty()).then(|| spearmans.iter().sum::<f64>() / spearmans.len() as f64);
    let local_pair_accuracy = local_pairs
        .map(|(p, t)| pair_accuracy(p, t))
        .transpose()?;
    Ok(EvaluationReport {
        target: target.to_string(),
        mode: mode.to_string(),
        rank_source: rank_source.to_string(),
        aggregation,
        ccc: match aggregation {
            CccAggregation::PerVideo => mean_video_ccc,
            CccAggregation::Concatenated => concatenated_ccc,
        },
        per_video,
        mean_video_ccc,
        concatenated_ccc,
        local_pair_accuracy,
        mean_rank_spearman,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "target: {}  mode: {}  ranks: {}", self.target, self.mode, self.rank_source).unwrap();
        writeln!(s, "{:<16} {:>8} {:>10}", "video", "CCC", "rank rho").unwrap();
        for v in &self.per_video {
            let rho = v.rank_spearman.map_or("-".to_string(), |r| format!("{r:.4}"));
            writeln!(s, "{:<16} {:>8.4} {:>10}", v.video_id, v.ccc, rho).unwrap();
        }
        writeln!(s, "{:<16} {:>8.4}", "aggregate", self.ccc).unwrap();
        if let Some(acc) = self.local_pair_accuracy {
            writeln!(s, "local pair accuracy: {acc:.4}").unwrap();
        }
        s
    }
}

/// `t,y,y_hat,e_hat` rows for external plotting; `e_hat` is empty without a trace.
pub fn plot_csv(labels: &[f64], predictions: &[f64], trace: Option<&[f64]>) -> String {
    let mut s = String::from("t,y,y_hat,e_hat\n");
    for (t, (y, p)) in labels.iter().zip(predictions).enumerate() {
        let e = trace.map_or(String::new(), |e| format!("{:.17e}", e[t]));
        writeln!(s, "{t},{y:.17e},{p:.17e},{e}").unwrap();
    }
    s
}
