//! Bayesian aggregation of binary local rankings into per-segment Gaussian
//! beliefs, and densification of those beliefs into a per-step rank trace.
//!
//! Each time step that appears in a comparison is treated as a player with a
//! latent skill `e_t ~ N(μ, σ²)`. Observing "j beat k" means the noisy
//! performance of `j` exceeded that of `k`, where performance is the skill plus
//! `N(0, β²)`. [`update_pair`] applies the exact moment-matched posterior for
//! one such observation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::gaussian::{v_exceeds, w_exceeds};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(mean.is_finite() && variance.is_finite()) {
            return Err(Error::NonFinite("gaussian belief"));
        }
        if variance <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "belief variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingConfig {
    pub prior_mean: f64,
    pub prior_std: f64,
    /// Performance noise β.
    pub beta: f64,
    /// Passes over the comparison list.
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for RatingConfig {
    fn default() -> Self {
        Self {
            prior_mean: 0.0,
            prior_std: 1.0,
            beta: 0.5,
            epochs: 3,
            shuffle_seed: 0,
        }
    }
}

impl RatingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return Err(Error::InvalidConfig("rating prior_std must be > 0".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("rating beta must be >= 0".into()));
        }
        if !self.prior_mean.is_finite() {
            return Err(Error::InvalidConfig("rating prior_mean must be finite".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("rating epochs must be >= 1".into()));
        }
        Ok(())
    }

    fn prior(&self) -> GaussianBelief {
        GaussianBelief {
            mean: self.prior_mean,
            variance: self.prior_std * self.prior_std,
        }
    }
}

/// Posterior beliefs after observing that `winner` outperformed `loser`.
pub fn update_pair(
    winner: GaussianBelief,
    loser: GaussianBelief,
    beta: f64,
) -> (GaussianBelief, GaussianBelief) {
    let c2 = 2.0 * beta * beta + winner.variance + loser.variance;
    let c = c2.sqrt();
    let t = (winner.mean - loser.mean) / c;
    let v = v_exceeds(t);
    let w = w_exceeds(t);
    let winner_post = GaussianBelief {
        mean: winner.mean + winner.variance / c * v,
        variance: winner.variance * (1.0 - winner.variance / c2 * w),
    };
    let loser_post = GaussianBelief {
        mean: loser.mean - loser.variance / c * v,
        variance: loser.variance * (1.0 - loser.variance / c2 * w),
    };
    (winner_post, loser_post)
}

/// One observed comparison between two time steps of the same video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub j: usize,
    pub k: usize,
    /// `true` when `j` ranks above `k`.
    pub j_wins: bool,
}

impl Outcome {
    fn winner_loser(&self) -> (usize, usize) {
        if self.j_wins {
            (self.j, self.k)
        } else {
            (self.k, self.j)
        }
    }
}

/// Runs `cfg.epochs` shuffled passes of pairwise updates over `outcomes`,
/// starting every referenced time step from the prior.
pub fn run_global_ranking(
    outcomes: &[Outcome],
    cfg: &RatingConfig,
) -> Result<BTreeMap<usize, GaussianBelief>> {
    cfg.validate()?;
    if outcomes.is_empty() {
        return Err(Error::Empty("comparison outcomes"));
    }
    if let Some(o) = outcomes.iter().find(|o| o.j == o.k) {
        return Err(Error::InvalidConfig(format!(
            "comparison of time step {} with itself",
            o.j
        )));
    }
    let mut beliefs = BTreeMap::new();
    for o in outcomes {
        beliefs.entry(o.j).or_insert_with(|| cfg.prior());
        beliefs.entry(o.k).or_insert_with(|| cfg.prior());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (w, l) = outcomes[i].winner_loser();
            let (wp, lp) = update_pair(beliefs[&w], beliefs[&l], cfg.beta);
            beliefs.insert(w, wp);
            beliefs.insert(l, lp);
        }
    }
    Ok(beliefs)
}

/// Dense per-step relative rank estimate for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTrace {
    pub values: Vec<f64>,
    pub posteriors: BTreeMap<usize, GaussianBelief>,
}

impl RankTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `t,e_hat` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,e_hat\n");
        for (t, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{t},{v:.17e}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a trace written by [`RankTrace::write_csv`]. Posteriors are not
    /// stored in the CSV and come back empty.
    pub fn read_csv(path: &Path) -> Result<RankTrace> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "t,e_hat")) => {}
            _ => return Err(Error::parse(path, 1, "expected header `t,e_hat`")),
        }
        let mut values = Vec::new();
        for (i, line) in lines {
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, i + 1, "expected two fields"))?;
            let t: usize = t
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad time index `{t}`")))?;
            if t != values.len() {
                return Err(Error::parse(path, i + 1, format!("expected t={}", values.len())));
            }
            let v: f64 = v
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad value `{v}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, i + 1, "non-finite value"));
            }
            values.push(v);
        }
        Ok(RankTrace {
            values,
            posteriors: BTreeMap::new(),
        })
    }
}

/// Posterior means at compared steps, linearly interpolated between them,
/// held constant outside the compared range, then z-normalized.
pub fn build_rank_trace(beliefs: &BTreeMap<usize, GaussianBelief>, len: usize) -> Result<RankTrace> {
    let values = densify(beliefs, len)?;
    Ok(RankTrace {
        values: z_normalize(values),
        posteriors: beliefs.clone(),
    })
}

pub(crate) fn densify(beliefs: &BTreeMap<usize, GaussianBelief>, len: usize) -> Result<Vec<f64>> {
    let anchors: Vec<(usize, f64)> = beliefs.iter().map(|(&t, b)| (t, b.mean)).collect();
    let (&(first_t, first_mu), &(last_t, last_mu)) = match (anchors.first(), anchors.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Empty("beliefs")),
    };
    if last_t >= len {
        return Err(Error::DimensionMismatch {
            context: "belief time step vs trace length",
            expected: len,
            actual: last_t + 1,
        });
    }
    let mut values = vec![0.0; len];
    values[..=first_t].fill(first_mu);
    values[last_t..].fill(last_mu);
    for pair in anchors.windows(2) {
        let (t0, m0) = pair[0];
        let (t1, m1) = pair[1];
        let span = (t1 - t0) as f64;
        for (t, slot) in values.iter_mut().enumerate().take(t1 + 1).skip(t0) {
            let a = (t - t0) as f64 / span;
            *slot = m0 + a * (m1 - m0);
        }
    }
    Ok(values)
}

pub(crate) fn z_normalize(mut values: Vec<f64>) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= 1e-12) {
        values.fill(0.0);
    } else {
        for v in values.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    values
}
