//! Pairwise classifier over difference tensors: estimates whether emotion
//! intensity at segment `j` exceeds that at segment `k`.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, MultimodalVideo, Split};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, checkpoint, loss_and_output_grad, AdamConfig, HeadKind, Loss, Matrix2D, OptimizerState,
    SequenceModelParams,
};
use crate::segmentation::{difference_from_features, extract_segment, sample_pairs, ComparisonPair, LocalExample};
use crate::seed::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTrainConfig {
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            batch_size: 32,
            epochs: 20,
            patience: 5,
            learning_rate: 1e-3,
            clip_norm: 5.0,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "local: hidden_dim, batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("local: learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRankerMeta {
    pub window: usize,
    pub tie_eps: f64,
    pub target: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRankerModel {
    pub params: SequenceModelParams,
    pub meta: LocalRankerMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pair_acc: Option<f64>,
}

pub fn history_csv(history: &[LocalEpoch]) -> String {
    let mut s = String::from("epoch,train_loss,val_pair_acc\n");
    for h in history {
        let acc = h.val_pair_acc.map_or(String::new(), |a| format!("{a:.17e}"));
        s.push_str(&format!("{},{:.17e},{acc}\n", h.epoch, h.train_loss));
    }
    s
}

impl LocalRankerModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &serde_json::to_vec(&self.meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        if params.head() != HeadKind::FinalSoftmax2 {
            return Err(Error::Checkpoint(format!(
                "{} is not a local ranker checkpoint",
                path.display()
            )));
        }
        Ok(Self {
            params,
            meta: serde_json::from_slice(&meta)?,
        })
    }

    /// P(label at j > label at k) for a difference tensor `x_k − x_j`.
    pub fn prob_from_difference(&self, x_local: &Matrix2D) -> Result<f64> {
        let pass = self.params.forward(x_local)?;
        Ok(pass.output().get(0, 1))
    }
}

fn class_of(label: bool) -> usize {
    usize::from(label)
}

fn accuracy(model: &LocalRankerModel, examples: &[LocalExample]) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for ex in examples {
        if (model.prob_from_difference(&ex.x_local)? >= 0.5) == ex.label {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / examples.len() as f64))
}

/// Mini-batch Adam on mean two-class cross-entropy. Returns the parameters
/// with the best validation accuracy (or the last ones without validation).
pub fn train_on_examples(
    train: &[LocalExample],
    validation: &[LocalExample],
    meta: LocalRankerMeta,
    cfg: &LocalTrainConfig,
) -> Result<(LocalRankerModel, Vec<LocalEpoch>)> {
    cfg.validate()?;
    let first = train.first().ok_or(Error::Empty("local ranker training set"))?;
    let input_dim = first.x_local.cols();
    let mut init_rng = substream(meta.seed, "local/init");
    let params = SequenceModelParams::init(input_dim, cfg.hidden_dim, 2, HeadKind::FinalSoftmax2, &mut init_rng)?;
    let mut model = LocalRankerModel { params, meta };
    let mut opt = OptimizerState::new(
        &model.params,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            clip_norm: cfg.clip_norm,
            ..Default::default()
        },
    );
    let mut shuffle_rng = substream(model.meta.seed, "local/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, SequenceModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let ex = &train[i];
                let pass = model.params.forward(&ex.x_local)?;
                let (loss, g) =
                    loss_and_output_grad(&model.params, &pass, Loss::CrossEntropy { target: class_of(ex.label) })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                total += loss;
                grads.add_assign(&model.params.backward(&ex.x_local, &pass, &g)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.params, &grads, &mut opt).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch },
                e => e,
            })?;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_pair_acc = accuracy(&model, validation)?;
        history.push(LocalEpoch {
            epoch,
            train_loss,
            val_pair_acc,
        });
        if let Some(acc) = val_pair_acc {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// Labeled pairs for one video, drawn from the `local/pairs/<video_id>` substream.
pub fn sample_training_pairs(
    video: &MultimodalVideo,
    target: &str,
    count: usize,
    window: usize,
    tie_eps: f64,
    seed: u64,
) -> Result<Vec<ComparisonPair>> {
    let mut rng = substream(seed, &format!("local/pairs/{}", video.video_id));
    sample_pairs(video, target, count, window, tie_eps, &mut rng)
}

fn examples_for(video: &MultimodalVideo, pairs: &[ComparisonPair]) -> Result<Vec<LocalExample>> {
    let features = video.concat_features();
    pairs
        .iter()
        .map(|p| {
            let label = p
                .true_rank
                .ok_or_else(|| Error::InvalidConfig("training pair without rank".into()))?;
            Ok(LocalExample {
                x_local: difference_from_features(&features, p.j.center, p.k.center, p.j.half_width)?,
                label,
            })
        })
        .collect()
}

/// Trains on pooled pairs from every training video; validation-split videos
/// provide the held-out pair accuracy used for early stopping.
pub fn train_local_ranker(
    corpus: &Corpus,
    target: &str,
    pairs_per_video: usize,
    window: usize,
    tie_eps: f64,
    seed: u64,
    cfg: &LocalTrainConfig,
) -> Result<(LocalRankerModel, Vec<LocalEpoch>)> {
    if pairs_per_video == 0 {
        return Err(Error::InvalidConfig("pairs per video must be >= 1".into()));
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for video in &corpus.videos {
        let bucket = match video.split {
            Split::Train => &mut train,
            Split::Validation => &mut validation,
            Split::Test => continue,
        };
        let pairs = sample_training_pairs(video, target, pairs_per_video, window, tie_eps, seed)?;
        bucket.extend(examples_for(video, &pairs)?);
    }
    let meta = LocalRankerMeta {
        window,
        tie_eps,
        target: target.to_string(),
        seed,
    };
    train_on_examples(&train, &validation, meta, cfg)
}

/// P(r_{j,k} = 1) for one pair of `video`.
pub fn predict_local_rank(model: &LocalRankerModel, video: &MultimodalVideo, pair: &ComparisonPair) -> Result<f64> {
    if video.feature_dim() != model.params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "video features vs local ranker input_dim",
            expected: model.params.input_dim(),
            actual: video.feature_dim(),
        });
    }
    let xj = extract_segment(video, pair.j.center, pair.j.half_width)?;
    let xk = extract_segment(video, pair.k.center, pair.k.half_width)?;
    model.prob_from_difference(&xk.sub(&xj)?)
}

/// Fills `predicted_prob` for every pair of one video.
pub fn predict_pairs(model: &LocalRankerModel, video: &MultimodalVideo, pairs: &mut [ComparisonPair]) -> Result<()> {
    if video.feature_dim() != model.params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "video features vs local ranker input_dim",
            expected: model.params.input_dim(),
            actual: video.feature_dim(),
        });
    }
    let features = video.concat_features();
    for p in pairs.iter_mut() {
        let x = difference_from_features(&features, p.j.center, p.k.center, p.j.half_width)?;
        p.predicted_prob = Some(model.prob_from_difference(&x)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EmotionTrace;
    use crate::segmentation::SegmentRef;

    fn meta() -> LocalRankerMeta {
        LocalRankerMeta {
            window: 1,
            tie_eps: 0.0,
            target: "arousal".into(),
            seed: 0,
        }
    }

    #[test]
    fn zero_model_is_indifferent() {
        let model = LocalRankerModel {
            params: SequenceModelParams::zeros(2, 3, 2, HeadKind::FinalSoftmax2).unwrap(),
            meta: meta(),
        };
        let y = EmotionTrace::new(vec![0.0; 10]).unwrap();
        let feats = Matrix2D::from_vec(10, 2, (0..20).map(|i| i as f64).collect()).unwrap();
        let v = MultimodalVideo::new("v", Split::Test, vec![("m".into(), feats)], vec![("arousal".into(), y)]).unwrap();
        let seg = |c| SegmentRef {
            video_id: "v".into(),
            center: c,
            half_width: 1,
        };
        let pair = ComparisonPair {
            j: seg(2),
            k: seg(6),
            true_rank: None,
            predicted_prob: None,
        };
        assert_eq!(predict_local_rank(&model, &v, &pair).unwrap(), 0.5);
        let same = ComparisonPair { k: seg(2), ..pair };
        assert_eq!(predict_local_rank(&model, &v, &same).unwrap(), 0.5);
    }

    #[test]
    fn checkpoint_round_trip_keeps_metadata() {
        let model = LocalRankerModel {
            params: SequenceModelParams::zeros(2, 3, 2, HeadKind::FinalSoftmax2).unwrap(),
            meta: meta(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("local.model");
        model.save(&path).unwrap();
        assert_eq!(LocalRankerModel::load(&path).unwrap(), model);
    }

    #[test]
    fn history_csv_format() {
        let h = [LocalEpoch {
            epoch: 1,
            train_loss: 0.5,
            val_pair_acc: None,
        }];
        assert_eq!(history_csv(&h), "epoch,train_loss,val_pair_acc\n1,5.00000000000000000e-1,\n");
    }
}
