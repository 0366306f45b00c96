//! Per-step emotion regression over modality features concatenated with the
//! global rank trace. With the rank column zeroed this is a plain early-fusion
//! LSTM over the modality features alone.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EmotionTrace, MultimodalVideo};
use crate::error::{Error, Result};
use crate::evaluation::ccc;
use crate::global_ranker::RankTrace;
use crate::nn::{
    adam_step, checkpoint, loss_and_output_grad, AdamConfig, HeadKind, Loss, LstmState, Matrix2D,
    OptimizerState, SequenceModelParams,
};
use crate::seed::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Modality features plus rank trace.
    #[default]
    Combined,
    /// Modality features only; rank column zero.
    DirectOnly,
    /// Rank trace only; modality columns zero.
    RelativeOnly,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Combined => "combined",
            FusionMode::DirectOnly => "direct-only",
            FusionMode::RelativeOnly => "relative-only",
        }
    }

    pub fn uses_ranks(self) -> bool {
        self != FusionMode::DirectOnly
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(FusionMode::Combined),
            "direct-only" => Ok(FusionMode::DirectOnly),
            "relative-only" => Ok(FusionMode::RelativeOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionLoss {
    /// Mean per-step squared error.
    #[default]
    Mse,
    /// `1 − CCC` over each truncated-BPTT chunk.
    Concordance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionTrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    /// Truncated-BPTT chunk length; state is carried across chunks.
    pub chunk_len: usize,
    /// Epochs without validation CCC improvement before stopping; 0 disables.
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub loss: FusionLoss,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            epochs: 30,
            chunk_len: 200,
            patience: 5,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            loss: FusionLoss::Mse,
        }
    }
}

impl FusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.chunk_len == 0 {
            return Err(Error::InvalidConfig(
                "fusion: hidden_dim, epochs and chunk_len must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("fusion: learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// `T × (Σd_m + 1)`: modality features in manifest order, then the rank column.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub x_fusion: Matrix2D,
}

pub fn build_fusion_input(video: &MultimodalVideo, trace: Option<&RankTrace>) -> Result<FusionInput> {
    let len = video.len();
    let rank_col = match trace {
        Some(tr) if tr.len() != len => {
            return Err(Error::DimensionMismatch {
                context: "rank trace length vs video length",
                expected: len,
                actual: tr.len(),
            })
        }
        Some(tr) => Matrix2D::from_vec(len, 1, tr.values.clone())?,
        None => Matrix2D::zeros(len, 1),
    };
    let mut parts: Vec<&Matrix2D> = video.modalities.iter().map(|(_, m)| m).collect();
    parts.push(&rank_col);
    Ok(FusionInput {
        x_fusion: Matrix2D::hconcat(&parts)?,
    })
}

/// Builds the fusion input for `mode`: the rank column is dropped for
/// direct-only, the modality columns are zeroed for relative-only.
pub fn build_mode_input(video: &MultimodalVideo, trace: Option<&RankTrace>, mode: FusionMode) -> Result<FusionInput> {
    match mode {
        FusionMode::Combined => {
            let trace = trace.ok_or(Error::MissingStage("rank"))?;
            build_fusion_input(video, Some(trace))
        }
        FusionMode::DirectOnly => build_fusion_input(video, None),
        FusionMode::RelativeOnly => {
            let trace = trace.ok_or(Error::MissingStage("rank"))?;
            let mut input = build_fusion_input(video, Some(trace))?;
            let cols = input.x_fusion.cols();
            for r in 0..input.x_fusion.rows() {
                input.x_fusion.row_mut(r)[..cols - 1].fill(0.0);
            }
            Ok(input)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMeta {
    pub target: String,
    pub mode: FusionMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub params: SequenceModelParams,
    pub meta: FusionMeta,
}

impl FusionModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &serde_json::to_vec(&self.meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        if params.head() != HeadKind::PerStepLinear {
            return Err(Error::Checkpoint(format!("{} is not a fusion checkpoint", path.display())));
        }
        Ok(Self {
            params,
            meta: serde_json::from_slice(&meta)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ccc: Option<f64>,
}

pub fn history_csv(history: &[FusionEpoch]) -> String {
    let mut s = String::from("epoch,train_loss,val_ccc\n");
    for h in history {
        let c = h.val_ccc.map_or(String::new(), |a| format!("{a:.17e}"));
        s.push_str(&format!("{},{:.17e},{c}\n", h.epoch, h.train_loss));
    }
    s
}

/// Raw (unclamped) per-step outputs, run chunk by chunk with carried state.
fn raw_predictions(params: &SequenceModelParams, x: &Matrix2D, chunk_len: usize) -> Result<Vec<f64>> {
    let mut state = LstmState::zeros(params.hidden_dim());
    let mut out = Vec::with_capacity(x.rows());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + chunk_len).min(x.rows());
        let pass = params.forward_from(&x.slice_rows(start, end), &state)?;
        out.extend_from_slice(pass.output().as_slice());
        state = pass.final_state();
        start = end;
    }
    Ok(out)
}

/// Per-step predictions clamped to `[-1, 1]`.
pub fn predict_emotions(model: &FusionModel, input: &FusionInput) -> Result<EmotionTrace> {
    if input.x_fusion.cols() != model.params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "fusion input width vs model input_dim",
            expected: model.params.input_dim(),
            actual: input.x_fusion.cols(),
        });
    }
    // A single pass over the whole sequence; chunking does not change the
    // forward values since state is carried.
    let raw = raw_predictions(&model.params, &input.x_fusion, input.x_fusion.rows().max(1))?;
    EmotionTrace::clamped(raw)
}

/// One training or validation sequence.
#[derive(Debug, Clone, Copy)]
pub struct FusionSample<'a> {
    pub input: &'a FusionInput,
    pub labels: &'a [f64],
}

/// Truncated-BPTT Adam over the training sequences, one update per chunk.
/// Keeps the parameters with the best mean validation CCC.
pub fn train_fusion(
    train: &[FusionSample<'_>],
    validation: &[FusionSample<'_>],
    meta: FusionMeta,
    cfg: &FusionTrainConfig,
) -> Result<(FusionModel, Vec<FusionEpoch>)> {
    cfg.validate()?;
    let first = train.first().ok_or(Error::Empty("fusion training set"))?;
    let input_dim = first.input.x_fusion.cols();
    for s in train.iter().chain(validation) {
        if s.input.x_fusion.cols() != input_dim || s.labels.len() != s.input.x_fusion.rows() {
            return Err(Error::DimensionMismatch {
                context: "fusion sample shape",
                expected: input_dim,
                actual: s.input.x_fusion.cols(),
            });
        }
    }
    let mut init_rng = substream(meta.seed, "fusion/init");
    let params = SequenceModelParams::init(input_dim, cfg.hidden_dim, 1, HeadKind::PerStepLinear, &mut init_rng)?;
    let mut model = FusionModel { params, meta };
    let mut opt = OptimizerState::new(
        &model.params,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            clip_norm: cfg.clip_norm,
            ..Default::default()
        },
    );
    let mut shuffle_rng = substream(model.meta.seed, "fusion/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, SequenceModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut chunks = 0usize;
        for &i in &order {
            let sample = &train[i];
            let x = &sample.input.x_fusion;
            let mut state = LstmState::zeros(cfg.hidden_dim);
            let mut start = 0;
            while start < x.rows() {
                let end = (start + cfg.chunk_len).min(x.rows());
                let chunk = x.slice_rows(start, end);
                let targets = &sample.labels[start..end];
                let pass = model.params.forward_from(&chunk, &state)?;
                let loss = match cfg.loss {
                    FusionLoss::Mse => Loss::SquaredError { targets },
                    FusionLoss::Concordance => Loss::Concordance { targets },
                };
                let (value, g) = loss_and_output_grad(&model.params, &pass, loss)?;
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                let grads = model.params.backward(&chunk, &pass, &g)?;
                state = pass.final_state();
                adam_step(&mut model.params, &grads, &mut opt).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch },
                    e => e,
                })?;
                total += value;
                chunks += 1;
                start = end;
            }
        }
        let train_loss = total / chunks as f64;
        let val_ccc = if validation.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for s in validation {
                let pred = predict_emotions(&model, s.input)?;
                sum += ccc(pred.values(), s.labels)?;
            }
            Some(sum / validation.len() as f64)
        };
        history.push(FusionEpoch {
            epoch,
            train_loss,
            val_ccc,
        });
        if let Some(c) = val_ccc {
            if best.as_ref().is_none_or(|(b, _)| c > *b) {
                best = Some((c, model.params.clone()));
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

/// `t,y_hat` rows.
pub fn predictions_csv(pred: &EmotionTrace) -> String {
    let mut s = String::from("t,y_hat\n");
    for (t, v) in pred.values().iter().enumerate() {
        s.push_str(&format!("{t},{v:.17e}\n"));
    }
    s
}

pub fn read_predictions_csv(path: &Path) -> Result<EmotionTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "t,y_hat")) => {}
        _ => return Err(Error::parse(path, 1, "expected header `t,y_hat`")),
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        let v = line
            .split_once(',')
            .and_then(|(_, v)| v.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(path, i + 1, format!("bad row `{line}`")))?;
        values.push(v);
    }
    EmotionTrace::new(values).map_err(|e| Error::parse(path, 0, e.to_string()))
}
