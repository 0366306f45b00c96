//! End-to-end orchestration: corpus, local ranker, global ranking, fusion,
//! prediction and evaluation, with every stage persisted under
//! `<runs_root>/<fingerprint>/`.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml            resolved configuration
//! local.model            local ranker checkpoint
//! local_history.csv
//! pairs/<video_id>.csv   evaluation pairs with predicted (or oracle) outcomes
//! traces/<video_id>.csv  global rank traces
//! fusion.model           fusion checkpoint
//! fusion_history.csv
//! predictions/<video_id>.csv
//! report.json
//! timing.json            wall-clock seconds per stage
//! ```
//!
//! Random streams are derived from the master seed with these labels:
//! `local/pairs/<video_id>`, `local/init`, `local/shuffle` (local ranker),
//! `rank/pairs/<video_id>`, `rank/shuffle/<shuffle_seed>/<video_id>` (global
//! ranking), `fusion/init`, `fusion/shuffle` (fusion).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_corpus, read_dataset, Corpus, GeneratorConfig, MultimodalVideo, Split};
use crate::error::{Error, Result};
use crate::evaluation::{assemble_report, median, CccAggregation, EvaluationReport, VideoArtifacts};
use crate::fusion::{
    build_mode_input, predict_emotions, predictions_csv, read_predictions_csv, train_fusion, FusionMeta,
    FusionMode, FusionModel, FusionSample, FusionTrainConfig,
};
use crate::global_ranker::{build_rank_trace, run_global_ranking, RankTrace, RatingConfig};
use crate::local_ranker::{history_csv, predict_pairs, train_local_ranker, LocalRankerModel, LocalTrainConfig};
use crate::segmentation::{read_pairs_csv, sample_unlabeled_pairs, write_pairs_csv, ComparisonPair};
use crate::seed::{derive_u64, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankSource {
    /// Local ranks come from the trained local ranker.
    #[default]
    Predicted,
    /// Local ranks are read off the labels (upper-bound diagnostic).
    Oracle,
}

impl RankSource {
    pub fn as_str(self) -> &'static str {
        match self {
            RankSource::Predicted => "predicted",
            RankSource::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Read the corpus from this directory instead of generating it.
    pub dataset_dir: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub target: String,
    /// Pairs per video, both for local training and for global ranking.
    pub pairs_per_video: usize,
    /// Segment half-width.
    pub window: usize,
    pub tie_eps: f64,
    pub rating: RatingConfig,
    pub local: LocalTrainConfig,
    pub fusion: FusionTrainConfig,
    pub mode: FusionMode,
    pub rank_source: RankSource,
    pub aggregation: CccAggregation,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            generator: GeneratorConfig::default(),
            target: "arousal".into(),
            pairs_per_video: 500,
            window: 50,
            tie_eps: 0.02,
            rating: RatingConfig::default(),
            local: LocalTrainConfig::default(),
            fusion: FusionTrainConfig::default(),
            mode: FusionMode::Combined,
            rank_source: RankSource::Predicted,
            aggregation: CccAggregation::PerVideo,
            seed: 0,
        }
    }
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(e.to_string())
}

/// Parses the right-hand side of `--key=value` as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_video == 0 {
            return Err(Error::InvalidConfig("pairs_per_video must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if !(self.tie_eps >= 0.0 && self.tie_eps.is_finite()) {
            return Err(Error::InvalidConfig("tie_eps must be >= 0".into()));
        }
        if self.target.is_empty() {
            return Err(Error::InvalidConfig("target must be set".into()));
        }
        if self.dataset_dir.is_none() {
            self.generator.validate()?;
        }
        self.rating.validate()?;
        self.local.validate()?;
        self.fusion.validate()
    }

    /// Parses a TOML document and applies `key=value` overrides, where keys
    /// are dotted paths such as `local.hidden_dim`.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(toml_err)?;
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_override_value(raw))?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(toml_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_err)
    }

    /// Applies a single `key=value` override to an existing config.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        let text = self.to_toml()?;
        Self::from_toml_with_overrides(&text, &[(key.to_string(), raw.to_string())])
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| toml_err(format!("empty key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| toml_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize to JSON");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Cache keys for stage outputs that several configurations share.
#[derive(Serialize)]
struct CorpusKey<'a> {
    dataset_dir: &'a Option<PathBuf>,
    generator: &'a GeneratorConfig,
}

#[derive(Serialize)]
struct LocalKey<'a> {
    corpus: CorpusKey<'a>,
    target: &'a str,
    pairs_per_video: usize,
    window: usize,
    tie_eps: f64,
    local: &'a LocalTrainConfig,
    seed: u64,
}

#[derive(Serialize)]
struct RankKey<'a> {
    local: Option<LocalKey<'a>>,
    corpus: CorpusKey<'a>,
    pairs_per_video: usize,
    window: usize,
    rating: &'a RatingConfig,
    rank_source: RankSource,
    seed: u64,
}

fn corpus_key(cfg: &ExperimentConfig) -> CorpusKey<'_> {
    CorpusKey {
        dataset_dir: &cfg.dataset_dir,
        generator: &cfg.generator,
    }
}

fn local_key(cfg: &ExperimentConfig) -> LocalKey<'_> {
    LocalKey {
        corpus: corpus_key(cfg),
        target: &cfg.target,
        pairs_per_video: cfg.pairs_per_video,
        window: cfg.window,
        tie_eps: cfg.tie_eps,
        local: &cfg.local,
        seed: cfg.seed,
    }
}

fn rank_key(cfg: &ExperimentConfig) -> RankKey<'_> {
    RankKey {
        local: (cfg.rank_source == RankSource::Predicted).then(|| local_key(cfg)),
        corpus: corpus_key(cfg),
        pairs_per_video: cfg.pairs_per_video,
        window: cfg.window,
        rating: &cfg.rating,
        rank_source: cfg.rank_source,
        seed: cfg.seed,
    }
}

/// Outputs of the ranking stage for every video, ordered by video id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOutputs {
    pub pairs: BTreeMap<String, Vec<ComparisonPair>>,
    pub traces: BTreeMap<String, RankTrace>,
}

/// In-memory memo of stage outputs keyed by the configuration that produced
/// them, so ablation cells that share upstream stages compute them once.
#[derive(Default)]
pub struct StageCache {
    corpora: HashMap<String, Arc<Corpus>>,
    local: HashMap<String, Arc<(LocalRankerModel, String)>>,
    ranks: HashMap<String, Arc<RankOutputs>>,
}

impl StageCache {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    match &cfg.dataset_dir {
        Some(dir) => read_dataset(dir),
        None => generate_corpus(&cfg.generator),
    }
}

fn check_corpus(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<()> {
    if !corpus.targets.contains(&cfg.target) {
        return Err(Error::InvalidConfig(format!("corpus has no target `{}`", cfg.target)));
    }
    for split in [Split::Train, Split::Test] {
        if corpus.split(split).next().is_none() {
            return Err(Error::InvalidConfig(format!("corpus has no {split:?} videos")));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Paths of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `<runs_root>/<fingerprint>`.
    pub fn for_config(runs_root: &Path, cfg: &ExperimentConfig) -> Self {
        Self::new(runs_root.join(cfg.fingerprint()))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn local_model(&self) -> PathBuf {
        self.root.join("local.model")
    }
    pub fn fusion_model(&self) -> PathBuf {
        self.root.join("fusion.model")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.json")
    }
    pub fn pairs(&self, video_id: &str) -> PathBuf {
        self.root.join("pairs").join(format!("{video_id}.csv"))
    }
    pub fn trace(&self, video_id: &str) -> PathBuf {
        self.root.join("traces").join(format!("{video_id}.csv"))
    }
    pub fn prediction(&self, video_id: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{video_id}.csv"))
    }

    pub fn init(&self, cfg: &ExperimentConfig) -> Result<()> {
        create_dir(&self.root)?;
        write_file(&self.config(), &cfg.to_toml()?)
    }
}

/// Stage 1: trains the local ranker on training videos and writes
/// `local.model` and `local_history.csv`.
pub fn stage_local(cfg: &ExperimentConfig, corpus: &Corpus, dir: &RunDir) -> Result<LocalRankerModel> {
    let (model, history) = train_local_ranker(
        corpus,
        &cfg.target,
        cfg.pairs_per_video,
        cfg.window,
        cfg.tie_eps,
        cfg.seed,
        &cfg.local,
    )?;
    write_local(&model, &history_csv(&history), dir)?;
    Ok(model)
}

fn write_local(model: &LocalRankerModel, history: &str, dir: &RunDir) -> Result<()> {
    create_dir(&dir.root)?;
    model.save(&dir.local_model())?;
    write_file(&dir.root.join("local_history.csv"), history)
}

fn rank_video(
    cfg: &ExperimentConfig,
    video: &MultimodalVideo,
    model: Option<&LocalRankerModel>,
) -> Result<(Vec<ComparisonPair>, RankTrace)> {
    let mut rng = substream(cfg.seed, &format!("rank/pairs/{}", video.video_id));
    let mut pairs = sample_unlabeled_pairs(video, cfg.pairs_per_video, cfg.window, &mut rng)?;
    match (cfg.rank_source, model) {
        (RankSource::Predicted, Some(model)) => predict_pairs(model, video, &mut pairs)?,
        (RankSource::Predicted, None) => return Err(Error::MissingStage("train-local")),
        (RankSource::Oracle, _) => {
            let y = video.label(&cfg.target)?.values();
            for p in &mut pairs {
                p.true_rank = Some(y[p.j.center] > y[p.k.center]);
            }
        }
    }
    let trace = trace_from_pairs(cfg, video, &pairs)?;
    Ok((pairs, trace))
}

fn trace_from_pairs(cfg: &ExperimentConfig, video: &MultimodalVideo, pairs: &[ComparisonPair]) -> Result<RankTrace> {
    let outcomes = pairs
        .iter()
        .map(|p| p.outcome().ok_or(Error::MissingStage("rank")))
        .collect::<Result<Vec<_>>>()?;
    let rating = RatingConfig {
        shuffle_seed: derive_u64(
            cfg.seed,
            &format!("rank/shuffle/{}/{}", cfg.rating.shuffle_seed, video.video_id),
        ),
        ..cfg.rating
    };
    let beliefs = run_global_ranking(&outcomes, &rating)?;
    build_rank_trace(&beliefs, video.len())
}

/// Stage 2: samples unlabeled evaluation pairs for every video, ranks them
/// (with the local ranker or the labels) and aggregates them into rank traces.
pub fn stage_rank(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    model: Option<&LocalRankerModel>,
    dir: &RunDir,
) -> Result<RankOutputs> {
    let mut out = RankOutputs {
        pairs: BTreeMap::new(),
        traces: BTreeMap::new(),
    };
    for video in &corpus.videos {
        let (pairs, trace) = rank_video(cfg, video, model)?;
        out.pairs.insert(video.video_id.clone(), pairs);
        out.traces.insert(video.video_id.clone(), trace);
    }
    write_ranks(&out, dir)?;
    Ok(out)
}

fn write_ranks(ranks: &RankOutputs, dir: &RunDir) -> Result<()> {
    create_dir(&dir.root.join("pairs"))?;
    create_dir(&dir.root.join("traces"))?;
    for (id, pairs) in &ranks.pairs {
        write_pairs_csv(&dir.pairs(id), pairs)?;
    }
    for (id, trace) in &ranks.traces {
        trace.write_csv(&dir.trace(id))?;
    }
    Ok(())
}

/// Reloads persisted pairs and traces. Pair outcomes come back as
/// `true_rank`, which is what the CSV records.
pub fn load_ranks(cfg: &ExperimentConfig, corpus: &Corpus, dir: &RunDir) -> Result<RankOutputs> {
    let mut out = RankOutputs {
        pairs: BTreeMap::new(),
        traces: BTreeMap::new(),
    };
    for video in &corpus.videos {
        let id = video.video_id.clone();
        out.pairs.insert(id.clone(), read_pairs_csv(&dir.pairs(&id), cfg.window)?);
        out.traces.insert(id.clone(), RankTrace::read_csv(&dir.trace(&id))?);
    }
    Ok(out)
}

fn trace_for<'a>(
    cfg: &ExperimentConfig,
    ranks: Option<&'a RankOutputs>,
    video_id: &str,
) -> Result<Option<&'a RankTrace>> {
    if !cfg.mode.uses_ranks() {
        return Ok(None);
    }
    ranks
        .and_then(|r| r.traces.get(video_id))
        .map(Some)
        .ok_or(Error::MissingStage("rank"))
}

/// Stage 3: trains the fusion model on training videos, early-stopping on
/// validation videos. Writes `fusion.model` and `fusion_history.csv`.
pub fn stage_fusion(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    ranks: Option<&RankOutputs>,
    dir: &RunDir,
) -> Result<FusionModel> {
    let mut inputs = Vec::new();
    for split in [Split::Train, Split::Validation] {
        for video in corpus.split(split) {
            let input = build_mode_input(video, trace_for(cfg, ranks, &video.video_id)?, cfg.mode)?;
            inputs.push((split, input, video.label(&cfg.target)?.values()));
        }
    }
    let samples = |s: Split| -> Vec<FusionSample<'_>> {
        inputs
            .iter()
            .filter(|(split, _, _)| *split == s)
            .map(|(_, input, labels)| FusionSample { input, labels })
            .collect()
    };
    let meta = FusionMeta {
        target: cfg.target.clone(),
        mode: cfg.mode,
        seed: cfg.seed,
    };
    let (model, history) = train_fusion(&samples(Split::Train), &samples(Split::Validation), meta, &cfg.fusion)?;
    create_dir(&dir.root)?;
    model.save(&dir.fusion_model())?;
    write_file(&dir.root.join("fusion_history.csv"), &crate::fusion::history_csv(&history))?;
    Ok(model)
}

/// Stage 4: predicts every test video and writes `predictions/<video_id>.csv`.
pub fn stage_predict(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    ranks: Option<&RankOutputs>,
    model: &FusionModel,
    dir: &RunDir,
) -> Result<BTreeMap<String, Vec<f64>>> {
    create_dir(&dir.root.join("predictions"))?;
    let mut out = BTreeMap::new();
    for video in corpus.split(Split::Test) {
        let input = build_mode_input(video, trace_for(cfg, ranks, &video.video_id)?, cfg.mode)?;
        let pred = predict_emotions(model, &input)?;
        write_file(&dir.prediction(&video.video_id), &predictions_csv(&pred))?;
        out.insert(video.video_id.clone(), pred.values().to_vec());
    }
    Ok(out)
}

pub fn load_predictions(corpus: &Corpus, dir: &RunDir) -> Result<BTreeMap<String, Vec<f64>>> {
    corpus
        .split(Split::Test)
        .map(|v| Ok((v.video_id.clone(), read_predictions_csv(&dir.prediction(&v.video_id))?.values().to_vec())))
        .collect()
}

/// Stage 5: scores test videos and writes `report.json`. Test labels are read
/// here and nowhere else.
pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    ranks: Option<&RankOutputs>,
    predictions: &BTreeMap<String, Vec<f64>>,
    dir: &RunDir,
) -> Result<EvaluationReport> {
    let tests: Vec<&MultimodalVideo> = corpus.split(Split::Test).collect();
    let mut videos = Vec::with_capacity(tests.len());
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for video in &tests {
        let labels = video.label(&cfg.target)?.values();
        let trace = match ranks {
            Some(r) if cfg.mode.uses_ranks() => Some(r.traces.get(&video.video_id).ok_or(Error::MissingStage("rank"))?),
            _ => None,
        };
        if let (Some(r), RankSource::Predicted, true) = (ranks, cfg.rank_source, cfg.mode.uses_ranks()) {
            for p in r.pairs.get(&video.video_id).ok_or(Error::MissingStage("rank"))? {
                let (yj, yk) = (labels[p.j.center], labels[p.k.center]);
                if (yj - yk).abs() < cfg.tie_eps || yj == yk {
                    continue;
                }
                predicted.push(p.outcome().ok_or(Error::MissingStage("rank"))?.j_wins);
                truth.push(yj > yk);
            }
        }
        videos.push(VideoArtifacts {
            video_id: &video.video_id,
            labels,
            predictions: predictions.get(&video.video_id).map(Vec::as_slice),
            rank_trace: trace.map(|t| t.values.as_slice()),
        });
    }
    let local_pairs = (!predicted.is_empty()).then_some((predicted.as_slice(), truth.as_slice()));
    let report = assemble_report(
        &cfg.target,
        cfg.mode.as_str(),
        cfg.rank_source.as_str(),
        cfg.aggregation,
        &videos,
        local_pairs,
        &cfg.fingerprint(),
    )?;
    create_dir(&dir.root)?;
    write_file(&dir.report(), &report.to_json()?)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub stages: Vec<(String, f64)>,
}

impl StageTiming {
    fn record(&mut self, stage: &str, start: Instant) {
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }
}

/// Runs every stage, writing artifacts to `dir`. Upstream stages already in
/// `cache` are reused and their artifacts rewritten into `dir`.
pub fn run_experiment_cached(cfg: &ExperimentConfig, dir: &RunDir, cache: &mut StageCache) -> Result<EvaluationReport> {
    cfg.validate()?;
    dir.init(cfg)?;
    let mut timing = StageTiming::default();

    let start = Instant::now();
    let ckey = fingerprint_of(&corpus_key(cfg));
    let corpus = match cache.corpora.get(&ckey) {
        Some(c) => c.clone(),
        None => {
            let c = Arc::new(load_corpus(cfg).map_err(|e| e.in_stage("gen-data"))?);
            cache.corpora.insert(ckey, c.clone());
            c
        }
    };
    check_corpus(cfg, &corpus).map_err(|e| e.in_stage("gen-data"))?;
    timing.record("gen-data", start);

    let mut ranks = None;
    if cfg.mode.uses_ranks() {
        let mut local = None;
        if cfg.rank_source == RankSource::Predicted {
            let start = Instant::now();
            let lkey = fingerprint_of(&local_key(cfg));
            let entry = match cache.local.get(&lkey) {
                Some(e) => {
                    write_local(&e.0, &e.1, dir).map_err(|e| e.in_stage("train-local"))?;
                    e.clone()
                }
                None => {
                    let model = stage_local(cfg, &corpus, dir).map_err(|e| e.in_stage("train-local"))?;
                    let history = std::fs::read_to_string(dir.root.join("local_history.csv"))
                        .map_err(|e| Error::io(dir.root.join("local_history.csv"), e).in_stage("train-local"))?;
                    let e = Arc::new((model, history));
                    cache.local.insert(lkey, e.clone());
                    e
                }
            };
            local = Some(entry);
            timing.record("train-local", start);
        }
        let start = Instant::now();
        let rkey = fingerprint_of(&rank_key(cfg));
        let r = match cache.ranks.get(&rkey) {
            Some(r) => {
                write_ranks(r, dir).map_err(|e| e.in_stage("rank"))?;
                r.clone()
            }
            None => {
                let r = Arc::new(
                    stage_rank(cfg, &corpus, local.as_ref().map(|e| &e.0), dir).map_err(|e| e.in_stage("rank"))?,
                );
                cache.ranks.insert(rkey, r.clone());
                r
            }
        };
        ranks = Some(r);
        timing.record("rank", start);
    }

    let start = Instant::now();
    let fusion = stage_fusion(cfg, &corpus, ranks.as_deref(), dir).map_err(|e| e.in_stage("train-fusion"))?;
    timing.record("train-fusion", start);

    let start = Instant::now();
    let predictions =
        stage_predict(cfg, &corpus, ranks.as_deref(), &fusion, dir).map_err(|e| e.in_stage("predict"))?;
    timing.record("predict", start);

    let start = Instant::now();
    let report =
        stage_evaluate(cfg, &corpus, ranks.as_deref(), &predictions, dir).map_err(|e| e.in_stage("evaluate"))?;
    timing.record("evaluate", start);

    write_file(&dir.timing(), &(serde_json::to_string_pretty(&timing)? + "\n")).map_err(|e| e.in_stage("evaluate"))?;
    Ok(report)
}

/// Runs every stage into `<runs_root>/<fingerprint>/`.
pub fn run_experiment(cfg: &ExperimentConfig, runs_root: &Path) -> Result<EvaluationReport> {
    run_experiment_cached(cfg, &RunDir::for_config(runs_root, cfg), &mut StageCache::new())
}

/// A pipeline stage that can be run on its own from persisted predecessors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainLocal,
    Rank,
    TrainFusion,
    Predict,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainLocal => "train-local",
            Stage::Rank => "rank",
            Stage::TrainFusion => "train-fusion",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug)]
pub enum StageOutcome {
    /// The stage does not apply to this configuration (for example ranking
    /// in direct-only mode, or local training with oracle ranks).
    Skipped,
    Done,
    Report(EvaluationReport),
}

fn load_ranks_if_used(cfg: &ExperimentConfig, corpus: &Corpus, dir: &RunDir) -> Result<Option<RankOutputs>> {
    cfg.mode.uses_ranks().then(|| load_ranks(cfg, corpus, dir)).transpose()
}

/// Runs one stage in `dir`, reading its inputs from artifacts written by
/// earlier stages. Results are identical to those of [`run_experiment`].
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage, dir: &RunDir) -> Result<StageOutcome> {
    let inner = || -> Result<StageOutcome> {
        cfg.validate()?;
        dir.init(cfg)?;
        let corpus = load_corpus(cfg)?;
        check_corpus(cfg, &corpus)?;
        match stage {
            Stage::TrainLocal => {
                if !cfg.mode.uses_ranks() || cfg.rank_source == RankSource::Oracle {
                    return Ok(StageOutcome::Skipped);
                }
                stage_local(cfg, &corpus, dir)?;
            }
            Stage::Rank => {
                if !cfg.mode.uses_ranks() {
                    return Ok(StageOutcome::Skipped);
                }
                let model = match cfg.rank_source {
                    RankSource::Predicted => Some(LocalRankerModel::load(&dir.local_model())?),
                    RankSource::Oracle => None,
                };
                stage_rank(cfg, &corpus, model.as_ref(), dir)?;
            }
            Stage::TrainFusion => {
                let ranks = load_ranks_if_used(cfg, &corpus, dir)?;
                stage_fusion(cfg, &corpus, ranks.as_ref(), dir)?;
            }
            Stage::Predict => {
                let ranks = load_ranks_if_used(cfg, &corpus, dir)?;
                let model = FusionModel::load(&dir.fusion_model())?;
                stage_predict(cfg, &corpus, ranks.as_ref(), &model, dir)?;
            }
            Stage::Evaluate => {
                let ranks = load_ranks_if_used(cfg, &corpus, dir)?;
                let predictions = load_predictions(&corpus, dir)?;
                return Ok(StageOutcome::Report(stage_evaluate(cfg, &corpus, ranks.as_ref(), &predictions, dir)?));
            }
        }
        Ok(StageOutcome::Done)
    };
    inner().map_err(|e| e.in_stage(stage.name()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    /// Pairs per video.
    K,
    /// Segment half-width.
    W,
    Mode,
}

impl AblationAxis {
    pub fn key(self) -> &'static str {
        match self {
            AblationAxis::K => "pairs_per_video",
            AblationAxis::W => "window",
            AblationAxis::Mode => "mode",
        }
    }

    fn override_value(self, value: &str) -> String {
        match self {
            AblationAxis::Mode => format!("\"{value}\""),
            _ => value.to_string(),
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "pairs_per_video" => Ok(AblationAxis::K),
            "w" | "W" | "window" => Ok(AblationAxis::W),
            "mode" => Ok(AblationAxis::Mode),
            other => Err(Error::InvalidConfig(format!("unknown ablation axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: String,
    pub seed: u64,
    pub fingerprint: String,
    /// `None` when the cell failed; see `error`.
    pub report: Option<EvaluationReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub median_ccc: Option<f64>,
    pub median_local_pair_accuracy: Option<f64>,
    pub median_rank_spearman: Option<f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub target: String,
    pub rows: Vec<AblationRow>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn row(&self, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    /// Reports for one value, in seed order; failed cells are skipped.
    pub fn reports(&self, value: &str) -> Vec<&EvaluationReport> {
        self.cells
            .iter()
            .filter(|c| c.value == value)
            .filter_map(|c| c.report.as_ref())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        writeln!(s, "target: {}", self.target).unwrap();
        writeln!(
            s,
            "{:<16} {:>10} {:>10} {:>10} {:>7}",
            self.axis.key(),
            "CCC",
            "pair acc",
            "rank rho",
            "failed"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:<16} {:>10} {:>10} {:>10} {:>7}",
                r.value,
                fmt(r.median_ccc),
                fmt(r.median_local_pair_accuracy),
                fmt(r.median_rank_spearman),
                r.failed
            )
            .unwrap();
        }
        s
    }
}

/// Runs the cross product of `values × seeds`. Failed cells are recorded and
/// the suite continues; medians are over the successful cells of each value.
pub fn run_ablation_suite(
    base: &ExperimentConfig,
    axis: AblationAxis,
    values: &[String],
    seeds: &[u64],
    runs_root: &Path,
    cache: &mut StageCache,
) -> Result<AblationTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one value and one seed".into()));
    }
    let mut cells = Vec::with_capacity(values.len() * seeds.len());
    for value in values {
        for &seed in seeds {
            let cfg = base
                .with_override(axis.key(), &axis.override_value(value))
                .and_then(|c| c.with_override("seed", &seed.to_string()));
            let (fingerprint, outcome) = match cfg {
                Ok(cfg) => (
                    cfg.fingerprint(),
                    run_experiment_cached(&cfg, &RunDir::for_config(runs_root, &cfg), cache),
                ),
                Err(e) => (String::new(), Err(e)),
            };
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(AblationCell {
                value: value.clone(),
                seed,
                fingerprint,
                report,
                error,
            });
        }
    }
    let rows = values
        .iter()
        .map(|value| {
            let reports: Vec<&EvaluationReport> = cells
                .iter()
                .filter(|c| &c.value == value)
                .filter_map(|c| c.report.as_ref())
                .collect();
            let med = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| {
                median(&reports.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            AblationRow {
                value: value.clone(),
                median_ccc: med(&|r| Some(r.ccc)),
                median_local_pair_accuracy: med(&|r| r.local_pair_accuracy),
                median_rank_spearman: med(&|r| r.mean_rank_spearman),
                failed: cells.iter().filter(|c| &c.value == value && c.report.is_none()).count(),
            }
        })
        .collect();
    Ok(AblationTable {
        axis,
        target: base.target.clone(),
        rows,
        cells,
    })
}
