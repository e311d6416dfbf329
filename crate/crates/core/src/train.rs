//! Head training with masked CTC over context windows, AdamW and the
//! tri-stage schedule; validation PER picks the checkpoint.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::Utterance;
use crate::ctc::{build_context_window, ctc_loss, greedy_decode, ContextWindow, CtcError, PhonemeSequence, PosteriorGrid, HOP_MS};
use crate::curator::Split;
use crate::evaluator::{align, per_value};
use crate::features::{extract_logmel, read_wav, FeatureError, FeatureMatrix, FeatureSource, SAMPLE_RATE};
use crate::head::{HeadShape, PredictionHead};
use crate::inventory::TargetInventory;
use crate::optim::{adamw_step, AdamWConfig, AdamWState, TriStage};
use crate::tensor::{write_atomic, Matrix, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training examples")]
    NoTrainData,
    #[error("no validation examples")]
    NoValidData,
    #[error("loss diverged at step {step} on {utt_id}: {loss}")]
    DivergedLoss { step: u64, utt_id: String, loss: f64 },
    #[error("{utt_id} belongs to the {split} split but was passed for training")]
    SplitLeak { utt_id: String, split: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{utt_id}: unknown target phone {symbol:?}")]
    UnknownPhone { utt_id: String, symbol: String },
    #[error("feature dim {found} does not match head input {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("ctc: {0}")]
    Ctc(#[from] CtcError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub max_steps: u64,
    pub warmup_frac: f64,
    pub constant_frac: f64,
    pub decay_frac: f64,
    pub batch_size: usize,
    pub accum_steps: usize,
    pub seed: u64,
    pub hidden: usize,
    pub dropout: f64,
    pub context_sec: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-5,
            weight_decay: 1e-2,
            max_steps: 2000,
            warmup_frac: 0.10,
            constant_frac: 0.40,
            decay_frac: 0.50,
            batch_size: 8,
            accum_steps: 8,
            seed: 0,
            hidden: 384,
            dropout: 0.1,
            context_sec: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        let fracs = [self.warmup_frac, self.constant_frac, self.decay_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("schedule fractions must be in [0, 1] and sum to 1");
        }
        if self.max_steps == 0 || self.batch_size == 0 || self.accum_steps == 0 || self.hidden == 0 {
            return bad("max_steps, batch_size, accum_steps and hidden must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("peak_lr must be positive and weight_decay nonnegative");
        }
        if !(self.context_sec >= 0.0 && self.context_sec.is_finite()) {
            return bad("context_sec must be nonnegative");
        }
        Ok(())
    }

    pub fn schedule(&self) -> TriStage {
        TriStage {
            peak_lr: self.peak_lr,
            max_steps: self.max_steps,
            warmup_frac: self.warmup_frac,
            constant_frac: self.constant_frac,
            decay_frac: self.decay_frac,
        }
    }
}

/// Features of one context window with the utterance frames marked.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub utt_id: String,
    pub child_id: String,
    pub split: Split,
    pub features: FeatureMatrix,
    pub mask: Range<usize>,
    pub labels: PhonemeSequence,
}

impl TrainExample {
    fn masked_input(&self) -> &[f64] {
        let d = self.features.dim;
        &self.features.data[self.mask.start * d..self.mask.end * d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub mean_train_loss: f64,
    pub valid_per: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_step: u64,
    pub best_valid_per: f64,
    pub final_step: u64,
    /// Example visits skipped because the mask had too few frames for the labels.
    pub skipped: usize,
    pub epochs: Vec<EpochLog>,
}

pub struct TrainOutcome {
    pub head: PredictionHead,
    pub report: CheckpointReport,
}

/// Label indices for an utterance's target symbols.
pub fn labels_for(u: &Utterance, inv: &TargetInventory) -> Result<PhonemeSequence, TrainError> {
    u.target_phones
        .iter()
        .map(|s| {
            inv.index_of(s).ok_or_else(|| TrainError::UnknownPhone {
                utt_id: u.utt_id.clone(),
                symbol: s.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(PhonemeSequence)
}

/// Logits of the masked frames, `mask.len() x output`.
fn masked_logits(head: &PredictionHead, ex: &TrainExample) -> Vec<f64> {
    head.forward::<ChaCha8Rng>(ex.masked_input(), ex.mask.len(), None).0
}

/// Posteriors over the utterance frames only.
pub fn posteriors(head: &PredictionHead, features: &FeatureMatrix, mask: Range<usize>) -> PosteriorGrid {
    let d = features.dim;
    let x = &features.data[mask.start * d..mask.end * d];
    let logits = head.forward::<ChaCha8Rng>(x, mask.len(), None).0;
    PosteriorGrid::from_logits(mask.len(), head.shape.output - 1, &logits)
}

/// Greedy decode of the utterance frames; an empty mask decodes to nothing.
pub fn decode(head: &PredictionHead, features: &FeatureMatrix, mask: Range<usize>) -> Vec<usize> {
    if mask.is_empty() {
        return Vec::new();
    }
    let grid = posteriors(head, features, mask);
    greedy_decode(&grid, None).map(|s| s.0).unwrap_or_default()
}

/// Micro-averaged greedy PER over `examples` with dropout off.
pub fn evaluate_per(head: &PredictionHead, examples: &[TrainExample]) -> f64 {
    let (mut errors, mut n) = (0usize, 0usize);
    for ex in examples {
        let hyp = decode(head, &ex.features, ex.mask.clone());
        let a = align(&ex.labels.0, &hyp);
        errors += a.errors();
        n += a.n;
    }
    per_value(errors, 0, 0, n)
}

/// Mean masked CTC loss of `examples` without dropout; infeasible ones are skipped.
pub fn batch_loss(head: &PredictionHead, examples: &[TrainExample]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let logits = masked_logits(head, ex);
        let grid = PosteriorGrid::from_logits(ex.mask.len(), head.shape.output - 1, &logits);
        if let Ok(out) = ctc_loss(&grid, &ex.labels, None) {
            total += out.loss;
            count += 1;
        }
    }
    total / count.max(1) as f64
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Trains a fresh head. `vocab` is the number of phones (the blank is added).
/// Every step averages gradients over `batch_size * accum_steps` examples;
/// validation runs at the end of each epoch and after the last step.
pub fn train(
    train_set: &[TrainExample],
    valid_set: &[TrainExample],
    vocab: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::NoTrainData);
    }
    if valid_set.is_empty() {
        return Err(TrainError::NoValidData);
    }
    if let Some(ex) = train_set.iter().find(|e| e.split != Split::Train) {
        return Err(TrainError::SplitLeak {
            utt_id: ex.utt_id.clone(),
            split: ex.split.as_str(),
        });
    }
    let dim = train_set[0].features.dim;
    if let Some(ex) = train_set.iter().chain(valid_set).find(|e| e.features.dim != dim) {
        return Err(TrainError::DimMismatch {
            expected: dim,
            found: ex.features.dim,
        });
    }
    let shape = HeadShape {
        input: dim,
        hidden: cfg.hidden,
        output: vocab + 1,
    };
    let mut head = PredictionHead::init(shape, cfg.dropout, &mut stream_rng(cfg.seed, 0));
    let mut dropout_rng = stream_rng(cfg.seed, 1);
    let mut shuffle_rng = stream_rng(cfg.seed, 2);
    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut state = AdamWState::new(shape.param_count());
    let sched = cfg.schedule();
    let per_step = cfg.batch_size * cfg.accum_steps;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;
    let mut epoch = 0usize;
    let mut epoch_loss = (0.0, 0usize);
    let mut skipped = 0usize;
    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, u64, Vec<f64>)> = None;
    let mut grad = vec![0.0; shape.param_count()];
    let mut step = 0u64;

    let mut validate = |head: &PredictionHead, epoch: usize, step: u64, loss: (f64, usize), logs: &mut Vec<EpochLog>| {
        let per = evaluate_per(head, valid_set);
        logs.push(EpochLog {
            epoch,
            step,
            lr: sched.lr_at(step),
            mean_train_loss: loss.0 / loss.1.max(1) as f64,
            valid_per: per,
        });
        if best.as_ref().is_none_or(|b| per < b.0) {
            best = Some((per, epoch, step, head.params.clone()));
        }
    };

    while step < cfg.max_steps {
        if cursor == order.len() {
            validate(&head, epoch, step, epoch_loss, &mut logs);
            epoch += 1;
            epoch_loss = (0.0, 0);
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let take = per_step.min(order.len() - cursor);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut used = 0usize;
        for &i in &order[cursor..cursor + take] {
            let ex = &train_set[i];
            let x = ex.masked_input();
            let frames = ex.mask.len();
            let (logits, cache) = head.forward(x, frames, Some(&mut dropout_rng));
            let grid = PosteriorGrid::from_logits(frames, vocab, &logits);
            let out = match ctc_loss(&grid, &ex.labels, None) {
                Ok(o) => o,
                Err(CtcError::InfeasibleLength { .. }) | Err(CtcError::EmptyTargetWithZeroFrames) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if !out.loss.is_finite() {
                return Err(TrainError::DivergedLoss {
                    step,
                    utt_id: ex.utt_id.clone(),
                    loss: out.loss,
                });
            }
            epoch_loss.0 += out.loss;
            epoch_loss.1 += 1;
            head.backward(x, &cache, &out.grad, &mut grad);
            used += 1;
        }
        cursor += take;
        if used > 0 {
            let scale = 1.0 / used as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
        }
        step += 1;
        adamw_step(&mut head.params, &grad, &mut state, sched.lr_at(step), &adam)
            .expect("optimizer state sized from the head");
        if let Some(bad) = head.params.iter().find(|p| !p.is_finite()) {
            return Err(TrainError::DivergedLoss {
                step,
                utt_id: String::new(),
                loss: *bad,
            });
        }
    }
    if logs.last().is_none_or(|l| l.step != step) {
        validate(&head, epoch, step, epoch_loss, &mut logs);
    }
    let (best_per, best_epoch, best_step, params) = best.expect("validated at least once");
    head.params = params;
    Ok(TrainOutcome {
        head,
        report: CheckpointReport {
            seed: cfg.seed,
            best_epoch,
            best_step,
            best_valid_per: best_per,
            final_step: step,
            skipped,
            epochs: logs,
        },
    })
}

/// Everything needed to reload and use a trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub shape: HeadShape,
    pub dropout: f64,
    pub inventory_version: String,
    pub feature_source: FeatureSource,
    pub context_sec: f64,
    pub config: TrainConfig,
    pub report: CheckpointReport,
}

pub const CHECKPOINT_PARAMS: &str = "head.bin";
pub const CHECKPOINT_META: &str = "meta.json";

/// Writes `head.bin` (one row of parameters) and `meta.json` into `dir`.
pub fn save_checkpoint(dir: &Path, head: &PredictionHead, meta: &CheckpointMeta) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    let m = Matrix::new(1, head.params.len(), head.params.iter().map(|v| *v as f32).collect());
    m.write(&dir.join(CHECKPOINT_PARAMS))?;
    let json = serde_json::to_vec_pretty(meta)?;
    write_atomic(&dir.join(CHECKPOINT_META), &json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(PredictionHead, CheckpointMeta), TrainError> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(dir.join(CHECKPOINT_META))?)?;
    let m = Matrix::read(&dir.join(CHECKPOINT_PARAMS))?;
    if m.data.len() != meta.shape.param_count() {
        return Err(TrainError::DimMismatch {
            expected: meta.shape.param_count(),
            found: m.data.len(),
        });
    }
    let params = m.data.iter().map(|v| *v as f64).collect();
    Ok((PredictionHead::from_params(meta.shape, params, meta.dropout), meta))
}

/// Where per-file inputs come from: precomputed frame features
/// (`{dir}/{corpus}/{file}.bin`) or 16 kHz mono audio (`{dir}/{corpus}/{file}.wav`).
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureStore {
    Features(PathBuf),
    Audio(PathBuf),
}

/// A loaded file: frame features or raw samples.
#[derive(Debug, Clone)]
pub enum FileData {
    Frames(FeatureMatrix),
    Samples(Vec<f32>),
}

impl FileData {
    pub fn duration_ms(&self) -> u64 {
        match self {
            FileData::Frames(m) => m.frames as u64 * HOP_MS,
            FileData::Samples(s) => s.len() as u64 * 1000 / SAMPLE_RATE as u64,
        }
    }

    pub fn source(&self) -> FeatureSource {
        match self {
            FileData::Frames(m) => m.source,
            FileData::Samples(_) => FeatureSource::Logmel,
        }
    }
}

impl FeatureStore {
    pub fn path_for(&self, corpus_id: &str, file_id: &str) -> PathBuf {
        match self {
            FeatureStore::Features(d) => d.join(corpus_id).join(format!("{file_id}.bin")),
            FeatureStore::Audio(d) => d.join(corpus_id).join(format!("{file_id}.wav")),
        }
    }

    pub fn load(&self, corpus_id: &str, file_id: &str) -> Result<FileData, TrainError> {
        let path = self.path_for(corpus_id, file_id);
        match self {
            FeatureStore::Features(_) => Ok(FileData::Frames(FeatureMatrix::from_matrix(
                &Matrix::read(&path)?,
                FeatureSource::External,
            ))),
            FeatureStore::Audio(_) => {
                let (samples, sr) = read_wav(&path)?;
                if sr != SAMPLE_RATE {
                    return Err(FeatureError::BadSampleRate(sr).into());
                }
                Ok(FileData::Samples(samples))
            }
        }
    }
}

/// Features of a context window. Audio windows are cut, then turned into
/// normalized log-mel, so the context shapes the normalization statistics.
pub fn window_features(data: &FileData, window: &ContextWindow) -> Result<FeatureMatrix, TrainError> {
    match data {
        FileData::Frames(m) => {
            let start = window.first_file_frame();
            Ok(m.slice(start, start + window.frame_count()))
        }
        FileData::Samples(s) => {
            let per_ms = SAMPLE_RATE as u64 / 1000;
            let lo = (window.window_start_ms * per_ms) as usize;
            let hi = ((window.window_end_ms * per_ms) as usize).min(s.len());
            Ok(extract_logmel(&s[lo.min(hi)..hi], SAMPLE_RATE)?)
        }
    }
}

/// Builds the context-window example of one utterance.
pub fn build_example(
    u: &Utterance,
    split: Split,
    data: &FileData,
    context_sec: f64,
    inv: &TargetInventory,
) -> Result<TrainExample, TrainError> {
    let labels = labels_for(u, inv)?;
    let window = build_context_window(u.onset_ms, u.offset_ms, context_sec, data.duration_ms())?;
    let features = window_features(data, &window)?;
    let end = window.target_frames.end.min(features.frames);
    let start = window.target_frames.start.min(end);
    Ok(TrainExample {
        utt_id: u.utt_id.clone(),
        child_id: u.child_id.clone(),
        split,
        features,
        mask: start..end,
        labels,
    })
}

/// Built examples plus `(utt_id, reason)` for utterances that were skipped.
pub type Loaded = (Vec<TrainExample>, Vec<(String, String)>);

/// Examples for all utterances of one file, in manifest order. Utterances
/// that cannot be placed in the file are returned as `(utt_id, reason)`.
pub fn examples_for_file(
    utts: &[&Utterance],
    splits: &BTreeMap<String, Split>,
    store: &FeatureStore,
    context_sec: f64,
    inv: &TargetInventory,
) -> Result<Loaded, TrainError> {
    let Some(first) = utts.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let data = store.load(&first.corpus_id, &first.file_id)?;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for u in utts {
        let Some(&split) = splits.get(&u.child_id) else {
            skipped.push((u.utt_id.clone(), "child has no split".to_string()));
            continue;
        };
        match build_example(u, split, &data, context_sec, inv) {
            Ok(ex) => out.push(ex),
            Err(TrainError::Ctc(e)) => skipped.push((u.utt_id.clone(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Groups manifest entries by `(corpus, file)` in first-seen order.
pub fn group_by_file(manifest: &[Utterance]) -> Vec<Vec<&Utterance>> {
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    let mut groups: Vec<Vec<&Utterance>> = Vec::new();
    for u in manifest {
        let key = (u.corpus_id.as_str(), u.file_id.as_str());
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(u);
    }
    groups
}

/// Sequential loader over a whole manifest.
pub fn load_examples(
    manifest: &[Utterance],
    splits: &BTreeMap<String, Split>,
    store: &FeatureStore,
    context_sec: f64,
    inv: &TargetInventory,
) -> Result<Loaded, TrainError> {
    let mut all = Vec::new();
    let mut skipped = Vec::new();
    for group in group_by_file(manifest) {
        let (ex, sk) = examples_for_file(&group, splits, store, context_sec, inv)?;
        all.extend(ex);
        skipped.extend(sk);
    }
    Ok((all, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{toy_corpus, ToyConfig};

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            peak_lr: 3e-3,
            max_steps: 60,
            batch_size: 8,
            accum_steps: 1,
            hidden: 32,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            decay_frac: 0.4,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn rejects_leaked_split() {
        let toy = toy_corpus(&ToyConfig::default(), 0);
        let mut tr = toy.train.clone();
        tr[0].split = Split::Test;
        let err = train(&tr, &toy.valid, toy.vocab, &small_cfg(0)).err().unwrap();
        assert!(matches!(err, TrainError::SplitLeak { .. }));
        assert!(matches!(
            train(&[], &toy.valid, toy.vocab, &small_cfg(0)),
            Err(TrainError::NoTrainData)
        ));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let toy = toy_corpus(&ToyConfig::default(), 3);
        let a = train(&toy.train, &toy.valid, toy.vocab, &small_cfg(5)).unwrap();
        let b = train(&toy.train, &toy.valid, toy.vocab, &small_cfg(5)).unwrap();
        assert_eq!(a.head.params, b.head.params);
        assert_eq!(a.report, b.report);
        let c = train(&toy.train, &toy.valid, toy.vocab, &small_cfg(6)).unwrap();
        assert_ne!(a.head.params, c.head.params);
    }

    #[test]
    fn validation_is_deterministic() {
        let toy = toy_corpus(&ToyConfig::default(), 1);
        let out = train(&toy.train, &toy.valid, toy.vocab, &small_cfg(1)).unwrap();
        assert_eq!(evaluate_per(&out.head, &toy.valid), evaluate_per(&out.head, &toy.valid));
    }

    #[test]
    fn checkpoint_round_trip() {
        let toy = toy_corpus(&ToyConfig::default(), 2);
        let out = train(&toy.train, &toy.valid, toy.vocab, &small_cfg(2)).unwrap();
        let dir = std::env::temp_dir().join(format!("ckpt-rt-{}", std::process::id()));
        let meta = CheckpointMeta {
            shape: out.head.shape,
            dropout: out.head.dropout,
            inventory_version: "toy".into(),
            feature_source: FeatureSource::External,
            context_sec: 0.0,
            config: small_cfg(2),
            report: out.report.clone(),
        };
        save_checkpoint(&dir, &out.head, &meta).unwrap();
        let (head, meta2) = load_checkpoint(&dir).unwrap();
        assert_eq!(meta, meta2);
        for (a, b) in head.params.iter().zip(&out.head.params) {
            assert_eq!(*a, *b as f32 as f64);
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn frame_store_windows() {
        let m = FeatureMatrix::new(100, 1, (0..100).map(|i| i as f64).collect(), FeatureSource::External);
        let data = FileData::Frames(m);
        assert_eq!(data.duration_ms(), 2000);
        let u = Utterance {
            utt_id: "u".into(),
            child_id: "c".into(),
            age_months: None,
            language: crate::chat::Language::En,
            onset_ms: 1000,
            offset_ms: 1210,
            surface_pho: "pa".into(),
            target_phones: vec!["p".into(), "a".into()],
            corpus_id: "k".into(),
            file_id: "f".into(),
        };
        let inv = TargetInventory::default_inventory();
        let ex = build_example(&u, Split::Train, &data, 1.0, inv).unwrap();
        // window 500..1710 ms -> frames 25..(25+61)
        assert_eq!(ex.features.frames, 61);
        assert_eq!(ex.features.data[0], 25.0);
        assert_eq!(ex.mask, 25..36);
        assert_eq!(ex.features.data[ex.mask.start], 50.0);
        let ex0 = build_example(&u, Split::Train, &data, 0.0, inv).unwrap();
        assert_eq!(ex0.mask, 0..11);
        assert_eq!(ex0.features.data[0], 50.0);
    }
}
