//! Synthetic data with known answers: a three-phone frame-feature corpus,
//! an age-trend generator for the canonical measure, and a small CHAT + wav
//! corpus for end-to-end runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ctc::PhonemeSequence;
use crate::curator::Split;
use crate::features::{write_wav, FeatureMatrix, FeatureSource, SAMPLE_RATE};
use crate::inventory::TargetInventory;
use crate::train::TrainExample;

pub const TOY_PHONES: [&str; 3] = ["p", "a", "m"];
/// Toy feature width: one slot per phone plus one for silence.
pub const TOY_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub n_utts: usize,
    pub n_children: usize,
    pub noise_sd: f64,
    pub min_phones: usize,
    pub max_phones: usize,
    pub frames_per_phone: (usize, usize),
    pub gap_frames: (usize, usize),
    /// Distractor frames added on each side of the utterance.
    pub context_frames: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_utts: 200,
            n_children: 20,
            noise_sd: 0.1,
            min_phones: 2,
            max_phones: 6,
            frames_per_phone: (2, 4),
            gap_frames: (0, 2),
            context_frames: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub train: Vec<TrainExample>,
    pub valid: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    /// Number of phone labels (the head adds a blank).
    pub vocab: usize,
    /// Inventory labels of the three toy phones.
    pub labels: [usize; 3],
}

fn toy_frame<R: Rng>(slot: usize, noise: &Normal<f64>, rng: &mut R, out: &mut Vec<f64>) {
    for k in 0..TOY_DIM {
        out.push(f64::from(u8::from(k == slot)) + noise.sample(rng));
    }
}

/// Frames for `seq` (toy slots 0..3): leading silence, each phone held for a
/// few frames, optional silent gaps, trailing silence. Repeated phones always
/// get at least one gap frame so they stay separable.
fn toy_frames<R: Rng>(seq: &[usize], cfg: &ToyConfig, noise: &Normal<f64>, rng: &mut R, out: &mut Vec<f64>) {
    let silence = TOY_DIM - 1;
    for _ in 0..rng.gen_range(1..=2) {
        toy_frame(silence, noise, rng, out);
    }
    for (i, &ph) in seq.iter().enumerate() {
        if i > 0 {
            let min_gap = usize::from(seq[i - 1] == ph).max(cfg.gap_frames.0);
            for _ in 0..rng.gen_range(min_gap..=cfg.gap_frames.1.max(min_gap)) {
                toy_frame(silence, noise, rng, out);
            }
        }
        for _ in 0..rng.gen_range(cfg.frames_per_phone.0..=cfg.frames_per_phone.1) {
            toy_frame(ph, noise, rng, out);
        }
    }
    for _ in 0..rng.gen_range(1..=2) {
        toy_frame(silence, noise, rng, out);
    }
}

/// The toy corpus. Children split 80/10/10 by index; context frames, when
/// requested, are random phones and sit outside the mask.
pub fn toy_corpus(cfg: &ToyConfig, seed: u64) -> ToyCorpus {
    let inv = TargetInventory::default_inventory();
    let labels = TOY_PHONES.map(|s| inv.index_of(s).expect("toy phone in inventory"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sd).expect("finite noise");
    let n_train = (cfg.n_children as f64 * 0.8).round() as usize;
    let n_valid = ((cfg.n_children as f64 * 0.1).round() as usize).max(1);
    let mut corpus = ToyCorpus {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        vocab: inv.len(),
        labels,
    };
    for u in 0..cfg.n_utts {
        let child = u % cfg.n_children;
        let split = if child < n_train {
            Split::Train
        } else if child < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let len = rng.gen_range(cfg.min_phones..=cfg.max_phones);
        let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
        let mut data = Vec::new();
        for _ in 0..cfg.context_frames {
            toy_frame(rng.gen_range(0..3), &noise, &mut rng, &mut data);
        }
        let start = data.len() / TOY_DIM;
        toy_frames(&seq, cfg, &noise, &mut rng, &mut data);
        let end = data.len() / TOY_DIM;
        for _ in 0..cfg.context_frames {
            toy_frame(rng.gen_range(0..3), &noise, &mut rng, &mut data);
        }
        let frames = data.len() / TOY_DIM;
        let ex = TrainExample {
            utt_id: format!("toy/{u:04}"),
            child_id: format!("toy/child{child:02}"),
            split,
            features: FeatureMatrix::new(frames, TOY_DIM, data, FeatureSource::External),
            mask: start..end,
            labels: PhonemeSequence(seq.iter().map(|&s| labels[s]).collect()),
        };
        match split {
            Split::Train => corpus.train.push(ex),
            Split::Valid => corpus.valid.push(ex),
            Split::Test => corpus.test.push(ex),
        }
    }
    corpus
}

/// Children whose chance of a canonical utterance rises linearly with age.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeTrendConfig {
    pub n_children: usize,
    pub first_month: u32,
    pub last_month: u32,
    pub utts_per_month: usize,
    pub p_first: f64,
    pub p_last: f64,
    /// Half-width of a per-child uniform offset on the probability.
    pub child_spread: f64,
}

impl Default for AgeTrendConfig {
    fn default() -> Self {
        AgeTrendConfig {
            n_children: 30,
            first_month: 12,
            last_month: 36,
            utts_per_month: 10,
            p_first: 0.2,
            p_last: 0.8,
            child_spread: 0.05,
        }
    }
}

impl AgeTrendConfig {
    /// Population canonical probability at `age` months.
    pub fn truth(&self, age: f64) -> f64 {
        let span = (self.last_month - self.first_month) as f64;
        self.p_first + (self.p_last - self.p_first) * (age - self.first_month as f64) / span
    }
}

/// One generated decode: child, age in months, inventory labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AgedDecode {
    pub child_id: String,
    pub age_months: f64,
    pub labels: Vec<usize>,
}

pub fn age_trend(cfg: &AgeTrendConfig, seed: u64) -> Vec<AgedDecode> {
    let inv = TargetInventory::default_inventory();
    let ix = |s: &str| inv.index_of(s).expect("phone in inventory");
    let canonical = [vec![ix("b"), ix("a")], vec![ix("a"), ix("m")], vec![ix("m"), ix("a"), ix("m"), ix("a")]];
    let other = [vec![ix("a")], vec![ix("a"), ix("ə")], vec![ix("m")], vec![]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..cfg.n_children {
        let offset = rng.gen_range(-cfg.child_spread..=cfg.child_spread);
        for month in cfg.first_month..=cfg.last_month {
            let p = (cfg.truth(month as f64) + offset).clamp(0.0, 1.0);
            for _ in 0..cfg.utts_per_month {
                let age = month as f64 + rng.gen_range(0.0..1.0);
                let labels = if rng.gen_bool(p) {
                    canonical.choose(&mut rng).unwrap().clone()
                } else {
                    other.choose(&mut rng).unwrap().clone()
                };
                out.push(AgedDecode {
                    child_id: format!("trend/child{c:02}"),
                    age_months: age,
                    labels,
                });
            }
        }
    }
    out
}

/// Layout of the synthetic CHAT + audio corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub children_per_corpus: usize,
    pub files_per_child: usize,
    pub utts_per_file: usize,
    pub phone_ms: u64,
    pub gap_ms: u64,
    pub pause_ms: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            children_per_corpus: 10,
            files_per_child: 2,
            utts_per_file: 8,
            phone_ms: 120,
            gap_ms: 60,
            pause_ms: 400,
        }
    }
}

/// Tone frequency per toy phone.
pub const TONE_HZ: [f64; 3] = [600.0, 1500.0, 3200.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub chat_dir: PathBuf,
    pub audio_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub utterances: usize,
}

fn tone<R: Rng>(hz: f64, ms: u64, rng: &mut R, out: &mut Vec<f32>) {
    let n = (ms * SAMPLE_RATE as u64 / 1000) as usize;
    let base = out.len();
    for i in 0..n {
        let t = (base + i) as f64 / SAMPLE_RATE as f64;
        let fade = ((i.min(n - 1 - i)) as f64 / 80.0).min(1.0);
        let v = 0.4 * fade * (2.0 * std::f64::consts::PI * hz * t).sin() + rng.gen_range(-0.002..0.002);
        out.push(v as f32);
    }
}

fn hiss<R: Rng>(ms: u64, rng: &mut R, out: &mut Vec<f32>) {
    let n = (ms * SAMPLE_RATE as u64 / 1000) as usize;
    out.extend((0..n).map(|_| rng.gen_range(-0.002f32..0.002)));
}

/// Writes `{root}/chat/{corpus}/{file}.cha` and `{root}/audio/{corpus}/{file}.wav`
/// for two corpora (English and French). Each utterance is two to four toy
/// phones rendered as tones; the `%pho` tier carries their symbols.
pub fn write_synth_corpus(root: &Path, cfg: &SynthCorpusConfig, seed: u64) -> io::Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chat_dir = root.join("chat");
    let audio_dir = root.join("audio");
    let mut files = Vec::new();
    let mut utterances = 0;
    for (corpus, lang) in [("SynthEng", "eng"), ("SynthFra", "fra")] {
        fs::create_dir_all(chat_dir.join(corpus))?;
        fs::create_dir_all(audio_dir.join(corpus))?;
        for child in 0..cfg.children_per_corpus {
            let name = format!("Kid{child:02}");
            for f in 0..cfg.files_per_child {
                let file_id = format!("{name}_{f}");
                let months = 14 + child as u32 * 2 + f as u32 * 3;
                let mut text = format!(
                    "@UTF8\n@Begin\n@Languages:\t{lang}\n@Participants:\tCHI {name} Target_Child, MOT Mother Mother\n\
                     @ID:\t{lang}|{corpus}|CHI|{};{:02}.00|female|||Target_Child|||\n\
                     @ID:\t{lang}|{corpus}|MOT|||||Mother|||\n@Media:\t{file_id}, audio\n",
                    months / 12,
                    months % 12
                );
                let mut audio = Vec::new();
                hiss(cfg.pause_ms, &mut rng, &mut audio);
                for _ in 0..cfg.utts_per_file {
                    let len = rng.gen_range(2..=4);
                    let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
                    let onset = audio.len() as u64 * 1000 / SAMPLE_RATE as u64;
                    for (i, &ph) in seq.iter().enumerate() {
                        if i > 0 {
                            hiss(cfg.gap_ms, &mut rng, &mut audio);
                        }
                        tone(TONE_HZ[ph], cfg.phone_ms, &mut rng, &mut audio);
                    }
                    let offset = audio.len() as u64 * 1000 / SAMPLE_RATE as u64;
                    let pho: String = seq.iter().map(|&p| TOY_PHONES[p]).collect();
                    text.push_str(&format!("*CHI:\t{pho} . \u{2022}{onset}_{offset}\u{2022}\n%pho:\t{pho}\n"));
                    utterances += 1;
                    hiss(cfg.pause_ms, &mut rng, &mut audio);
                }
                text.push_str("*MOT:\tgood job . \n@End\n");
                let cha = chat_dir.join(corpus).join(format!("{file_id}.cha"));
                fs::write(&cha, text)?;
                write_wav(&audio_dir.join(corpus).join(format!("{file_id}.wav")), &audio)
                    .map_err(|e| io::Error::other(e.to_string()))?;
                files.push(cha);
            }
        }
    }
    Ok(SynthCorpus {
        chat_dir,
        audio_dir,
        files,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes() {
        let toy = toy_corpus(&ToyConfig::default(), 0);
        assert_eq!(toy.train.len() + toy.valid.len() + toy.test.len(), 200);
        assert_eq!((toy.train.len(), toy.valid.len(), toy.test.len()), (160, 20, 20));
        for ex in &toy.train {
            assert!(ex.mask.len() >= ex.labels.min_frames());
            assert_eq!(ex.features.dim, TOY_DIM);
        }
    }

    #[test]
    fn distractors_sit_outside_mask() {
        let cfg = ToyConfig {
            context_frames: 7,
            ..Default::default()
        };
        let toy = toy_corpus(&cfg, 1);
        for ex in &toy.train {
            assert_eq!(ex.mask.start, 7);
            assert_eq!(ex.features.frames - ex.mask.end, 7);
        }
    }

    #[test]
    fn truth_is_linear() {
        let c = AgeTrendConfig::default();
        assert_eq!(c.truth(12.0), 0.2);
        assert!((c.truth(36.0) - 0.8).abs() < 1e-12);
        assert!((c.truth(24.0) - 0.5).abs() < 1e-12);
        assert_eq!(age_trend(&c, 3).len(), 30 * 25 * 10);
    }
}
