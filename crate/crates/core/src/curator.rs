//! Corpus cleaning rules, the two-pass listening QC plan, corpus statistics
//! and child-level (speaker-independent) train/valid/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{Language, Utterance};
use crate::inventory::{FeatureTable, TargetInventory};

#[derive(Debug, Error, PartialEq)]
pub enum CurationError {
    #[error("need at least 3 children to split, found {0}")]
    TooFewChildren(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty manifest")]
    EmptyManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub min_dur_ms: u64,
    pub max_dur_ms: u64,
    pub max_age_months: f64,
    pub banned_tokens: Vec<String>,
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            min_dur_ms: 50,
            max_dur_ms: 10_000,
            max_age_months: 96.0,
            banned_tokens: ["X", "C", "V", "G", "S", "xxx", "*"].map(String::from).to_vec(),
            split_fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if !(self.min_dur_ms > 0 && self.min_dur_ms < self.max_dur_ms) {
            return Err(CurationError::InvalidConfig("need 0 < min_dur_ms < max_dur_ms".into()));
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|f| *f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CurationError::InvalidConfig(
                "split fractions must be positive and sum to 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, CurationError> {
        let cfg: CurationConfig =
            toml::from_str(text).map_err(|e| CurationError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Duration,
    BannedToken,
    Age,
    /// The phonetic tier has symbols outside the feature table.
    Untokenizable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub reason: RejectReason,
    #[serde(flatten)]
    pub utterance: Utterance,
}

fn has_banned_token(surface: &str, banned: &[String]) -> bool {
    if banned.iter().any(|b| b == "*") && surface.contains('*') {
        return true;
    }
    surface
        .split_whitespace()
        .any(|tok| banned.iter().any(|b| b != "*" && b == tok))
}

/// First failing rule in the order duration, banned token, age.
pub fn rejection_reason(u: &Utterance, cfg: &CurationConfig) -> Option<RejectReason> {
    let dur = u.duration_ms();
    if dur < cfg.min_dur_ms || dur > cfg.max_dur_ms {
        return Some(RejectReason::Duration);
    }
    if has_banned_token(&u.surface_pho, &cfg.banned_tokens) {
        return Some(RejectReason::BannedToken);
    }
    if u.age_months.is_some_and(|a| a > cfg.max_age_months) {
        return Some(RejectReason::Age);
    }
    None
}

pub fn filter_utterances(utts: Vec<Utterance>, cfg: &CurationConfig) -> (Vec<Utterance>, Vec<Rejected>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for u in utts {
        match rejection_reason(&u, cfg) {
            None => kept.push(u),
            Some(reason) => rejected.push(Rejected { reason, utterance: u }),
        }
    }
    (kept, rejected)
}

/// Applies the rules, then fills `target_phones` of the kept utterances with
/// their inventory mapping. Tiers that do not tokenize are rejected last.
pub fn curate(
    utts: Vec<Utterance>,
    cfg: &CurationConfig,
    inv: &TargetInventory,
    table: &FeatureTable,
) -> (Vec<Utterance>, Vec<Rejected>) {
    let (kept, mut rejected) = filter_utterances(utts, cfg);
    let mut out = Vec::with_capacity(kept.len());
    for mut u in kept {
        match inv.normalize_str(&u.surface_pho, table) {
            Ok(labels) => {
                u.target_phones = inv.symbols(&labels);
                out.push(u);
            }
            Err(_) => rejected.push(Rejected {
                reason: RejectReason::Untokenizable,
                utterance: u,
            }),
        }
    }
    (out, rejected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub children: BTreeMap<String, Split>,
    /// Realized utterance fractions for train, valid, test.
    pub realized: [f64; 3],
    pub utterance_counts: [usize; 3],
}

impl SplitAssignment {
    pub fn split_of(&self, child_id: &str) -> Option<Split> {
        self.children.get(child_id).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("child_id\tsplit\n");
        for (c, s) in &self.children {
            out.push_str(&format!("{c}\t{}\n", s.as_str()));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<BTreeMap<String, Split>, CurationError> {
        let mut out = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (child, split) = line
                .split_once('\t')
                .and_then(|(c, s)| Some((c, Split::parse(s.trim())?)))
                .ok_or_else(|| CurationError::InvalidConfig(format!("splits line {}: {line:?}", i + 1)))?;
            out.insert(child.to_string(), split);
        }
        Ok(out)
    }
}

/// Greedy child-level split targeting utterance fractions. Children are taken
/// in descending utterance count (equal counts in seeded random order) and
/// each goes to the split with the largest deficit against its target.
pub fn make_split(utts: &[Utterance], cfg: &CurationConfig) -> Result<SplitAssignment, CurationError> {
    cfg.validate()?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for u in utts {
        *counts.entry(u.child_id.as_str()).or_default() += 1;
    }
    if counts.len() < 3 {
        return Err(CurationError::TooFewChildren(counts.len()));
    }
    let mut order: Vec<(&str, usize)> = counts.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut start = 0;
    while start < order.len() {
        let end = start + order[start..].iter().take_while(|c| c.1 == order[start].1).count();
        order[start..end].shuffle(&mut rng);
        start = end;
    }

    let total = utts.len() as f64;
    let mut assigned = [0usize; 3];
    let mut children = BTreeMap::new();
    for (child, n) in order {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for k in 0..3 {
            let deficit = cfg.split_fractions[k] * total - assigned[k] as f64;
            if deficit > best_deficit {
                best = k;
                best_deficit = deficit;
            }
        }
        assigned[best] += n;
        children.insert(child.to_string(), Split::ALL[best]);
    }
    Ok(SplitAssignment {
        children,
        realized: assigned.map(|a| a as f64 / total),
        utterance_counts: assigned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSample {
    pub corpus_id: String,
    pub file_id: String,
    pub utt_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcVerdict {
    Kept,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct QcPlan {
    pub pass1: Vec<QcSample>,
    pub pass2: Vec<QcSample>,
    pub verdicts: BTreeMap<String, QcVerdict>,
}

pub const QC_FILE_FRACTION: f64 = 0.10;
pub const QC_UTTS_PER_FILE: usize = 10;
pub const QC_MIN_MATCHED: usize = 8;

fn files_by_corpus(manifest: &[Utterance]) -> BTreeMap<&str, BTreeMap<&str, Vec<&str>>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for u in manifest {
        out.entry(u.corpus_id.as_str())
            .or_default()
            .entry(u.file_id.as_str())
            .or_default()
            .push(u.utt_id.as_str());
    }
    for files in out.values_mut() {
        for utts in files.values_mut() {
            utts.sort_unstable();
        }
    }
    out
}

fn sample_utts(utts: &[&str], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut picked: Vec<String> = utts
        .choose_multiple(rng, QC_UTTS_PER_FILE.min(utts.len()))
        .map(|s| s.to_string())
        .collect();
    picked.sort();
    picked
}

pub fn file_key(corpus_id: &str, file_id: &str) -> String {
    format!("{corpus_id}/{file_id}")
}

/// First listening pass: ceil(10%) of files per corpus, up to 10 utterances each.
pub fn make_qc_plan(manifest: &[Utterance], seed: u64) -> Result<QcPlan, CurationError> {
    if manifest.is_empty() {
        return Err(CurationError::EmptyManifest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pass1 = Vec::new();
    for (corpus, files) in files_by_corpus(manifest) {
        let names: Vec<&str> = files.keys().copied().collect();
        let n = (QC_FILE_FRACTION * names.len() as f64).ceil() as usize;
        let mut chosen: Vec<&str> = names.choose_multiple(&mut rng, n).copied().collect();
        chosen.sort_unstable();
        for file in chosen {
            pass1.push(QcSample {
                corpus_id: corpus.to_string(),
                file_id: file.to_string(),
                utt_ids: sample_utts(&files[file], &mut rng),
            });
        }
    }
    Ok(QcPlan {
        pass1,
        pass2: Vec::new(),
        verdicts: BTreeMap::new(),
    })
}

/// Second pass: every file of each flagged corpus gets its own sample.
pub fn add_second_pass(plan: &mut QcPlan, manifest: &[Utterance], flagged: &BTreeSet<String>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    plan.pass2.clear();
    for (corpus, files) in files_by_corpus(manifest) {
        if !flagged.contains(corpus) {
            continue;
        }
        for (file, utts) in files {
            plan.pass2.push(QcSample {
                corpus_id: corpus.to_string(),
                file_id: file.to_string(),
                utt_ids: sample_utts(&utts, &mut rng),
            });
        }
    }
}

/// Listening outcome for one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileVerdictInput {
    pub corpus_id: String,
    pub file_id: String,
    pub matched: usize,
    pub listened: usize,
}

/// A file is excluded when fewer than 8 of 10 listened utterances match their
/// transcript; smaller samples are held to the same 80% proportion.
pub fn verdict_for(matched: usize, listened: usize) -> QcVerdict {
    if matched * QC_UTTS_PER_FILE >= QC_MIN_MATCHED * listened.max(1) {
        QcVerdict::Kept
    } else {
        QcVerdict::Excluded
    }
}

pub fn apply_verdicts(plan: &mut QcPlan, verdicts: &[FileVerdictInput]) {
    for v in verdicts {
        plan.verdicts
            .insert(file_key(&v.corpus_id, &v.file_id), verdict_for(v.matched, v.listened));
    }
}

pub fn parse_verdicts_tsv(text: &str) -> Result<Vec<FileVerdictInput>, CurationError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if line.trim().is_empty() || (i == 0 && cols.first() == Some(&"corpus_id")) {
            continue;
        }
        let bad = || CurationError::InvalidConfig(format!("verdicts line {}: {line:?}", i + 1));
        if cols.len() != 4 {
            return Err(bad());
        }
        out.push(FileVerdictInput {
            corpus_id: cols[0].to_string(),
            file_id: cols[1].to_string(),
            matched: cols[2].parse().map_err(|_| bad())?,
            listened: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Drops utterances from excluded files and excluded corpora.
pub fn apply_exclusions(
    manifest: Vec<Utterance>,
    plan: &QcPlan,
    excluded_corpora: &BTreeSet<String>,
) -> (Vec<Utterance>, Vec<Utterance>) {
    manifest.into_iter().partition(|u| {
        !excluded_corpora.contains(&u.corpus_id)
            && plan.verdicts.get(&file_key(&u.corpus_id, &u.file_id)) != Some(&QcVerdict::Excluded)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub corpus_id: String,
    pub n_utterances: usize,
    pub n_children: usize,
    pub age_mean: Option<f64>,
    pub age_min: Option<f64>,
    pub age_max: Option<f64>,
    pub unknown_age: usize,
    pub hours: f64,
    pub languages: Vec<Language>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StatsReport {
    pub corpora: Vec<CorpusStats>,
    /// Utterance counts per whole month of age.
    pub age_histogram: BTreeMap<u32, usize>,
    /// Share of transcribed hours per language.
    pub language_shares: BTreeMap<Language, f64>,
    pub total_hours: f64,
}

impl StatsReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "corpus_id\tn_utterances\tn_children\tage_mean\tage_min\tage_max\tunknown_age\thours\tlanguages\n",
        );
        let f = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"));
        for c in &self.corpora {
            let langs: Vec<&str> = c.languages.iter().map(|l| l.as_str()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\n",
                c.corpus_id,
                c.n_utterances,
                c.n_children,
                f(c.age_mean),
                f(c.age_min),
                f(c.age_max),
                c.unknown_age,
                c.hours,
                langs.join(",")
            ));
        }
        out
    }
}

pub fn corpus_stats(manifest: &[Utterance]) -> StatsReport {
    let mut by_corpus: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in manifest {
        by_corpus.entry(u.corpus_id.as_str()).or_default().push(u);
    }
    let mut report = StatsReport::default();
    let mut lang_ms: BTreeMap<Language, u64> = BTreeMap::new();
    let mut total_ms = 0u64;
    for (corpus, utts) in by_corpus {
        let ages: Vec<f64> = utts.iter().filter_map(|u| u.age_months).collect();
        let children: BTreeSet<&str> = utts.iter().map(|u| u.child_id.as_str()).collect();
        let langs: BTreeSet<Language> = utts.iter().map(|u| u.language).collect();
        let ms: u64 = utts.iter().map(|u| u.duration_ms()).sum();
        for u in &utts {
            *lang_ms.entry(u.language).or_default() += u.duration_ms();
            if let Some(a) = u.age_months {
                *report.age_histogram.entry(a.floor() as u32).or_default() += 1;
            }
        }
        total_ms += ms;
        report.corpora.push(CorpusStats {
            corpus_id: corpus.to_string(),
            n_utterances: utts.len(),
            n_children: children.len(),
            age_mean: (!ages.is_empty()).then(|| ages.iter().sum::<f64>() / ages.len() as f64),
            age_min: ages.iter().copied().reduce(f64::min),
            age_max: ages.iter().copied().reduce(f64::max),
            unknown_age: utts.len() - ages.len(),
            hours: ms as f64 / 3_600_000.0,
            languages: langs.into_iter().collect(),
        });
    }
    report.total_hours = total_ms as f64 / 3_600_000.0;
    if total_ms > 0 {
        report.language_shares = lang_ms
            .into_iter()
            .map(|(l, ms)| (l, ms as f64 / total_ms as f64))
            .collect();
    }
    report
}

/// Child ids per split, for leak checks.
pub fn children_by_split(assign: &SplitAssignment) -> HashMap<Split, BTreeSet<String>> {
    let mut out: HashMap<Split, BTreeSet<String>> = HashMap::new();
    for (c, s) in &assign.children {
        out.entry(*s).or_default().insert(c.clone());
    }
    out
}
