//! Library-level pass over the synthetic corpus: CHAT files on disk through
//! curation, splitting and example building, then scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use childphone::chat::{parse_chat, Utterance};
use childphone::curator::{curate, make_split, CurationConfig, Split};
use childphone::devmetrics::is_canonical;
use childphone::evaluator::{corpus_per, join_pairs, GroupBy, Hypothesis};
use childphone::inventory::{FeatureTable, TargetInventory};
use childphone::synth::{write_synth_corpus, SynthCorpusConfig};
use childphone::train::{load_examples, FeatureStore};

fn synth_manifest(dir: &std::path::Path) -> (Vec<Utterance>, childphone::synth::SynthCorpus) {
    let cfg = SynthCorpusConfig {
        children_per_corpus: 5,
        ..Default::default()
    };
    let corpus = write_synth_corpus(dir, &cfg, 11).unwrap();
    let mut utts = Vec::new();
    for path in &corpus.files {
        let corpus_id = path.parent().unwrap().file_name().unwrap().to_str().unwrap();
        let file_id = path.file_stem().unwrap().to_str().unwrap();
        let parsed = parse_chat(&fs::read(path).unwrap(), corpus_id, file_id);
        assert!(parsed.notices.is_empty(), "{:?}", parsed.notices);
        utts.extend(parsed.utterances);
    }
    (utts, corpus)
}

#[test]
fn synthetic_corpus_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (utts, corpus) = synth_manifest(dir.path());
    assert_eq!(utts.len(), corpus.utterances);

    let inv = TargetInventory::default_inventory();
    let (kept, rejected) = curate(utts, &CurationConfig::default(), inv, FeatureTable::default_table());
    assert!(rejected.is_empty());
    assert!(kept.iter().all(|u| !u.target_phones.is_empty()));

    let assign = make_split(&kept, &CurationConfig::default()).unwrap();
    let splits: BTreeMap<String, Split> = assign.children.clone();
    let per_split: BTreeSet<Split> = splits.values().copied().collect();
    assert_eq!(per_split.len(), 3);

    let store = FeatureStore::Audio(corpus.audio_dir.clone());
    let (examples, skipped) = load_examples(&kept, &splits, &store, 1.0, inv).unwrap();
    assert!(skipped.is_empty(), "{skipped:?}");
    assert_eq!(examples.len(), kept.len());
    for ex in &examples {
        assert!(ex.mask.end <= ex.features.frames);
        assert!(ex.mask.len() >= ex.labels.min_frames());
        assert_eq!(splits[&ex.child_id], ex.split);
    }

    // scoring the references against themselves
    let hyps: Vec<Hypothesis> = kept
        .iter()
        .map(|u| Hypothesis {
            utt_id: u.utt_id.clone(),
            child_id: u.child_id.clone(),
            age_months: u.age_months,
            language: u.language,
            corpus_id: u.corpus_id.clone(),
            phones: u.target_phones.clone(),
        })
        .collect();
    let pairs = join_pairs(&kept, &hyps, inv).unwrap();
    let report = corpus_per(&pairs, GroupBy::Language);
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.per == 0.0));
}

#[test]
fn canonical_flags_follow_toy_phone_classes() {
    let inv = TargetInventory::default_inventory();
    let idx = |s: &str| inv.index_of(s).unwrap();
    assert!(is_canonical(&[idx("m"), idx("a")], inv).unwrap());
    assert!(!is_canonical(&[idx("a"), idx("a")], inv).unwrap());
    assert!(!is_canonical(&[idx("p"), idx("m")], inv).unwrap());
    assert!(!is_canonical(&[], inv).unwrap());
}
