//! Browser bindings: IPA normalization with a feature diff, phone alignment
//! with PER, and a CTC explorer showing the context window, the loss and the
//! per-frame occupancy. Each binding takes plain strings or numbers and
//! returns a JSON string; the pure functions below are what the tests call.

use childphone::ctc::{build_context_window, ctc_loss, greedy_decode, occupancy, PhonemeSequence, PosteriorGrid};
use childphone::evaluator::{align, EditOp};
use childphone::inventory::{FeatureTable, TargetInventory};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct FeatureDiff {
    pub feature: String,
    pub input: char,
    pub target: char,
}

#[derive(Debug, Serialize)]
pub struct NormalizedPhone {
    pub input: String,
    pub target: String,
    pub distance: f64,
    pub input_features: String,
    pub target_features: String,
    pub diff: Vec<FeatureDiff>,
}

pub fn normalize_phones(ipa: &str) -> Result<Vec<NormalizedPhone>, String> {
    let table = FeatureTable::default_table();
    let inv = TargetInventory::default_inventory();
    let phones = table.tokenize(ipa).map_err(|e| e.to_string())?;
    Ok(phones
        .iter()
        .map(|p| {
            let (idx, distance) = inv.map_to_target(p, table);
            let target = &inv.phones()[idx].symbol;
            let diff = table
                .names()
                .iter()
                .enumerate()
                .filter(|&(i, _)| p.features.get(i) != target.features.get(i))
                .map(|(i, name)| FeatureDiff {
                    feature: name.clone(),
                    input: p.features.get(i).as_char(),
                    target: target.features.get(i).as_char(),
                })
                .collect();
            NormalizedPhone {
                input: p.symbol(),
                target: target.symbol(),
                distance,
                input_features: p.features.to_string(),
                target_features: target.features.to_string(),
                diff,
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct AlignedOp {
    pub op: &'static str,
    pub reference: Option<String>,
    pub hypothesis: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AlignmentView {
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub n: usize,
    pub per: f64,
    pub ops: Vec<AlignedOp>,
}

/// Normalizes both strings to target phones, then aligns them.
pub fn align_ipa(reference: &str, hypothesis: &str) -> Result<AlignmentView, String> {
    let table = FeatureTable::default_table();
    let inv = TargetInventory::default_inventory();
    let r = inv.symbols(&inv.normalize_str(reference, table).map_err(|e| format!("reference: {e}"))?);
    let h = inv.symbols(&inv.normalize_str(hypothesis, table).map_err(|e| format!("hypothesis: {e}"))?);
    let a = align(&r, &h);
    let ops = a
        .ops
        .iter()
        .map(|op| match op {
            EditOp::Match(x) => AlignedOp { op: "match", reference: Some(x.clone()), hypothesis: Some(x.clone()) },
            EditOp::Sub(x, y) => AlignedOp { op: "sub", reference: Some(x.clone()), hypothesis: Some(y.clone()) },
            EditOp::Del(x) => AlignedOp { op: "del", reference: Some(x.clone()), hypothesis: None },
            EditOp::Ins(y) => AlignedOp { op: "ins", reference: None, hypothesis: Some(y.clone()) },
        })
        .collect();
    Ok(AlignmentView {
        reference: r,
        hypothesis: h,
        insertions: a.insertions,
        deletions: a.deletions,
        substitutions: a.substitutions,
        n: a.n,
        per: a.per,
        ops,
    })
}

#[derive(Debug, Serialize)]
pub struct FrameView {
    /// Frame index in the window.
    pub frame: usize,
    pub in_mask: bool,
    /// Argmax symbol of the synthetic posteriors ("_" is blank).
    pub argmax: String,
    /// Occupancy per entry of `CtcView::columns`; empty outside the mask.
    pub occupancy: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct CtcView {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub mask_start: usize,
    pub mask_end: usize,
    pub labels: Vec<String>,
    /// Distinct label symbols in first-seen order, then "_" for blank.
    pub columns: Vec<String>,
    pub loss: f64,
    pub decoded: Vec<String>,
    pub frames: Vec<FrameView>,
}

/// Builds a window around `[start_ms, end_ms)` inside a `file_ms` file, fills
/// it with posteriors that spread the labels evenly over the utterance frames
/// (blank outside, `sharpness` sets how peaked each frame is) and scores them.
pub fn explore_ctc(
    labels_ipa: &str,
    start_ms: u64,
    end_ms: u64,
    file_ms: u64,
    context_sec: f64,
    sharpness: f64,
) -> Result<CtcView, String> {
    let table = FeatureTable::default_table();
    let inv = TargetInventory::default_inventory();
    let labels = inv.normalize_str(labels_ipa, table).map_err(|e| e.to_string())?;
    let window = build_context_window(start_ms, end_ms, context_sec, file_ms).map_err(|e| e.to_string())?;
    let frames = window.frame_count();
    let mask = window.target_frames.clone();
    let vocab = inv.len();
    let blank = inv.blank();
    let mut logits = vec![0.0; frames * (vocab + 1)];
    for t in 0..frames {
        let row = &mut logits[t * (vocab + 1)..(t + 1) * (vocab + 1)];
        if mask.contains(&t) && !labels.is_empty() {
            let j = (t - mask.start) * labels.len() / mask.len();
            row[labels[j]] = sharpness;
            row[blank] = sharpness * 0.5;
        } else {
            row[blank] = sharpness;
        }
    }
    let grid = PosteriorGrid::from_logits(frames, vocab, &logits);
    let seq = PhonemeSequence(labels.clone());
    let loss = ctc_loss(&grid, &seq, Some(mask.clone())).map_err(|e| e.to_string())?.loss;
    let occ = occupancy(&grid, &seq, Some(mask.clone())).map_err(|e| e.to_string())?;
    let decoded = greedy_decode(&grid, Some(mask.clone())).map_err(|e| e.to_string())?;
    let symbol = |k: usize| if k == blank { "_".to_string() } else { inv.symbols(&[k]).remove(0) };
    let width = vocab + 1;
    let mut cols: Vec<usize> = Vec::new();
    for &l in &labels {
        if !cols.contains(&l) {
            cols.push(l);
        }
    }
    cols.push(blank);
    let frame_views = (0..frames)
        .map(|t| {
            let row = grid.row(t);
            let argmax = (0..width).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            let occupancy = if mask.contains(&t) {
                let r = &occ[(t - mask.start) * width..(t - mask.start + 1) * width];
                cols.iter().map(|&k| r[k]).collect()
            } else {
                Vec::new()
            };
            FrameView { frame: t, in_mask: mask.contains(&t), argmax: symbol(argmax), occupancy }
        })
        .collect();
    Ok(CtcView {
        window_start_ms: window.window_start_ms,
        window_end_ms: window.window_end_ms,
        mask_start: mask.start,
        mask_end: mask.end,
        labels: inv.symbols(&labels),
        columns: cols.iter().map(|&k| symbol(k)).collect(),
        loss,
        decoded: inv.symbols(decoded.labels()),
        frames: frame_views,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn normalize(ipa: &str) -> Result<String, JsError> {
    to_js(normalize_phones(ipa))
}

#[wasm_bindgen(js_name = alignPhones)]
pub fn align_phones(reference: &str, hypothesis: &str) -> Result<String, JsError> {
    to_js(align_ipa(reference, hypothesis))
}

#[wasm_bindgen(js_name = exploreCtc)]
pub fn explore_ctc_js(
    labels_ipa: &str,
    start_ms: u32,
    end_ms: u32,
    file_ms: u32,
    context_sec: f64,
    sharpness: f64,
) -> Result<String, JsError> {
    to_js(explore_ctc(labels_ipa, start_ms as u64, end_ms as u64, file_ms as u64, context_sec, sharpness))
}
