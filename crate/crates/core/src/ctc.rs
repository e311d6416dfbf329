//! Connectionist temporal classification over per-frame posterior grids:
//! log-space forward-backward loss and logit gradient, greedy decoding and
//! context-window frame masks.
//!
//! Label indices run over `0..vocab`; the blank is always index `vocab`.

use std::ops::Range;

use thiserror::Error;

/// Frame hop of every grid and feature matrix.
pub const HOP_MS: u64 = 20;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("{frames} frames cannot align {required} required steps")]
    InfeasibleLength { frames: usize, required: usize },
    #[error("empty target with zero frames")]
    EmptyTargetWithZeroFrames,
    #[error("label {label} outside vocabulary of {vocab}")]
    InvalidLabel { label: usize, vocab: usize },
    #[error("mask {start}..{end} outside {frames} frames")]
    InvalidMask { start: usize, end: usize, frames: usize },
    #[error("grid row {row}: {message}")]
    InvalidGrid { row: usize, message: String },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

/// Row-major `frames x (vocab + 1)` probabilities; the last column is blank.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    frames: usize,
    vocab: usize,
    probs: Vec<f64>,
}

impl PosteriorGrid {
    /// Validates that every row is a distribution (entries in [0, 1], sum within 1e-6).
    pub fn new(frames: usize, vocab: usize, probs: Vec<f64>) -> Result<Self, CtcError> {
        let width = vocab + 1;
        if frames == 0 || probs.len() != frames * width {
            return Err(CtcError::InvalidGrid {
                row: 0,
                message: format!("expected {frames}x{width} values, got {}", probs.len()),
            });
        }
        for (t, row) in probs.chunks(width).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CtcError::InvalidGrid {
                    row: t,
                    message: "entry outside [0, 1]".into(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(CtcError::InvalidGrid {
                    row: t,
                    message: format!("row sums to {sum}"),
                });
            }
        }
        Ok(PosteriorGrid { frames, vocab, probs })
    }

    /// Row-wise softmax of `frames x (vocab + 1)` logits.
    pub fn from_logits(frames: usize, vocab: usize, logits: &[f64]) -> Self {
        let width = vocab + 1;
        assert_eq!(logits.len(), frames * width, "logit shape");
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut sum = 0.0;
            for &x in row {
                let e = (x - max).exp();
                sum += e;
                probs.push(e);
            }
            for p in &mut probs[start..] {
                *p /= sum;
            }
        }
        PosteriorGrid { frames, vocab, probs }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn width(&self) -> usize {
        self.vocab + 1
    }

    pub fn blank(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.probs[t * w..(t + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.probs
    }

    /// Copy of rows `range` as a standalone grid.
    pub fn slice(&self, range: Range<usize>) -> PosteriorGrid {
        let w = self.width();
        PosteriorGrid {
            frames: range.len(),
            vocab: self.vocab,
            probs: self.probs[range.start * w..range.end * w].to_vec(),
        }
    }
}

/// Label sequence over `0..vocab` (never blank).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PhonemeSequence(pub Vec<usize>);

impl PhonemeSequence {
    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of adjacent equal labels; each needs a separating blank frame.
    pub fn repeats(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Minimum frame count of any valid alignment.
    pub fn min_frames(&self) -> usize {
        self.len() + self.repeats()
    }
}

impl From<Vec<usize>> for PhonemeSequence {
    fn from(v: Vec<usize>) -> Self {
        PhonemeSequence(v)
    }
}

/// Frame-level symbol path over labels and blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub symbols: Vec<usize>,
}

impl AlignmentPath {
    /// Merges repeats, then drops blanks.
    pub fn collapse(&self, blank: usize) -> PhonemeSequence {
        let mut out = Vec::new();
        let mut prev = None;
        for &s in &self.symbols {
            if Some(s) != prev && s != blank {
                out.push(s);
            }
            prev = Some(s);
        }
        PhonemeSequence(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    /// Negative log-likelihood of the labels over the masked frames.
    pub loss: f64,
    /// Gradient of `loss` w.r.t. pre-softmax logits, `frames x width`, zero outside the mask.
    pub grad: Vec<f64>,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_mask(grid: &PosteriorGrid, mask: Option<Range<usize>>) -> Result<Range<usize>, CtcError> {
    let mask = mask.unwrap_or(0..grid.frames);
    if mask.start > mask.end || mask.end > grid.frames {
        return Err(CtcError::InvalidMask {
            start: mask.start,
            end: mask.end,
            frames: grid.frames,
        });
    }
    Ok(mask)
}

/// CTC loss `-ln sum_paths prod_t p_t(a_t)` restricted to the frames in `mask`,
/// with its gradient w.r.t. the logits that produced `grid` by softmax.
pub fn ctc_loss(
    grid: &PosteriorGrid,
    labels: &PhonemeSequence,
    mask: Option<Range<usize>>,
) -> Result<CtcOutput, CtcError> {
    let mask = check_mask(grid, mask)?;
    let blank = grid.blank();
    let width = grid.width();
    if let Some(&bad) = labels.0.iter().find(|&&l| l >= blank) {
        return Err(CtcError::InvalidLabel {
            label: bad,
            vocab: grid.vocab,
        });
    }
    let frames = mask.len();
    if frames == 0 {
        return Err(if labels.is_empty() {
            CtcError::EmptyTargetWithZeroFrames
        } else {
            CtcError::InfeasibleLength {
                frames: 0,
                required: labels.min_frames(),
            }
        });
    }
    if frames < labels.min_frames() {
        return Err(CtcError::InfeasibleLength {
            frames,
            required: labels.min_frames(),
        });
    }

    // Blank-interleaved lattice: b y0 b y1 ... b
    let states: Vec<usize> = std::iter::once(blank)
        .chain(labels.0.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = states.len();
    let skip_ok: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && states[s] != blank && states[s] != states[s - 2])
        .collect();

    let logp: Vec<f64> = grid.probs[mask.start * width..mask.end * width]
        .iter()
        .map(|p| p.max(PROB_FLOOR).ln())
        .collect();
    let lp = |t: usize, k: usize| logp[t * width + k];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; frames * s_len];
    alpha[0] = lp(0, blank);
    if s_len > 1 {
        alpha[1] = lp(0, states[1]);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_sum_exp(acc, prev[s - 1]);
            }
            if skip_ok[s] {
                acc = log_sum_exp(acc, prev[s - 2]);
            }
            cur[s] = if acc == neg { neg } else { acc + lp(t, states[s]) };
        }
    }

    let mut beta = vec![neg; frames * s_len];
    let last = frames - 1;
    beta[last * s_len + s_len - 1] = lp(last, states[s_len - 1]);
    if s_len > 1 {
        beta[last * s_len + s_len - 2] = lp(last, states[s_len - 2]);
    }
    for t in (0..last).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_sum_exp(acc, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok[s + 2] {
                acc = log_sum_exp(acc, next[s + 2]);
            }
            cur[s] = if acc == neg { neg } else { acc + lp(t, states[s]) };
        }
    }

    let end = &alpha[last * s_len..];
    let log_lik = if s_len > 1 {
        log_sum_exp(end[s_len - 1], end[s_len - 2])
    } else {
        end[0]
    };
    if log_lik == neg {
        return Err(CtcError::InfeasibleLength {
            frames,
            required: labels.min_frames(),
        });
    }

    // d(-ln p)/d(logit_tk) = p_t(k) - sum_{s: state=k} alpha_t(s) beta_t(s) / (p_t(k) p)
    let mut grad = vec![0.0; grid.frames * width];
    let mut occupancy = vec![neg; width];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|o| *o = neg);
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == neg || b == neg {
                continue;
            }
            let k = states[s];
            occupancy[k] = log_sum_exp(occupancy[k], a + b);
        }
        let row = grid.row(mask.start + t);
        let out = &mut grad[(mask.start + t) * width..(mask.start + t + 1) * width];
        for k in 0..width {
            let gamma = if occupancy[k] == neg {
                0.0
            } else {
                (occupancy[k] - lp(t, k) - log_lik).exp()
            };
            out[k] = row[k] - gamma;
        }
    }

    Ok(CtcOutput { loss: -log_lik, grad })
}

/// Per-frame state occupancy `gamma_t(k)` over the masked frames (rows sum to 1).
/// Used for visualizing which label each frame is attributed to.
pub fn occupancy(grid: &PosteriorGrid, labels: &PhonemeSequence, mask: Option<Range<usize>>) -> Result<Vec<f64>, CtcError> {
    let mask = check_mask(grid, mask)?;
    let out = ctc_loss(grid, labels, Some(mask.clone()))?;
    let w = grid.width();
    let mut occ = Vec::with_capacity(mask.len() * w);
    for t in mask {
        let row = grid.row(t);
        for k in 0..w {
            occ.push(row[k] - out.grad[t * w + k]);
        }
    }
    Ok(occ)
}

/// Per-frame argmax path (ties to the lowest index) over the masked frames.
pub fn best_path(grid: &PosteriorGrid, mask: Option<Range<usize>>) -> Result<AlignmentPath, CtcError> {
    let mask = check_mask(grid, mask)?;
    let symbols = mask
        .map(|t| {
            let row = grid.row(t);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(AlignmentPath { symbols })
}

/// Greedy decode: argmax per frame, merge repeats, drop blanks.
pub fn greedy_decode(grid: &PosteriorGrid, mask: Option<Range<usize>>) -> Result<PhonemeSequence, CtcError> {
    Ok(best_path(grid, mask)?.collapse(grid.blank()))
}

/// An utterance extended by context on both sides, clipped to the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub context_ms: u64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    /// Utterance frames relative to the window start.
    pub target_frames: Range<usize>,
}

impl ContextWindow {
    pub fn duration_ms(&self) -> u64 {
        self.window_end_ms - self.window_start_ms
    }

    /// Frames needed to cover the window at the fixed hop.
    pub fn frame_count(&self) -> usize {
        self.duration_ms().div_ceil(HOP_MS) as usize
    }

    /// Absolute frame index of the window start in a file-level frame sequence.
    pub fn first_file_frame(&self) -> usize {
        (self.window_start_ms / HOP_MS) as usize
    }
}

/// Window `[t_start - c/2, t_end + c/2]` clipped to `[0, file_dur]`; the target
/// mask floors its start frame and ceils its end frame so the utterance is
/// fully covered.
pub fn build_context_window(
    t_start_ms: u64,
    t_end_ms: u64,
    context_sec: f64,
    file_dur_ms: u64,
) -> Result<ContextWindow, CtcError> {
    if t_start_ms >= t_end_ms || t_end_ms > file_dur_ms {
        return Err(CtcError::InvalidBounds(format!(
            "need 0 <= {t_start_ms} < {t_end_ms} <= {file_dur_ms}"
        )));
    }
    if !(context_sec >= 0.0) || !context_sec.is_finite() {
        return Err(CtcError::InvalidBounds(format!("context {context_sec} s")));
    }
    let half = (context_sec * 500.0).round() as u64;
    let window_start_ms = t_start_ms.saturating_sub(half);
    let window_end_ms = (t_end_ms + half).min(file_dur_ms);
    let lo = ((t_start_ms - window_start_ms) / HOP_MS) as usize;
    let hi = (t_end_ms - window_start_ms).div_ceil(HOP_MS) as usize;
    Ok(ContextWindow {
        context_ms: 2 * half,
        t_start_ms,
        t_end_ms,
        window_start_ms,
        window_end_ms,
        target_frames: lo..hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, vocab: usize) -> PosteriorGrid {
        let w = vocab + 1;
        PosteriorGrid::new(frames, vocab, vec![1.0 / w as f64; frames * w]).unwrap()
    }

    #[test]
    fn single_forced_path_has_zero_loss() {
        let grid = PosteriorGrid::new(1, 1, vec![1.0, 0.0]).unwrap();
        let out = ctc_loss(&grid, &vec![0].into(), None).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad[0], 0.0);
    }

    #[test]
    fn two_frames_one_label() {
        let out = ctc_loss(&uniform(2, 1), &vec![0].into(), None).unwrap();
        assert!((out.loss - -(0.75f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn mask_equals_subgrid() {
        let logits: Vec<f64> = (0..7 * 4).map(|i| ((i * 37 % 11) as f64) * 0.3).collect();
        let grid = PosteriorGrid::from_logits(7, 3, &logits);
        let y: PhonemeSequence = vec![1, 2].into();
        let masked = ctc_loss(&grid, &y, Some(2..5)).unwrap();
        let sub = ctc_loss(&grid.slice(2..5), &y, None).unwrap();
        assert_eq!(masked.loss, sub.loss);
        assert_eq!(&masked.grad[2 * 4..5 * 4], &sub.grad[..]);
        assert!(masked.grad[..8].iter().chain(&masked.grad[20..]).all(|g| *g == 0.0));
    }

    #[test]
    fn feasibility_errors() {
        let g = uniform(2, 2);
        assert_eq!(
            ctc_loss(&g, &vec![0, 0].into(), None),
            Err(CtcError::InfeasibleLength { frames: 2, required: 3 })
        );
        assert!(ctc_loss(&g, &vec![0, 1].into(), None).is_ok());
        assert_eq!(ctc_loss(&g, &vec![].into(), Some(1..1)), Err(CtcError::EmptyTargetWithZeroFrames));
        assert!(matches!(ctc_loss(&g, &vec![2].into(), None), Err(CtcError::InvalidLabel { .. })));
        assert!(matches!(ctc_loss(&g, &vec![0].into(), Some(1..3)), Err(CtcError::InvalidMask { .. })));
    }

    #[test]
    fn empty_labels_is_all_blank_path() {
        let grid = PosteriorGrid::new(2, 1, vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        let out = ctc_loss(&grid, &vec![].into(), None).unwrap();
        assert!((out.loss - -(0.375f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(PosteriorGrid::new(1, 1, vec![0.6, 0.6]).is_err());
        assert!(PosteriorGrid::new(1, 1, vec![1.2, -0.2]).is_err());
        assert!(PosteriorGrid::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn decode_examples() {
        // argmax path a a blank a -> [a, a]
        let rows = [[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.7, 0.3]];
        let grid = PosteriorGrid::new(4, 1, rows.concat()).unwrap();
        assert_eq!(greedy_decode(&grid, None).unwrap().0, vec![0, 0]);
        let blank = PosteriorGrid::new(3, 1, [[0.1, 0.9]; 3].concat()).unwrap();
        assert!(greedy_decode(&blank, None).unwrap().is_empty());
        // ties go to the lowest index, which is never the blank
        let tie = PosteriorGrid::new(1, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(greedy_decode(&tie, None).unwrap().0, vec![0]);
        assert_eq!(greedy_decode(&grid, Some(2..4)).unwrap().0, vec![0]);
    }

    #[test]
    fn context_window_examples() {
        let w = build_context_window(2000, 3000, 0.0, 60_000).unwrap();
        assert_eq!((w.window_start_ms, w.window_end_ms), (2000, 3000));
        assert_eq!(w.target_frames, 0..50);
        assert_eq!(w.frame_count(), 50);

        let w = build_context_window(2000, 3000, 20.0, 60_000).unwrap();
        assert_eq!((w.window_start_ms, w.window_end_ms), (0, 13_000));
        assert_eq!(w.target_frames, 100..150);

        let w = build_context_window(55_000, 60_000, 20.0, 60_000).unwrap();
        assert_eq!((w.window_start_ms, w.window_end_ms), (45_000, 60_000));
        assert_eq!(w.target_frames, 500..750);
        assert!(w.target_frames.end <= w.frame_count());

        let w = build_context_window(1010, 1055, 0.0, 5000).unwrap();
        assert_eq!(w.target_frames, 0..3);
        assert!(build_context_window(10, 10, 0.0, 100).is_err());
        assert!(build_context_window(10, 200, 0.0, 100).is_err());
    }

    #[test]
    fn collapse_rule() {
        let path = AlignmentPath { symbols: vec![0, 0, 2, 0, 1, 1, 2] };
        assert_eq!(path.collapse(2).0, vec![0, 0, 1]);
    }
}
