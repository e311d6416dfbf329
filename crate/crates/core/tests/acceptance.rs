//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measured numbers; the process exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::time::Instant;

use childphone::chat::{Language, Utterance};
use childphone::ctc::{ctc_loss, PhonemeSequence, PosteriorGrid};
use childphone::curator::{
    apply_exclusions, apply_verdicts, filter_utterances, make_split, rejection_reason, verdict_for, CurationConfig,
    FileVerdictInput, QcPlan, QcVerdict, RejectReason, Split,
};
use childphone::devmetrics::{group_slope, is_canonical, trajectories, AgedUtterance, BOOTSTRAP_REPLICATES};
use childphone::evaluator::{align, category_rates, substitution_matrix, Category, EditOp};
use childphone::inventory::{FeatureTable, TargetInventory};
use childphone::optim::TriStage;
use childphone::synth::{age_trend, toy_corpus, AgeTrendConfig, ToyConfig};
use childphone::train::{evaluate_per, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_grid(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> PosteriorGrid {
    let w = vocab + 1;
    let mut probs = Vec::with_capacity(frames * w);
    for _ in 0..frames {
        let row: Vec<f64> = (0..w).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        probs.extend(row.into_iter().map(|v| v / s));
    }
    PosteriorGrid::new(frames, vocab, probs).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> PhonemeSequence {
    let len = rng.gen_range(0..=max_len);
    PhonemeSequence((0..len).map(|_| rng.gen_range(0..vocab)).collect())
}

/// Sum over every frame-level path whose collapse equals `labels`.
fn brute_force_likelihood(grid: &PosteriorGrid, labels: &[usize]) -> f64 {
    let (t_len, w, blank) = (grid.frames(), grid.width(), grid.blank());
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    let count = w.pow(t_len as u32);
    for code in 0..count {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % w;
            c /= w;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(t, &s)| grid.row(t)[s]).product::<f64>();
        }
    }
    total
}

fn c1_ctc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..500 {
        let frames = rng.gen_range(1..=6);
        let vocab = rng.gen_range(1..=3);
        let grid = random_grid(&mut rng, frames, vocab);
        let labels = random_labels(&mut rng, vocab, 4);
        let brute = brute_force_likelihood(&grid, &labels.0);
        match ctc_loss(&grid, &labels, None) {
            Ok(out) => worst = worst.max(((-out.loss).exp() - brute).abs()),
            Err(_) => {
                if brute != 0.0 {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && mismatches == 0 && secs < 10.0,
        format!("max |exp(-loss) - brute| = {worst:.2e}, infeasible mismatches {mismatches}, {secs:.2}s"),
    )
}

fn c2_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let frames = rng.gen_range(1..=8);
        let vocab = rng.gen_range(1..=4);
        let labels = random_labels(&mut rng, vocab, 4);
        if labels.min_frames() > frames {
            continue;
        }
        let w = vocab + 1;
        let logits: Vec<f64> = (0..frames * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let loss_at = |z: &[f64]| ctc_loss(&PosteriorGrid::from_logits(frames, vocab, z), &labels, None).unwrap().loss;
        let grad = ctc_loss(&PosteriorGrid::from_logits(frames, vocab, &logits), &labels, None).unwrap().grad;
        let mut fd = vec![0.0; logits.len()];
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += h;
            let mut m = logits.clone();
            m[i] -= h;
            fd[i] = (loss_at(&p) - loss_at(&m)) / (2.0 * h);
        }
        // relative error of the gradient vector in the max norm
        let diff = fd.iter().zip(&grad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = fd.iter().chain(&grad).map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        worst = worst.max(diff / scale);
        done += 1;
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 100 instances"))
}

fn c3_mask_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    let mut violations = 0;
    while done < 100 {
        let frames = rng.gen_range(3..=14);
        let vocab = rng.gen_range(1..=4);
        let lo = rng.gen_range(0..frames);
        let hi = rng.gen_range(lo + 1..=frames);
        let labels = random_labels(&mut rng, vocab, 3);
        if labels.min_frames() > hi - lo {
            continue;
        }
        let grid = random_grid(&mut rng, frames, vocab);
        let other = random_grid(&mut rng, frames, vocab);
        let w = vocab + 1;
        let mut mixed = grid.values().to_vec();
        for t in (0..lo).chain(hi..frames) {
            mixed[t * w..(t + 1) * w].copy_from_slice(other.row(t));
        }
        let perturbed = PosteriorGrid::new(frames, vocab, mixed).unwrap();
        let a = ctc_loss(&grid, &labels, Some(lo..hi)).unwrap();
        let b = ctc_loss(&perturbed, &labels, Some(lo..hi)).unwrap();
        let same_loss = a.loss.to_bits() == b.loss.to_bits();
        let same_grad = a.grad[lo * w..hi * w]
            .iter()
            .zip(&b.grad[lo * w..hi * w])
            .all(|(x, y)| x.to_bits() == y.to_bits());
        let zero_outside = (0..lo).chain(hi..frames).all(|t| a.grad[t * w..(t + 1) * w].iter().all(|g| *g == 0.0));
        if !(same_loss && same_grad && zero_outside) {
            violations += 1;
        }
        done += 1;
    }
    outcome(violations == 0, format!("{violations} of 100 cases differ"))
}

fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in 0..alphabet as u8 {
                let mut t: Vec<u8> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Fewest single-symbol edits from `src` to every string of length <= max_len,
/// by breadth-first search in string space.
fn edit_bfs(src: &[u8], alphabet: u8, max_len: usize) -> HashMap<Vec<u8>, usize> {
    let mut dist = HashMap::new();
    dist.insert(src.to_vec(), 0);
    let mut queue = VecDeque::from([src.to_vec()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        let mut neighbours = Vec::new();
        for i in 0..s.len() {
            let mut t = s.clone();
            t.remove(i);
            neighbours.push(t);
            for a in 0..alphabet {
                if a != s[i] {
                    let mut t = s.clone();
                    t[i] = a;
                    neighbours.push(t);
                }
            }
        }
        if s.len() < max_len {
            for i in 0..=s.len() {
                for a in 0..alphabet {
                    let mut t = s.clone();
                    t.insert(i, a);
                    neighbours.push(t);
                }
            }
        }
        for t in neighbours {
            if !dist.contains_key(&t) {
                dist.insert(t.clone(), d + 1);
                queue.push_back(t);
            }
        }
    }
    dist
}

fn c4_align_exhaustive() -> Outcome {
    let seqs = all_sequences(3, 5);
    let mut pairs = 0usize;
    let mut wrong_cost = 0usize;
    let mut bad_replay = 0usize;
    for r in &seqs {
        let oracle = edit_bfs(r, 3, 5);
        for h in &seqs {
            let a = align(r, h);
            pairs += 1;
            if a.errors() != oracle[h] {
                wrong_cost += 1;
            }
            let matches = a.ops.iter().filter(|o| matches!(o, EditOp::Match(_))).count();
            let (rr, hh) = a.replay();
            if rr != *r || hh != *h || a.n != matches + a.substitutions + a.deletions {
                bad_replay += 1;
            }
        }
    }
    outcome(
        wrong_cost == 0 && bad_replay == 0,
        format!("{pairs} pairs, {wrong_cost} cost mismatches, {bad_replay} replay failures"),
    )
}

fn c5_inventory() -> Outcome {
    let inv = TargetInventory::default_inventory();
    let table = FeatureTable::default_table();
    let mut self_fail = 0;
    for (i, p) in inv.phones().iter().enumerate() {
        let (j, d) = inv.map_to_target(&p.symbol, table);
        if j != i || d != 0.0 {
            self_fail += 1;
        }
    }
    let bases = table.simple_bases();
    let marks = table.diacritic_symbols();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut not_idempotent = 0;
    let mut untokenizable = 0;
    for _ in 0..10_000 {
        let mut s = String::new();
        for _ in 0..rng.gen_range(1..=8) {
            s.push(bases[rng.gen_range(0..bases.len())]);
            for _ in 0..rng.gen_range(0..=2) {
                s.push(marks[rng.gen_range(0..marks.len())]);
            }
        }
        let Ok(once) = inv.normalize_str(&s, table) else {
            untokenizable += 1;
            continue;
        };
        let twice = inv.normalize_str(&inv.symbols(&once).concat(), table);
        if twice.as_ref() != Ok(&once) {
            not_idempotent += 1;
        }
    }
    outcome(
        inv.len() == 57 && self_fail == 0 && not_idempotent == 0 && untokenizable == 0,
        format!(
            "{} targets, {self_fail} self-map failures, {not_idempotent} non-idempotent of 10000, {untokenizable} untokenizable",
            inv.len()
        ),
    )
}

fn utt(id: &str, child: &str, on: u64, off: u64, age: Option<f64>, pho: &str) -> Utterance {
    Utterance {
        utt_id: id.into(),
        child_id: child.into(),
        age_months: age,
        language: Language::En,
        onset_ms: on,
        offset_ms: off,
        surface_pho: pho.into(),
        target_phones: Vec::new(),
        corpus_id: "c".into(),
        file_id: "f".into(),
    }
}

fn c6_curation() -> Outcome {
    let cfg = CurationConfig::default();
    let mut checks: Vec<(String, Option<RejectReason>, Option<RejectReason>)> = Vec::new();
    let mut check = |name: &str, u: Utterance, want: Option<RejectReason>| {
        checks.push((name.to_string(), rejection_reason(&u, &cfg), want));
    };
    check("49 ms", utt("a", "k", 1000, 1049, Some(20.0), "ba"), Some(RejectReason::Duration));
    check("50 ms", utt("a", "k", 1000, 1050, Some(20.0), "ba"), None);
    check("10000 ms", utt("a", "k", 0, 10_000, Some(20.0), "ba"), None);
    check("10001 ms", utt("a", "k", 0, 10_001, Some(20.0), "ba"), Some(RejectReason::Duration));
    check("96.0 months", utt("a", "k", 0, 500, Some(96.0), "ba"), None);
    check("96.1 months", utt("a", "k", 0, 500, Some(96.1), "ba"), Some(RejectReason::Age));
    for tok in ["X", "C", "V", "G", "S", "xxx", "*"] {
        check(&format!("token {tok}"), utt("a", "k", 0, 500, Some(20.0), &format!("ba {tok} ma")), Some(RejectReason::BannedToken));
    }
    check("star inside word", utt("a", "k", 0, 500, Some(20.0), "ba*"), Some(RejectReason::BannedToken));
    check("unknown age", utt("a", "k", 0, 500, None, "ba"), None);
    let failed: Vec<&String> = checks.iter().filter(|c| c.1 != c.2).map(|c| &c.0).collect();
    let (kept, rejected) = filter_utterances(
        vec![utt("a", "k", 0, 49, None, "ba"), utt("b", "k", 0, 50, None, "ba")],
        &cfg,
    );
    let partition_ok = kept.len() == 1 && rejected.len() == 1 && rejected[0].utterance.utt_id == "a";
    outcome(
        failed.is_empty() && partition_ok,
        format!("{} boundary checks, failures: {failed:?}", checks.len()),
    )
}

fn c7_split() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut leaks = 0;
    let mut worst_dev = 0.0f64;
    let mut nondeterministic = 0;
    for m in 0..50 {
        let n_children = rng.gen_range(20..=60);
        let mut manifest = Vec::new();
        for c in 0..n_children {
            for k in 0..rng.gen_range(1..=40) {
                manifest.push(utt(&format!("u{c}-{k}"), &format!("child{c}"), 0, 500, Some(20.0), "ba"));
            }
        }
        let cfg = CurationConfig {
            seed: m,
            ..Default::default()
        };
        let a = make_split(&manifest, &cfg).unwrap();
        let b = make_split(&manifest, &cfg).unwrap();
        if a != b {
            nondeterministic += 1;
        }
        // independent recount from the manifest
        let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        let mut counts = [0usize; 3];
        for u in &manifest {
            let Some(s) = a.split_of(&u.child_id) else {
                leaks += 1;
                continue;
            };
            seen.entry(u.child_id.as_str()).or_default().insert(s);
            counts[Split::ALL.iter().position(|x| *x == s).unwrap()] += 1;
        }
        leaks += seen.values().filter(|s| s.len() > 1).count();
        for (k, target) in [0.8, 0.1, 0.1].into_iter().enumerate() {
            let realized = counts[k] as f64 / manifest.len() as f64;
            worst_dev = worst_dev.max((realized - target).abs());
        }
    }
    outcome(
        leaks == 0 && worst_dev <= 0.10 && nondeterministic == 0,
        format!(
            "50 manifests: {leaks} leaks, max fraction deviation {:.1} points, {nondeterministic} nondeterministic",
            100.0 * worst_dev
        ),
    )
}

fn c8_toy_training() -> Outcome {
    let start = Instant::now();
    let mut pers = Vec::new();
    for seed in 0..5u64 {
        let toy = toy_corpus(&ToyConfig::default(), 100 + seed);
        let cfg = TrainConfig {
            peak_lr: 1e-3,
            max_steps: 2000,
            batch_size: 8,
            accum_steps: 1,
            seed,
            ..Default::default()
        };
        match train(&toy.train, &toy.valid, toy.vocab, &cfg) {
            Ok(out) => pers.push((out.report.best_valid_per, evaluate_per(&out.head, &toy.test))),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passing = pers.iter().filter(|p| p.0 < 5.0).count();
    let shown: Vec<String> = pers.iter().map(|p| format!("{:.2}/{:.2}", p.0, p.1)).collect();
    outcome(
        passing == 5 && secs < 600.0,
        format!("valid/test PER per seed [{}], {passing}/5 under 5%, {secs:.1}s", shown.join(", ")),
    )
}

fn c9_qc() -> Outcome {
    let direct = verdict_for(7, 10) == QcVerdict::Excluded && verdict_for(8, 10) == QcVerdict::Kept;
    let mut plan = QcPlan::default();
    apply_verdicts(
        &mut plan,
        &[
            FileVerdictInput { corpus_id: "c".into(), file_id: "seven".into(), matched: 7, listened: 10 },
            FileVerdictInput { corpus_id: "c".into(), file_id: "eight".into(), matched: 8, listened: 10 },
        ],
    );
    let mut manifest = Vec::new();
    for file in ["seven", "eight"] {
        let mut u = utt(&format!("{file}/1"), "k", 0, 500, None, "ba");
        u.file_id = file.into();
        manifest.push(u);
    }
    let (kept, dropped) = apply_exclusions(manifest, &plan, &BTreeSet::new());
    let through_plan = kept.len() == 1 && kept[0].file_id == "eight" && dropped.len() == 1 && dropped[0].file_id == "seven";
    outcome(direct && through_plan, "7/10 excluded, 8/10 kept".to_string())
}

fn c10_matrix() -> Outcome {
    let inv = TargetInventory::default_inventory();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut alignments = Vec::new();
    for _ in 0..2000 {
        let r: Vec<usize> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..inv.len())).collect();
        let h: Vec<usize> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..inv.len())).collect();
        alignments.push(align(&r, &h));
    }
    let mx = substitution_matrix(&alignments, inv.len());
    let mut worst_row = 0.0f64;
    for i in 0..inv.len() {
        if mx.support(i) > 0 {
            worst_row = worst_row.max((mx.row_rates(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    // independent recount straight from the op logs
    let cat = |i: usize| Category::of(inv, i).unwrap();
    let mut within: HashMap<Category, (u64, u64, u64)> = HashMap::new();
    for a in &alignments {
        for op in &a.ops {
            if let EditOp::Sub(r, h) = op {
                let (cr, ch) = (cat(*r), cat(*h));
                let e = within.entry(cr).or_default();
                e.2 += 1;
                if cr.class() == ch.class() {
                    e.1 += 1;
                    if cr == ch {
                        e.0 += 1;
                    }
                }
            }
        }
    }
    let mut worst_rate = 0.0f64;
    for r in category_rates(&mx, inv) {
        let (same, in_class, total) = within.get(&r.category).copied().unwrap_or_default();
        let want_within = if in_class == 0 { 0.0 } else { same as f64 / in_class as f64 };
        let want_cross = if total == 0 { 0.0 } else { (total - in_class) as f64 / total as f64 };
        worst_rate = worst_rate.max((r.within_rate - want_within).abs()).max((r.cross_class_rate - want_cross).abs());
        if r.within_class_support != in_class {
            worst_rate = f64::INFINITY;
        }
    }
    outcome(
        worst_row <= 1e-9 && worst_rate <= 1e-12,
        format!("max |row sum - 1| {worst_row:.1e}, max category-rate discrepancy {worst_rate:.1e}"),
    )
}

fn c11_canonical_trend() -> Outcome {
    let inv = TargetInventory::default_inventory();
    let cfg = AgeTrendConfig::default();
    let data = age_trend(&cfg, 11);
    let utts: Vec<AgedUtterance> = data
        .iter()
        .map(|d| AgedUtterance {
            child_id: d.child_id.clone(),
            age_months: d.age_months,
            canonical: is_canonical(&d.labels, inv).unwrap(),
        })
        .collect();
    let report = trajectories(&utts, BOOTSTRAP_REPLICATES, 11);
    let Some(est) = group_slope(&report, BOOTSTRAP_REPLICATES, 11) else {
        return outcome(false, "no slope estimate");
    };
    let t0 = cfg.truth(est.first_bin as f64);
    let t1 = cfg.truth(est.last_bin as f64);
    let contains = |ci: (f64, f64), v: f64| ci.0 <= v && v <= ci.1;
    let pass = est.slope > 0.0
        && est.slope_ci.0 > 0.0
        && contains(est.fitted_first_ci, t0)
        && contains(est.fitted_last_ci, t1);
    outcome(
        pass,
        format!(
            "slope {:.4}/month (CI {:.4}..{:.4}); month {}: truth {t0:.3} in [{:.3}, {:.3}]; month {}: truth {t1:.3} in [{:.3}, {:.3}]",
            est.slope,
            est.slope_ci.0,
            est.slope_ci.1,
            est.first_bin,
            est.fitted_first_ci.0,
            est.fitted_first_ci.1,
            est.last_bin,
            est.fitted_last_ci.0,
            est.fitted_last_ci.1
        ),
    )
}

fn c12_scheduler() -> Outcome {
    let mut failures = Vec::new();
    for s in [10u64, 37, 1000, 2000, 100_000] {
        let peak = 1e-5;
        let sched = TriStage::new(peak, s);
        let warm = (0.1 * s as f64).round() as u64;
        let hold = (0.5 * s as f64).round() as u64;
        if sched.lr_at(0) != 0.0 || sched.lr_at(warm) != peak || sched.lr_at(s) != 0.0 {
            failures.push(format!("S={s}: endpoints"));
        }
        if (warm..=hold).any(|t| sched.lr_at(t) != peak) {
            failures.push(format!("S={s}: plateau"));
        }
        // continuity: successive steps never jump more than one linear
        // increment, up to the rounding of subtracting two values near `peak`
        let up = peak / warm.max(1) as f64;
        let down = peak / (s - hold).max(1) as f64;
        let max_jump = (0..s).map(|t| (sched.lr_at(t + 1) - sched.lr_at(t)).abs()).fold(0.0, f64::max);
        if max_jump > up.max(down) + 4.0 * f64::EPSILON * peak {
            failures.push(format!("S={s}: jump {max_jump:e}"));
        }
        let peak_step = (0..=s).max_by(|a, b| sched.lr_at(*a).total_cmp(&sched.lr_at(*b))).unwrap();
        if sched.lr_at(peak_step) != peak {
            failures.push(format!("S={s}: max is not peak"));
        }
    }
    outcome(failures.is_empty(), format!("S in {{10, 37, 1000, 2000, 100000}}; failures: {failures:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("1 ctc likelihood equals brute-force path sum", c1_ctc_oracle),
        ("2 ctc gradient matches central differences", c2_gradient),
        ("3 mask locality", c3_mask_locality),
        ("4 align equals exhaustive edit-distance oracle", c4_align_exhaustive),
        ("5 inventory self-map and idempotent normalization", c5_inventory),
        ("6 curation boundaries", c6_curation),
        ("7 split leakage, fractions, determinism", c7_split),
        ("8 toy training convergence", c8_toy_training),
        ("9 qc 7/10 vs 8/10", c9_qc),
        ("10 substitution rows and category recount", c10_matrix),
        ("11 canonical age trend", c11_canonical_trend),
        ("12 tri-stage schedule", c12_scheduler),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_ref().is_some_and(|o| !name.starts_with(&format!("{o} "))) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{name}] {} ({:.2}s)", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
