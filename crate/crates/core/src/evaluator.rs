//! Phoneme error rate with insertion/deletion/substitution decomposition,
//! grouped corpus reports, substitution matrices and category-level rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chat::{Language, Utterance};
use crate::inventory::{Height, Manner, PhoneClass, TargetInventory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp<T> {
    Match(T),
    Sub(T, T),
    Del(T),
    Ins(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult<T> {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    /// Reference length.
    pub n: usize,
    pub per: f64,
    /// Set when the reference is empty but the hypothesis is not.
    pub empty_reference: bool,
    pub ops: Vec<EditOp<T>>,
}

impl<T: Clone> AlignmentResult<T> {
    pub fn errors(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }

    /// Rebuilds `(reference, hypothesis)` from the op sequence.
    pub fn replay(&self) -> (Vec<T>, Vec<T>) {
        let mut r = Vec::new();
        let mut h = Vec::new();
        for op in &self.ops {
            match op {
                EditOp::Match(x) => {
                    r.push(x.clone());
                    h.push(x.clone());
                }
                EditOp::Sub(a, b) => {
                    r.push(a.clone());
                    h.push(b.clone());
                }
                EditOp::Del(a) => r.push(a.clone()),
                EditOp::Ins(b) => h.push(b.clone()),
            }
        }
        (r, h)
    }
}

/// `100 (I + D + S) / N`; an empty reference scores `100 I / max(1, N)`.
pub fn per_value(i: usize, d: usize, s: usize, n: usize) -> f64 {
    100.0 * (i + d + s) as f64 / n.max(1) as f64
}

/// Unit-cost Levenshtein alignment. The backtrace prefers the diagonal
/// (match/substitution), then deletion, then insertion.
pub fn align<T: PartialEq + Clone>(reference: &[T], hypothesis: &[T]) -> AlignmentResult<T> {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    let (mut ins, mut del, mut sub) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == dp[(i - 1) * w + j - 1] + usize::from(!same) {
                if same {
                    ops.push(EditOp::Match(reference[i - 1].clone()));
                } else {
                    ops.push(EditOp::Sub(reference[i - 1].clone(), hypothesis[j - 1].clone()));
                    sub += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Del(reference[i - 1].clone()));
            del += 1;
            i -= 1;
        } else {
            ops.push(EditOp::Ins(hypothesis[j - 1].clone()));
            ins += 1;
            j -= 1;
        }
    }
    ops.reverse();
    AlignmentResult {
        insertions: ins,
        deletions: del,
        substitutions: sub,
        n,
        per: per_value(ins, del, sub, n),
        empty_reference: n == 0 && m > 0,
        ops,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    None,
    Language,
    Corpus,
    /// Whole years of age.
    AgeBin,
}

/// One scored reference/hypothesis pair with the metadata used for grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub utt_id: String,
    pub language: Language,
    pub corpus_id: String,
    pub age_months: Option<f64>,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
}

/// One decoded utterance, one JSON object per line in hypothesis files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub utt_id: String,
    pub child_id: String,
    pub age_months: Option<f64>,
    pub language: Language,
    pub corpus_id: String,
    pub phones: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JoinError {
    #[error("hypothesis {0} has no reference")]
    MissingReference(String),
    #[error("{utt_id}: symbol {symbol:?} is not in the inventory")]
    UnknownSymbol { utt_id: String, symbol: String },
}

fn to_labels(utt_id: &str, symbols: &[String], inv: &TargetInventory) -> Result<Vec<usize>, JoinError> {
    symbols
        .iter()
        .map(|s| {
            inv.index_of(s).ok_or_else(|| JoinError::UnknownSymbol {
                utt_id: utt_id.to_string(),
                symbol: s.clone(),
            })
        })
        .collect()
}

/// Pairs each hypothesis with its reference utterance by `utt_id`, in
/// hypothesis order. References without a hypothesis are not scored.
pub fn join_pairs(refs: &[Utterance], hyps: &[Hypothesis], inv: &TargetInventory) -> Result<Vec<ScoredPair>, JoinError> {
    let by_id: BTreeMap<&str, &Utterance> = refs.iter().map(|u| (u.utt_id.as_str(), u)).collect();
    hyps.iter()
        .map(|h| {
            let r = by_id
                .get(h.utt_id.as_str())
                .ok_or_else(|| JoinError::MissingReference(h.utt_id.clone()))?;
            Ok(ScoredPair {
                utt_id: h.utt_id.clone(),
                language: r.language,
                corpus_id: r.corpus_id.clone(),
                age_months: r.age_months,
                reference: to_labels(&r.utt_id, &r.target_phones, inv)?,
                hypothesis: to_labels(&h.utt_id, &h.phones, inv)?,
            })
        })
        .collect()
}

impl ScoredPair {
    fn group_key(&self, by: GroupBy) -> String {
        match by {
            GroupBy::None => "all".to_string(),
            GroupBy::Language => self.language.as_str().to_string(),
            GroupBy::Corpus => self.corpus_id.clone(),
            GroupBy::AgeBin => match self.age_months {
                Some(a) => {
                    let y = (a / 12.0).floor() as u32;
                    format!("{:03}-{:03}m", y * 12, y * 12 + 12)
                }
                None => "unknown".to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerRow {
    pub group: String,
    pub utterances: usize,
    pub n: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub ins_rate: f64,
    pub del_rate: f64,
    pub sub_rate: f64,
    /// Micro-averaged: errors summed over the group divided by summed N.
    pub per: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerReport {
    pub group_by: GroupBy,
    pub rows: Vec<PerRow>,
}

impl PerReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("group\tutterances\tN\tI\tD\tS\tI%\tD%\tS%\tPER%(micro)\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.1}\n",
                r.group,
                r.utterances,
                r.n,
                r.insertions,
                r.deletions,
                r.substitutions,
                r.ins_rate,
                r.del_rate,
                r.sub_rate,
                r.per
            ));
        }
        out
    }
}

pub fn corpus_per(pairs: &[ScoredPair], by: GroupBy) -> PerReport {
    let mut acc: BTreeMap<String, [usize; 5]> = BTreeMap::new();
    for p in pairs {
        let a = align(&p.reference, &p.hypothesis);
        let e = acc.entry(p.group_key(by)).or_default();
        e[0] += 1;
        e[1] += a.n;
        e[2] += a.insertions;
        e[3] += a.deletions;
        e[4] += a.substitutions;
    }
    let rate = |x: usize, n: usize| 100.0 * x as f64 / n.max(1) as f64;
    PerReport {
        group_by: by,
        rows: acc
            .into_iter()
            .map(|(group, [u, n, i, d, s])| PerRow {
                group,
                utterances: u,
                n,
                insertions: i,
                deletions: d,
                substitutions: s,
                ins_rate: rate(i, n),
                del_rate: rate(d, n),
                sub_rate: rate(s, n),
                per: per_value(i, d, s, n),
            })
            .collect(),
    }
}

/// Substitution counts over inventory labels, normalized per reference row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionMatrix {
    pub size: usize,
    pub counts: Vec<u64>,
}

impl SubstitutionMatrix {
    pub fn new(size: usize) -> Self {
        SubstitutionMatrix {
            size,
            counts: vec![0; size * size],
        }
    }

    pub fn add(&mut self, reference: usize, hypothesis: usize) {
        self.counts[reference * self.size + hypothesis] += 1;
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.size + j]
    }

    pub fn support(&self, i: usize) -> u64 {
        self.counts[i * self.size..(i + 1) * self.size].iter().sum()
    }

    /// Share of row `i`'s substitutions that went to `j` (0 when unsupported).
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        let s = self.support(i);
        if s == 0 {
            0.0
        } else {
            self.count(i, j) as f64 / s as f64
        }
    }

    pub fn row_rates(&self, i: usize) -> Vec<f64> {
        (0..self.size).map(|j| self.rate(i, j)).collect()
    }

    /// CSV with a header row of hypothesis symbols, one row per reference
    /// phone with support; cells are row-normalized rates.
    pub fn to_csv(&self, inv: &TargetInventory, class: Option<PhoneClass>) -> String {
        let idx: Vec<usize> = (0..self.size)
            .filter(|&i| class.is_none_or(|c| inv.get(i).map(|p| p.class) == Some(c)))
            .collect();
        let sym = |i: usize| inv.get(i).map_or_else(|| i.to_string(), |p| p.symbol_str());
        let mut out = String::from("reference,support");
        for &j in &idx {
            out.push(',');
            out.push_str(&sym(j));
        }
        out.push('\n');
        for &i in &idx {
            let s = self.support(i);
            if s == 0 {
                continue;
            }
            out.push_str(&format!("{},{}", sym(i), s));
            for &j in &idx {
                out.push_str(&format!(",{:.6}", self.rate(i, j)));
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable summary of the top substitutes of row `i`, e.g. `ŋ -> n 46.5%`.
    pub fn describe_row(&self, i: usize, inv: &TargetInventory, top: usize) -> String {
        let mut cells: Vec<(usize, u64)> = (0..self.size).map(|j| (j, self.count(i, j))).filter(|c| c.1 > 0).collect();
        cells.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let sym = |k: usize| inv.get(k).map_or_else(|| k.to_string(), |p| p.symbol_str());
        let parts: Vec<String> = cells
            .iter()
            .take(top)
            .map(|&(j, _)| format!("{} -> {} {:.1}%", sym(i), sym(j), 100.0 * self.rate(i, j)))
            .collect();
        parts.join(", ")
    }
}

pub fn substitution_matrix(alignments: &[AlignmentResult<usize>], size: usize) -> SubstitutionMatrix {
    let mut m = SubstitutionMatrix::new(size);
    for a in alignments {
        for op in &a.ops {
            if let EditOp::Sub(r, h) = op {
                if *r < size && *h < size {
                    m.add(*r, *h);
                }
            }
        }
    }
    m
}

/// Coarse category of a target phone: vowel height or consonant manner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Height(Height),
    Manner(Manner),
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Height(h) => h.name(),
            Category::Manner(m) => m.name(),
        }
    }

    pub fn of(inv: &TargetInventory, idx: usize) -> Option<Category> {
        let p = inv.get(idx)?;
        match p.class {
            PhoneClass::Vowel => p.height.map(Category::Height),
            PhoneClass::Consonant => p.manner.map(Category::Manner),
        }
    }

    pub fn class(self) -> PhoneClass {
        match self {
            Category::Height(_) => PhoneClass::Vowel,
            Category::Manner(_) => PhoneClass::Consonant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRates {
    pub category: Category,
    /// Substitutions from phones of this category into the same class.
    pub within_class_support: u64,
    /// Shares of within-class substitutions landing in each category of the class.
    pub to: Vec<(Category, f64)>,
    pub within_rate: f64,
    /// Share of all this category's substitutions that cross into the other class.
    pub cross_class_rate: f64,
}

/// Aggregates substitution mass by vowel height / consonant manner blocks.
/// Rates within a class are taken over substitutions that stay in the class;
/// class-crossing substitutions are reported separately.
pub fn category_rates(matrix: &SubstitutionMatrix, inv: &TargetInventory) -> Vec<CategoryRates> {
    let categories: Vec<Category> = Height::ALL
        .into_iter()
        .map(Category::Height)
        .chain(Manner::ALL.into_iter().map(Category::Manner))
        .collect();
    let mut out = Vec::new();
    for &cat in &categories {
        let rows: Vec<usize> = (0..matrix.size).filter(|&i| Category::of(inv, i) == Some(cat)).collect();
        if rows.is_empty() {
            continue;
        }
        let mut block: BTreeMap<Category, u64> = BTreeMap::new();
        let mut cross = 0u64;
        let mut total = 0u64;
        for &i in &rows {
            for j in 0..matrix.size {
                let c = matrix.count(i, j);
                if c == 0 {
                    continue;
                }
                total += c;
                match Category::of(inv, j) {
                    Some(cj) if cj.class() == cat.class() => *block.entry(cj).or_default() += c,
                    _ => cross += c,
                }
            }
        }
        let within_support = total - cross;
        let share = |x: u64| if within_support == 0 { 0.0 } else { x as f64 / within_support as f64 };
        let to: Vec<(Category, f64)> = categories
            .iter()
            .filter(|c| c.class() == cat.class())
            .map(|c| (*c, share(block.get(c).copied().unwrap_or(0))))
            .collect();
        out.push(CategoryRates {
            category: cat,
            within_class_support: within_support,
            within_rate: share(block.get(&cat).copied().unwrap_or(0)),
            to,
            cross_class_rate: if total == 0 { 0.0 } else { cross as f64 / total as f64 },
        });
    }
    out
}

pub fn category_rates_tsv(rates: &[CategoryRates]) -> String {
    let mut out = String::from("category\tsupport\twithin%\tcross_class%\tdistribution\n");
    for r in rates {
        let dist: Vec<String> = r.to.iter().map(|(c, v)| format!("{}:{:.1}", c.name(), 100.0 * v)).collect();
        out.push_str(&format!(
            "{}\t{}\t{:.1}\t{:.1}\t{}\n",
            r.category.name(),
            r.within_class_support,
            100.0 * r.within_rate,
            100.0 * r.cross_class_rate,
            dist.join(" ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> &'static TargetInventory {
        TargetInventory::default_inventory()
    }

    fn ix(s: &str) -> usize {
        inv().index_of(s).unwrap()
    }

    #[test]
    fn align_examples() {
        let a = align(&['a'], &['a']);
        assert_eq!((a.insertions, a.deletions, a.substitutions, a.per), (0, 0, 0, 0.0));
        let a = align(&['t', 'a'], &['d', 'a']);
        assert_eq!((a.substitutions, a.per), (1, 50.0));
        let a = align(&['a', 'b', 'c'], &[]);
        assert_eq!((a.deletions, a.per), (3, 100.0));
        let a = align::<char>(&[], &[]);
        assert_eq!((a.per, a.empty_reference), (0.0, false));
        let a = align(&[], &['x', 'y']);
        assert_eq!((a.insertions, a.per, a.empty_reference), (2, 200.0, true));
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // ab vs ba: two subs or del+ins both cost 2
        let a = align(&['a', 'b'], &['b', 'a']);
        assert_eq!((a.substitutions, a.deletions, a.insertions), (2, 0, 0));
    }

    #[test]
    fn per_can_exceed_100() {
        let a = align(&['a'], &['b', 'c', 'd']);
        assert_eq!(a.per, 300.0);
    }

    fn pair(lang: Language, n: usize, errors: usize) -> ScoredPair {
        let reference: Vec<usize> = (0..n).collect();
        let hypothesis: Vec<usize> = (0..n).map(|i| if i < errors { i + 100 } else { i }).collect();
        ScoredPair {
            utt_id: String::new(),
            language: lang,
            corpus_id: "c".into(),
            age_months: Some(20.0),
            reference,
            hypothesis,
        }
    }

    #[test]
    fn micro_not_macro() {
        let pairs = vec![pair(Language::En, 5, 5), pair(Language::En, 15, 3)];
        let r = corpus_per(&pairs, GroupBy::None);
        assert_eq!(r.rows[0].per, 40.0);
        let macro_avg = (100.0 + 20.0) / 2.0;
        assert_eq!(macro_avg, 60.0);
    }

    #[test]
    fn language_grouping() {
        let pairs = vec![pair(Language::En, 4, 1), pair(Language::Fr, 4, 2), pair(Language::En, 4, 0)];
        let r = corpus_per(&pairs, GroupBy::Language);
        let groups: Vec<_> = r.rows.iter().map(|r| (r.group.as_str(), r.per)).collect();
        assert_eq!(groups, [("EN", 12.5), ("FR", 50.0)]);
        let single = corpus_per(&pairs[..1], GroupBy::None);
        assert_eq!(single.rows[0].per, align(&pairs[0].reference, &pairs[0].hypothesis).per);
        assert_eq!(corpus_per(&pairs, GroupBy::AgeBin).rows[0].group, "012-024m");
    }

    #[test]
    fn matrix_counts() {
        let (ng, n, m) = (ix("ŋ"), ix("n"), ix("m"));
        let aligns = vec![align(&[ng, ng], &[n, n]), align(&[ng], &[m])];
        let mx = substitution_matrix(&aligns, inv().len());
        assert_eq!(mx.support(ng), 3);
        assert!((mx.rate(ng, n) - 2.0 / 3.0).abs() < 1e-12);
        assert!((mx.rate(ng, m) - 1.0 / 3.0).abs() < 1e-12);
        let empty = substitution_matrix(&[align(&[n], &[n])], inv().len());
        assert!((0..inv().len()).all(|i| empty.support(i) == 0));
        assert_eq!(empty.to_csv(inv(), None).lines().count(), 1);
    }

    #[test]
    fn matrix_rendering_regression() {
        // 93 of 200 substitutions of ŋ go to n
        let mut mx = SubstitutionMatrix::new(inv().len());
        for _ in 0..93 {
            mx.add(ix("ŋ"), ix("n"));
        }
        for _ in 0..107 {
            mx.add(ix("ŋ"), ix("m"));
        }
        assert_eq!(mx.describe_row(ix("ŋ"), inv(), 2), "ŋ -> m 53.5%, ŋ -> n 46.5%");
    }

    #[test]
    fn uniform_two_stops_two_fricatives() {
        let stops = [ix("p"), ix("t")];
        let frics = [ix("f"), ix("s")];
        let all: Vec<usize> = stops.iter().chain(&frics).copied().collect();
        let mut mx = SubstitutionMatrix::new(inv().len());
        for &i in &all {
            for &j in &all {
                if i != j {
                    mx.add(i, j);
                }
            }
        }
        let rates = category_rates(&mx, inv());
        let get = |m: Manner| rates.iter().find(|r| r.category == Category::Manner(m)).unwrap().within_rate;
        assert!((get(Manner::Stop) - 1.0 / 3.0).abs() < 1e-12);
        assert!((get(Manner::Fricative) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_within_stops() {
        let mut mx = SubstitutionMatrix::new(inv().len());
        mx.add(ix("p"), ix("t"));
        mx.add(ix("k"), ix("g"));
        let rates = category_rates(&mx, inv());
        let stop = rates.iter().find(|r| r.category == Category::Manner(Manner::Stop)).unwrap();
        assert_eq!(stop.within_rate, 1.0);
    }

    #[test]
    fn category_rendering_regression() {
        let mut mx = SubstitutionMatrix::new(inv().len());
        let fill = |mx: &mut SubstitutionMatrix, from: &str, within: &str, n_in: usize, out: &str, n_out: usize| {
            for _ in 0..n_in {
                mx.add(ix(from), ix(within));
            }
            for _ in 0..n_out {
                mx.add(ix(from), ix(out));
            }
        };
        fill(&mut mx, "t", "k", 631, "s", 369);
        fill(&mut mx, "ŋ", "n", 558, "l", 442);
        fill(&mut mx, "l", "j", 550, "d", 450);
        fill(&mut mx, "s", "ʃ", 511, "t", 489);
        let tsv = category_rates_tsv(&category_rates(&mx, inv()));
        assert!(tsv.contains("stop\t1000\t63.1\t"));
        assert!(tsv.contains("nasal\t1000\t55.8\t"));
        assert!(tsv.contains("approximant\t1000\t55.0\t"));
        assert!(tsv.contains("fricative\t1000\t51.1\t"));
    }
}
