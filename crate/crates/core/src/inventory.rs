//! IPA segments, ternary phonological feature vectors and the mapping of
//! arbitrary surface phones onto a fixed broad target inventory.
//!
//! The feature table, diacritic deltas and the default 57-phone inventory
//! ship as tab-separated data files embedded at compile time. Alternative
//! inventories can be loaded from the same format at runtime.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

const DEFAULT_FEATURES: &str = include_str!("../data/features.tsv");
const DEFAULT_DIACRITICS: &str = include_str!("../data/diacritics.tsv");
const DEFAULT_INVENTORY: &str = include_str!("../data/inventory.tsv");

/// Identifier reported by the embedded default inventory.
pub const DEFAULT_INVENTORY_VERSION: &str = "union-en-fr-pt-de-es-57.v1";

/// Tie bars joining two bases into one segment (affricates, diphthongs).
const TIE_BARS: [char; 2] = ['\u{0361}', '\u{035C}'];

/// Stress, syllable and linking marks that carry no segmental content.
const PROSODIC_MARKS: [char; 7] = ['ˈ', 'ˌ', '.', '|', '‖', '‿', '\''];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InventoryError {
    #[error("unknown symbol {symbol:?} at position {position}")]
    UnknownSymbol { position: usize, symbol: char },
    #[error("modifier {symbol:?} at position {position} has no base to attach to")]
    DanglingModifier { position: usize, symbol: char },
    #[error("feature vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// One ternary feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ternary {
    Plus,
    Minus,
    Zero,
}

impl Ternary {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "+" => Some(Ternary::Plus),
            "-" => Some(Ternary::Minus),
            "0" => Some(Ternary::Zero),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Ternary::Plus => '+',
            Ternary::Minus => '-',
            Ternary::Zero => '0',
        }
    }

    /// Mismatch cost in half units: 0 equal, 1 against unspecified, 2 for a full flip.
    fn half_cost(self, other: Ternary) -> u32 {
        match (self, other) {
            (a, b) if a == b => 0,
            (Ternary::Zero, _) | (_, Ternary::Zero) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector(Vec<Ternary>);

impl FeatureVector {
    pub fn new(values: Vec<Ternary>) -> Self {
        FeatureVector(values)
    }

    pub fn values(&self) -> &[Ternary] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, idx: usize) -> Ternary {
        self.0[idx]
    }

    fn set(&mut self, idx: usize, v: Ternary) {
        self.0[idx] = v;
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.0 {
            write!(f, "{}", v.as_char())?;
        }
        Ok(())
    }
}

/// Feature edit distance: a full +/- flip costs 1, a difference against an
/// unspecified value costs 0.5.
pub fn feature_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64, InventoryError> {
    Ok(feature_half_distance(a, b)? as f64 / 2.0)
}

fn feature_half_distance(a: &FeatureVector, b: &FeatureVector) -> Result<u32, InventoryError> {
    if a.len() != b.len() {
        return Err(InventoryError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x.half_cost(*y)).sum())
}

/// One IPA segment: a base symbol (possibly tie-barred) plus its modifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phone {
    pub base: String,
    pub diacritics: Vec<char>,
    pub features: FeatureVector,
}

impl Phone {
    pub fn symbol(&self) -> String {
        let mut s = self.base.clone();
        s.extend(self.diacritics.iter());
        s
    }

    /// Vowel iff the segment is syllabic.
    pub fn class(&self, table: &FeatureTable) -> PhoneClass {
        match table.index_of("syl").map(|i| self.features.get(i)) {
            Some(Ternary::Plus) => PhoneClass::Vowel,
            _ => PhoneClass::Consonant,
        }
    }
}

impl fmt::Display for Phone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol())
    }
}

#[derive(Debug, Clone)]
struct Diacritic {
    name: String,
    changes: Vec<(usize, Ternary)>,
}

/// Base symbol feature values and diacritic feature deltas.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    names: Vec<String>,
    bases: HashMap<String, FeatureVector>,
    diacritics: HashMap<char, Diacritic>,
}

impl FeatureTable {
    /// The embedded 24-feature table.
    pub fn default_table() -> &'static FeatureTable {
        static TABLE: OnceLock<FeatureTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            FeatureTable::parse(DEFAULT_FEATURES, DEFAULT_DIACRITICS)
                .expect("embedded feature table is well formed")
        })
    }

    /// Parses a base table (`symbol` then one `+`/`-`/`0` column per feature)
    /// and a diacritic table (`symbol`, `name`, space-separated `feat=value` changes).
    pub fn parse(features_tsv: &str, diacritics_tsv: &str) -> Result<Self, InventoryError> {
        let mut lines = features_tsv.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(InventoryError::Table {
            line: 1,
            message: "missing header".into(),
        })?;
        let names: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
        let mut bases = HashMap::new();
        for (n, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            let vector = parse_feature_columns(&cols[1..], names.len(), n + 1)?;
            bases.insert(normalize_tie(cols[0]), vector);
        }
        let mut table = FeatureTable {
            names,
            bases,
            diacritics: HashMap::new(),
        };
        for (n, line) in diacritics_tsv.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let err = |message: String| InventoryError::Table { line: n + 1, message };
            let mut chars = cols[0].chars();
            let symbol = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => return Err(err(format!("diacritic {:?} is not one codepoint", cols[0]))),
            };
            let name = cols.get(1).copied().unwrap_or_default().to_string();
            let mut changes = Vec::new();
            for change in cols.get(2).copied().unwrap_or_default().split_whitespace() {
                let (feat, value) = change
                    .split_once('=')
                    .ok_or_else(|| err(format!("bad change {change:?}")))?;
                let idx = table
                    .index_of(feat)
                    .ok_or_else(|| err(format!("unknown feature {feat:?}")))?;
                let value =
                    Ternary::parse(value).ok_or_else(|| err(format!("bad value {value:?}")))?;
                changes.push((idx, value));
            }
            table.diacritics.insert(symbol, Diacritic { name, changes });
        }
        Ok(table)
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn base_features(&self, base: &str) -> Option<&FeatureVector> {
        self.bases.get(&normalize_tie(base))
    }

    pub fn is_base(&self, c: char) -> bool {
        let mut buf = [0u8; 4];
        self.bases.contains_key(c.encode_utf8(&mut buf) as &str)
    }

    pub fn is_diacritic(&self, c: char) -> bool {
        self.diacritics.contains_key(&c)
    }

    pub fn diacritic_name(&self, c: char) -> Option<&str> {
        self.diacritics.get(&c).map(|d| d.name.as_str())
    }

    /// Single-codepoint base symbols, sorted.
    pub fn simple_bases(&self) -> Vec<char> {
        let mut out: Vec<char> = self
            .bases
            .keys()
            .filter_map(|k| {
                let mut it = k.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Diacritic codepoints, sorted.
    pub fn diacritic_symbols(&self) -> Vec<char> {
        let mut out: Vec<char> = self.diacritics.keys().copied().collect();
        out.sort_unstable();
        out
    }

    /// Features for a (possibly tie-barred) base, falling back to merging the
    /// components when the combination is not listed: positions where the
    /// components disagree become unspecified.
    fn compose_base(&self, parts: &[char]) -> Option<FeatureVector> {
        let joined: String = join_tied(parts);
        if let Some(v) = self.bases.get(&joined) {
            return Some(v.clone());
        }
        let mut iter = parts.iter().map(|c| self.bases.get(&c.to_string()));
        let mut merged = iter.next()??.clone();
        for next in iter {
            let next = next?;
            for i in 0..merged.len() {
                if merged.get(i) != next.get(i) {
                    merged.set(i, Ternary::Zero);
                }
            }
        }
        Some(merged)
    }

    fn apply_diacritics(&self, features: &mut FeatureVector, diacritics: &[char]) {
        for d in diacritics {
            if let Some(dia) = self.diacritics.get(d) {
                for &(idx, value) in &dia.changes {
                    features.set(idx, value);
                }
            }
        }
    }

    /// Builds a phone from a base and modifiers, applying diacritic deltas.
    pub fn phone(&self, base: &str, diacritics: &[char]) -> Option<Phone> {
        let parts: Vec<char> = base.chars().filter(|c| !TIE_BARS.contains(c)).collect();
        let mut features = self.compose_base(&parts)?;
        self.apply_diacritics(&mut features, diacritics);
        Some(Phone {
            base: join_tied(&parts),
            diacritics: diacritics.to_vec(),
            features,
        })
    }

    /// Segments an IPA string into base+modifier groups. Whitespace and
    /// prosodic marks separate segments; tie-barred bases form one segment.
    pub fn tokenize(&self, s: &str) -> Result<Vec<Phone>, InventoryError> {
        let chars: Vec<char> = expand_precomposed(s);
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() || PROSODIC_MARKS.contains(&c) {
                i += 1;
                continue;
            }
            if self.is_diacritic(c) || TIE_BARS.contains(&c) {
                return Err(InventoryError::DanglingModifier { position: i, symbol: c });
            }
            if !self.is_base(c) {
                return Err(InventoryError::UnknownSymbol { position: i, symbol: c });
            }
            let mut parts = vec![c];
            let mut diacritics = Vec::new();
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                if TIE_BARS.contains(&d) {
                    match chars.get(i + 1) {
                        Some(&next) if self.is_base(next) => {
                            parts.push(next);
                            i += 2;
                        }
                        Some(&next) => {
                            return Err(InventoryError::UnknownSymbol {
                                position: i + 1,
                                symbol: next,
                            })
                        }
                        None => return Err(InventoryError::DanglingModifier { position: i, symbol: d }),
                    }
                } else if self.is_diacritic(d) {
                    diacritics.push(d);
                    i += 1;
                } else {
                    break;
                }
            }
            let mut features = self
                .compose_base(&parts)
                .expect("every component was checked to be a base");
            self.apply_diacritics(&mut features, &diacritics);
            out.push(Phone {
                base: join_tied(&parts),
                diacritics,
                features,
            });
        }
        Ok(out)
    }
}

fn parse_feature_columns(cols: &[&str], width: usize, line: usize) -> Result<FeatureVector, InventoryError> {
    if cols.len() != width {
        return Err(InventoryError::Table {
            line,
            message: format!("expected {width} feature columns, found {}", cols.len()),
        });
    }
    cols.iter()
        .map(|c| {
            Ternary::parse(c.trim()).ok_or_else(|| InventoryError::Table {
                line,
                message: format!("bad feature value {c:?}"),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(FeatureVector)
}

fn join_tied(parts: &[char]) -> String {
    let mut s = String::new();
    for (i, c) in parts.iter().enumerate() {
        if i > 0 {
            s.push(TIE_BARS[0]);
        }
        s.push(*c);
    }
    s
}

fn normalize_tie(s: &str) -> String {
    s.chars()
        .map(|c| if c == TIE_BARS[1] { TIE_BARS[0] } else { c })
        .collect()
}

/// Splits precomposed accented vowels into base + combining mark so they
/// tokenize like their decomposed spelling.
fn expand_precomposed(s: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(s.len());
    for c in s.chars() {
        let pair = match c {
            'ã' => Some(('a', '\u{0303}')),
            'ẽ' => Some(('e', '\u{0303}')),
            'ĩ' => Some(('i', '\u{0303}')),
            'õ' => Some(('o', '\u{0303}')),
            'ũ' => Some(('u', '\u{0303}')),
            'ỹ' => Some(('y', '\u{0303}')),
            'á' => Some(('a', '\u{0301}')),
            'é' => Some(('e', '\u{0301}')),
            'í' => Some(('i', '\u{0301}')),
            'ó' => Some(('o', '\u{0301}')),
            'ú' => Some(('u', '\u{0301}')),
            'à' => Some(('a', '\u{0300}')),
            'è' => Some(('e', '\u{0300}')),
            'ò' => Some(('o', '\u{0300}')),
            'ä' => Some(('a', '\u{0308}')),
            'ë' => Some(('e', '\u{0308}')),
            'ï' => Some(('i', '\u{0308}')),
            'ö' => Some(('o', '\u{0308}')),
            'ü' => Some(('u', '\u{0308}')),
            _ => None,
        };
        match pair {
            Some((b, m)) => {
                out.push(b);
                out.push(m);
            }
            None => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhoneClass {
    Consonant,
    Vowel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Height {
    Close,
    Mid,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Manner {
    Stop,
    Nasal,
    Fricative,
    Affricate,
    Approximant,
    TrillTap,
}

impl Height {
    pub const ALL: [Height; 3] = [Height::Close, Height::Mid, Height::Open];

    pub fn name(self) -> &'static str {
        match self {
            Height::Close => "close",
            Height::Mid => "mid",
            Height::Open => "open",
        }
    }
}

impl Manner {
    pub const ALL: [Manner; 6] = [
        Manner::Stop,
        Manner::Nasal,
        Manner::Fricative,
        Manner::Affricate,
        Manner::Approximant,
        Manner::TrillTap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Manner::Stop => "stop",
            Manner::Nasal => "nasal",
            Manner::Fricative => "fricative",
            Manner::Affricate => "affricate",
            Manner::Approximant => "approximant",
            Manner::TrillTap => "trill-tap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetPhone {
    pub symbol: Phone,
    pub class: PhoneClass,
    pub height: Option<Height>,
    pub manner: Option<Manner>,
    pub place: String,
    pub voiced: bool,
    pub nasalized: bool,
}

impl TargetPhone {
    pub fn symbol_str(&self) -> String {
        self.symbol.symbol()
    }
}

/// A fixed set of broad target phones. The position of a phone in the list is
/// its label index; the CTC blank sits one past the last phone.
#[derive(Debug, Clone)]
pub struct TargetInventory {
    phones: Vec<TargetPhone>,
    version: String,
    by_symbol: HashMap<String, usize>,
}

impl TargetInventory {
    /// The embedded 30-consonant, 27-vowel inventory.
    pub fn default_inventory() -> &'static TargetInventory {
        static INV: OnceLock<TargetInventory> = OnceLock::new();
        INV.get_or_init(|| {
            TargetInventory::parse(DEFAULT_INVENTORY, FeatureTable::default_table(), DEFAULT_INVENTORY_VERSION)
                .expect("embedded inventory is well formed")
        })
    }

    /// Parses an inventory TSV: `symbol class height manner place voiced nasalized`
    /// followed by one feature column per table feature. Metadata cells use `-`
    /// when not applicable.
    pub fn parse(tsv: &str, table: &FeatureTable, version: &str) -> Result<Self, InventoryError> {
        let mut phones = Vec::new();
        for (n, line) in tsv.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = n + 1;
            let err = |message: String| InventoryError::Table { line: line_no, message };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 + table.width() {
                return Err(err(format!(
                    "expected {} columns, found {}",
                    7 + table.width(),
                    cols.len()
                )));
            }
            let features = parse_feature_columns(&cols[7..], table.width(), line_no)?;
            let mut tokens = table
                .tokenize(cols[0])
                .map_err(|e| err(format!("symbol {:?}: {e}", cols[0])))?;
            if tokens.len() != 1 {
                return Err(err(format!("symbol {:?} is not a single segment", cols[0])));
            }
            let mut symbol = tokens.remove(0);
            symbol.features = features;
            let class = match cols[1] {
                "vowel" => PhoneClass::Vowel,
                "consonant" => PhoneClass::Consonant,
                other => return Err(err(format!("bad class {other:?}"))),
            };
            let height = match cols[2] {
                "-" => None,
                "close" => Some(Height::Close),
                "mid" => Some(Height::Mid),
                "open" => Some(Height::Open),
                other => return Err(err(format!("bad height {other:?}"))),
            };
            let manner = match cols[3] {
                "-" => None,
                other => Some(
                    Manner::ALL
                        .into_iter()
                        .find(|m| m.name() == other)
                        .ok_or_else(|| err(format!("bad manner {other:?}")))?,
                ),
            };
            match class {
                PhoneClass::Vowel if height.is_none() || manner.is_some() => {
                    return Err(err("vowels carry a height and no manner".into()))
                }
                PhoneClass::Consonant if manner.is_none() || height.is_some() => {
                    return Err(err("consonants carry a manner and no height".into()))
                }
                _ => {}
            }
            let yes_no = |s: &str| match s {
                "yes" => Ok(true),
                "no" => Ok(false),
                other => Err(err(format!("expected yes/no, found {other:?}"))),
            };
            phones.push(TargetPhone {
                symbol,
                class,
                height,
                manner,
                place: cols[4].to_string(),
                voiced: yes_no(cols[5])?,
                nasalized: yes_no(cols[6])?,
            });
        }
        Self::from_phones(phones, version)
    }

    pub fn from_phones(phones: Vec<TargetPhone>, version: &str) -> Result<Self, InventoryError> {
        let mut by_symbol = HashMap::new();
        for (i, p) in phones.iter().enumerate() {
            if by_symbol.insert(p.symbol_str(), i).is_some() {
                return Err(InventoryError::Table {
                    line: i + 2,
                    message: format!("duplicate symbol {}", p.symbol_str()),
                });
            }
        }
        Ok(TargetInventory {
            phones,
            version: version.to_string(),
            by_symbol,
        })
    }

    pub fn to_tsv(&self, table: &FeatureTable) -> String {
        let mut out = String::from("symbol\tclass\theight\tmanner\tplace\tvoiced\tnasalized");
        for n in table.names() {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for p in &self.phones {
            let class = match p.class {
                PhoneClass::Vowel => "vowel",
                PhoneClass::Consonant => "consonant",
            };
            let yn = |b: bool| if b { "yes" } else { "no" };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.symbol_str(),
                class,
                p.height.map_or("-", Height::name),
                p.manner.map_or("-", Manner::name),
                p.place,
                yn(p.voiced),
                yn(p.nasalized)
            ));
            for v in p.symbol.features.values() {
                out.push('\t');
                out.push(v.as_char());
            }
            out.push('\n');
        }
        out
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn phones(&self) -> &[TargetPhone] {
        &self.phones
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    /// Label index of the CTC blank.
    pub fn blank(&self) -> usize {
        self.phones.len()
    }

    pub fn get(&self, idx: usize) -> Option<&TargetPhone> {
        self.phones.get(idx)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.by_symbol.get(symbol).copied()
    }

    /// Closest target by feature distance. Ties go to a candidate of the same
    /// class, then to the candidate with fewer diacritics, then to the lower
    /// symbol in codepoint order (independent of inventory ordering).
    pub fn map_to_target(&self, phone: &Phone, table: &FeatureTable) -> (usize, f64) {
        let class = phone.class(table);
        let mut best: Option<(usize, u32)> = None;
        for (i, cand) in self.phones.iter().enumerate() {
            let d = feature_half_distance(&phone.features, &cand.symbol.features)
                .unwrap_or(u32::MAX);
            let better = match best {
                None => true,
                Some((j, bd)) => match d.cmp(&bd) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => self.tie_break(i, j, class) == Ordering::Less,
                },
            };
            if better {
                best = Some((i, d));
            }
        }
        let (idx, half) = best.expect("inventory is nonempty");
        (idx, half as f64 / 2.0)
    }

    fn tie_break(&self, a: usize, b: usize, class: PhoneClass) -> Ordering {
        let (pa, pb) = (&self.phones[a], &self.phones[b]);
        (pa.class != class)
            .cmp(&(pb.class != class))
            .then(pa.symbol.diacritics.len().cmp(&pb.symbol.diacritics.len()))
            .then_with(|| pa.symbol_str().cmp(&pb.symbol_str()))
    }

    /// Elementwise target mapping; length preserved.
    pub fn normalize_sequence(&self, phones: &[Phone], table: &FeatureTable) -> Vec<usize> {
        phones.iter().map(|p| self.map_to_target(p, table).0).collect()
    }

    /// Tokenizes and normalizes an IPA string to label indices.
    pub fn normalize_str(&self, s: &str, table: &FeatureTable) -> Result<Vec<usize>, InventoryError> {
        Ok(self.normalize_sequence(&table.tokenize(s)?, table))
    }

    pub fn symbols(&self, labels: &[usize]) -> Vec<String> {
        labels
            .iter()
            .map(|&i| self.phones.get(i).map_or_else(|| "?".to_string(), TargetPhone::symbol_str))
            .collect()
    }

    /// Returns a copy with phones reordered by `order` (a permutation of indices).
    pub fn permuted(&self, order: &[usize]) -> TargetInventory {
        let phones = order.iter().map(|&i| self.phones[i].clone()).collect();
        TargetInventory::from_phones(phones, &self.version).expect("permutation keeps symbols unique")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> &'static FeatureTable {
        FeatureTable::default_table()
    }

    fn inv() -> &'static TargetInventory {
        TargetInventory::default_inventory()
    }

    fn fv(v: &[i8]) -> FeatureVector {
        FeatureVector(
            v.iter()
                .map(|x| match x {
                    1 => Ternary::Plus,
                    -1 => Ternary::Minus,
                    _ => Ternary::Zero,
                })
                .collect(),
        )
    }

    #[test]
    fn table_has_24_features() {
        assert_eq!(table().width(), 24);
        for p in inv().phones() {
            assert_eq!(p.symbol.features.len(), 24);
        }
    }

    #[test]
    fn inventory_has_30_consonants_27_vowels() {
        let inv = inv();
        assert_eq!(inv.len(), 57);
        let vowels = inv.phones().iter().filter(|p| p.class == PhoneClass::Vowel).count();
        assert_eq!(vowels, 27);
        assert_eq!(inv.len() - vowels, 30);
        assert_eq!(inv.blank(), 57);
    }

    #[test]
    fn inventory_features_match_tokenized_symbols() {
        for p in inv().phones() {
            let tok = table().tokenize(&p.symbol_str()).unwrap();
            assert_eq!(tok.len(), 1);
            assert_eq!(tok[0].features, p.symbol.features, "{}", p.symbol_str());
        }
    }

    #[test]
    fn distance_examples() {
        let v = fv(&[1, -1, 0]);
        assert_eq!(feature_distance(&v, &v).unwrap(), 0.0);
        assert_eq!(feature_distance(&fv(&[1, -1]), &fv(&[-1, -1])).unwrap(), 1.0);
        assert_eq!(feature_distance(&fv(&[0, 1]), &fv(&[1, 1])).unwrap(), 0.5);
        assert!(matches!(
            feature_distance(&fv(&[1]), &fv(&[1, 1])),
            Err(InventoryError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn tokenize_basics() {
        assert!(table().tokenize("").unwrap().is_empty());
        let ba: Vec<String> = table().tokenize("ba").unwrap().iter().map(Phone::symbol).collect();
        assert_eq!(ba, ["b", "a"]);
        let toks = table().tokenize("t͡ʃʰaː").unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0].base, "t͡ʃ");
        assert_eq!(toks[0].diacritics, vec!['ʰ']);
        assert_eq!(toks[1].base, "a");
        assert_eq!(toks[1].diacritics, vec!['ː']);
    }

    #[test]
    fn tokenize_errors() {
        assert_eq!(
            table().tokenize("ba7"),
            Err(InventoryError::UnknownSymbol { position: 2, symbol: '7' })
        );
        assert!(matches!(
            table().tokenize(" ʰa"),
            Err(InventoryError::DanglingModifier { position: 1, .. })
        ));
    }

    #[test]
    fn precomposed_nasal_vowel_matches_decomposed() {
        let a = table().tokenize("ũ").unwrap();
        let b = table().tokenize("u\u{0303}").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untabled_tie_bar_merges_components() {
        let p = &table().tokenize("a͡ɪ").unwrap()[0];
        assert_eq!(p.base, "a͡ɪ");
        let hi = table().index_of("hi").unwrap();
        assert_eq!(p.features.get(hi), Ternary::Zero);
        assert_eq!(p.class(table()), PhoneClass::Vowel);
    }

    #[test]
    fn aspirated_t_and_long_a_map_to_plain_targets() {
        let th = &table().tokenize("tʰ").unwrap()[0];
        let (idx, d) = inv().map_to_target(th, table());
        assert_eq!(inv().get(idx).unwrap().symbol_str(), "t");
        assert_eq!(d, 1.0);
        let aa = &table().tokenize("aː").unwrap()[0];
        let (idx, d) = inv().map_to_target(aa, table());
        assert_eq!(inv().get(idx).unwrap().symbol_str(), "a");
        assert_eq!(d, 1.0);
    }

    #[test]
    fn tie_break_prefers_same_class() {
        // A syllabic nasal is equidistant-ish to vowels and nasals; mapping must be stable.
        let n = &table().tokenize("n̩").unwrap()[0];
        let first = inv().map_to_target(n, table());
        let second = inv().map_to_target(n, table());
        assert_eq!(first, second);
    }

    #[test]
    fn inventory_tsv_round_trip() {
        let tsv = inv().to_tsv(table());
        let back = TargetInventory::parse(&tsv, table(), "copy").unwrap();
        assert_eq!(back.phones(), inv().phones());
    }

    #[test]
    fn inventory_rejects_vowel_with_manner() {
        let mut tsv = inv().to_tsv(table());
        tsv = tsv.replacen("\tvowel\tclose\t-\t", "\tvowel\tclose\tstop\t", 1);
        assert!(TargetInventory::parse(&tsv, table(), "bad").is_err());
    }

    #[test]
    fn empty_and_fixpoint_normalization() {
        assert!(inv().normalize_sequence(&[], table()).is_empty());
        let all: String = inv().phones().iter().map(|p| p.symbol_str() + " ").collect();
        let labels = inv().normalize_str(&all, table()).unwrap();
        assert_eq!(labels, (0..57).collect::<Vec<_>>());
    }
}
