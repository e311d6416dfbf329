//! Minimal CHAT transcript reader: headers, time-aligned main tiers of child
//! speakers and their `%pho` / `%xpho` phonetic tiers.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "FR")]
    Fr,
    #[serde(rename = "PT")]
    Pt,
    #[serde(rename = "DE")]
    De,
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "multi")]
    Multi,
}

impl Language {
    /// Maps an ISO 639 code as used in `@Languages` / `@ID`.
    pub fn from_code(code: &str) -> Option<Self> {
        match code.trim().to_ascii_lowercase().as_str() {
            "eng" | "en" => Some(Language::En),
            "fra" | "fre" | "fr" => Some(Language::Fr),
            "por" | "pt" => Some(Language::Pt),
            "deu" | "ger" | "de" => Some(Language::De),
            "spa" | "es" => Some(Language::Es),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Fr => "FR",
            Language::Pt => "PT",
            Language::De => "DE",
            Language::Es => "ES",
            Language::Multi => "multi",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest record. Serialized as one JSON object per line with keys in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utt_id: String,
    pub child_id: String,
    pub age_months: Option<f64>,
    pub language: Language,
    pub onset_ms: u64,
    pub offset_ms: u64,
    pub surface_pho: String,
    pub target_phones: Vec<String>,
    pub corpus_id: String,
    pub file_id: String,
}

impl Utterance {
    pub fn duration_ms(&self) -> u64 {
        self.offset_ms.saturating_sub(self.onset_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub code: String,
    pub name: Option<String>,
    pub role: String,
    pub age_months: Option<f64>,
}

impl Participant {
    pub fn is_child(&self) -> bool {
        matches!(self.role.as_str(), "Target_Child" | "Child")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFile {
    pub corpus_id: String,
    pub file_id: String,
    pub language: Language,
    pub participants: Vec<Participant>,
}

/// Recoverable problems found while parsing; the offending line is skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ParseNotice {
    /// No `%pho` / `%xpho` tier anywhere in the file.
    FileSkipped,
    MalformedHeader { line: usize },
    MalformedTimestamp { line: usize },
    MalformedAge { line: usize },
    /// A phonetic tier without a usable time-stamped main tier.
    OrphanPhoTier { line: usize },
    /// More than one child-role speaker; each gets its own child id.
    MultipleChildren { codes: Vec<String> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgeError {
    #[error("malformed age {0:?}")]
    MalformedAge(String),
}

/// CHAT `Y;MM.DD` age to months. Empty input means unknown.
pub fn parse_age(field: &str) -> Result<Option<f64>, AgeError> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let bad = || AgeError::MalformedAge(field.to_string());
    let (years, rest) = field.split_once(';').ok_or_else(bad)?;
    let years: u32 = years.parse().map_err(|_| bad())?;
    let (months, days) = match rest.split_once('.') {
        Some((m, d)) => (m, d),
        None => (rest, ""),
    };
    let months: u32 = if months.is_empty() { 0 } else { months.parse().map_err(|_| bad())? };
    let days: u32 = if days.is_empty() { 0 } else { days.parse().map_err(|_| bad())? };
    if months >= 12 || days > 31 {
        return Err(bad());
    }
    Ok(Some(years as f64 * 12.0 + months as f64 + days as f64 / 30.44))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhoTierPreference {
    /// `%pho` (actual production) wins when both tiers are present.
    Pho,
    Xpho,
}

#[derive(Debug, Clone)]
pub struct ParsedTranscript {
    pub file: TranscriptFile,
    pub utterances: Vec<Utterance>,
    pub notices: Vec<ParseNotice>,
}

struct PendingLine {
    line: usize,
    speaker: String,
    bullet: Option<Result<(u64, u64), ()>>,
    pho: Option<(String, Option<Result<(u64, u64), ()>>, usize)>,
    xpho: Option<(String, Option<Result<(u64, u64), ()>>, usize)>,
}

/// Parses CHAT text with the default `%pho`-first preference.
pub fn parse_chat(bytes: &[u8], corpus_id: &str, file_id: &str) -> ParsedTranscript {
    parse_chat_with(bytes, corpus_id, file_id, PhoTierPreference::Pho)
}

pub fn parse_chat_with(
    bytes: &[u8],
    corpus_id: &str,
    file_id: &str,
    preference: PhoTierPreference,
) -> ParsedTranscript {
    let text = String::from_utf8_lossy(bytes);
    let lines = logical_lines(&text);
    let mut notices = Vec::new();
    let mut participants: Vec<Participant> = Vec::new();
    let mut languages: Vec<Language> = Vec::new();
    let mut pending: Vec<PendingLine> = Vec::new();
    let mut saw_pho = false;

    for (line_no, line) in lines {
        if let Some(rest) = line.strip_prefix('@') {
            let (key, value) = match rest.split_once(':') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => (rest.trim(), ""),
            };
            match key {
                "Participants" => {
                    for entry in value.split(',') {
                        let parts: Vec<&str> = entry.split_whitespace().collect();
                        match parts.as_slice() {
                            [code, role] => participants.push(Participant {
                                code: code.to_string(),
                                name: None,
                                role: role.to_string(),
                                age_months: None,
                            }),
                            [code, name @ .., role] if !name.is_empty() => participants.push(Participant {
                                code: code.to_string(),
                                name: Some(name.join(" ")),
                                role: role.to_string(),
                                age_months: None,
                            }),
                            _ => notices.push(ParseNotice::MalformedHeader { line: line_no }),
                        }
                    }
                }
                "Languages" => {
                    languages = value
                        .split([',', ' '])
                        .filter(|s| !s.is_empty())
                        .filter_map(Language::from_code)
                        .collect();
                    if languages.is_empty() {
                        notices.push(ParseNotice::MalformedHeader { line: line_no });
                    }
                }
                "ID" => {
                    let fields: Vec<&str> = value.split('|').collect();
                    if fields.len() < 4 {
                        notices.push(ParseNotice::MalformedHeader { line: line_no });
                        continue;
                    }
                    let code = fields[2].trim();
                    let age = match parse_age(fields[3]) {
                        Ok(a) => a,
                        Err(_) => {
                            notices.push(ParseNotice::MalformedAge { line: line_no });
                            None
                        }
                    };
                    let role = fields.get(7).map(|r| r.trim()).unwrap_or_default();
                    match participants.iter_mut().find(|p| p.code == code) {
                        Some(p) => {
                            p.age_months = age;
                            if p.role.is_empty() && !role.is_empty() {
                                p.role = role.to_string();
                            }
                        }
                        None => participants.push(Participant {
                            code: code.to_string(),
                            name: None,
                            role: role.to_string(),
                            age_months: age,
                        }),
                    }
                    if languages.is_empty() {
                        if let Some(l) = Language::from_code(fields[0]) {
                            languages.push(l);
                        }
                    }
                }
                _ => {}
            }
        } else if let Some(rest) = line.strip_prefix('*') {
            let Some((speaker, content)) = rest.split_once(':') else {
                notices.push(ParseNotice::MalformedHeader { line: line_no });
                continue;
            };
            pending.push(PendingLine {
                line: line_no,
                speaker: speaker.trim().to_string(),
                bullet: extract_bullet(content).1,
                pho: None,
                xpho: None,
            });
        } else if let Some(rest) = line.strip_prefix('%') {
            let Some((tier, content)) = rest.split_once(':') else {
                continue;
            };
            let tier = tier.trim();
            if tier != "pho" && tier != "xpho" {
                continue;
            }
            saw_pho = true;
            let Some(main) = pending.last_mut() else {
                notices.push(ParseNotice::OrphanPhoTier { line: line_no });
                continue;
            };
            let (text, bullet) = extract_bullet(content);
            let slot = if tier == "pho" { &mut main.pho } else { &mut main.xpho };
            *slot = Some((clean_pho(&text), bullet, line_no));
        }
    }

    let language = match languages.as_slice() {
        [one] => *one,
        [] => {
            notices.push(ParseNotice::MalformedHeader { line: 0 });
            Language::Multi
        }
        many if many.iter().all(|l| *l == many[0]) => many[0],
        _ => Language::Multi,
    };
    let file = TranscriptFile {
        corpus_id: corpus_id.to_string(),
        file_id: file_id.to_string(),
        language,
        participants,
    };

    if !saw_pho {
        notices.push(ParseNotice::FileSkipped);
        return ParsedTranscript {
            file,
            utterances: Vec::new(),
            notices,
        };
    }

    let children: Vec<&Participant> = file.participants.iter().filter(|p| p.is_child()).collect();
    if children.len() > 1 {
        notices.push(ParseNotice::MultipleChildren {
            codes: children.iter().map(|p| p.code.clone()).collect(),
        });
    }
    let child_ids: BTreeMap<&str, (String, Option<f64>)> = children
        .iter()
        .map(|p| {
            let who = p.name.as_deref().unwrap_or(&p.code);
            (p.code.as_str(), (format!("{corpus_id}/{who}"), p.age_months))
        })
        .collect();

    let mut utterances = Vec::new();
    for main in pending {
        let Some((child_id, age)) = child_ids.get(main.speaker.as_str()) else {
            continue;
        };
        let tier = match preference {
            PhoTierPreference::Pho => main.pho.or(main.xpho),
            PhoTierPreference::Xpho => main.xpho.or(main.pho),
        };
        let Some((surface, pho_bullet, pho_line)) = tier else {
            continue;
        };
        let times = match pho_bullet.or(main.bullet) {
            Some(Ok(t)) => t,
            Some(Err(())) => {
                notices.push(ParseNotice::MalformedTimestamp { line: main.line });
                continue;
            }
            None => {
                notices.push(ParseNotice::OrphanPhoTier { line: pho_line });
                continue;
            }
        };
        utterances.push(Utterance {
            utt_id: format!("{corpus_id}/{file_id}/{:04}", utterances.len()),
            child_id: child_id.clone(),
            age_months: *age,
            language,
            onset_ms: times.0,
            offset_ms: times.1,
            surface_pho: surface,
            target_phones: Vec::new(),
            corpus_id: corpus_id.to_string(),
            file_id: file_id.to_string(),
        });
    }
    ParsedTranscript {
        file,
        utterances,
        notices,
    }
}

/// Joins tab-indented continuation lines onto their tier; returns 1-based
/// line numbers of the tier start.
fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim_end_matches('\r');
        if raw.starts_with('\t') {
            if let Some(last) = out.last_mut() {
                last.1.push(' ');
                last.1.push_str(raw.trim());
                continue;
            }
        }
        if raw.trim().is_empty() {
            continue;
        }
        out.push((i + 1, raw.to_string()));
    }
    out
}

/// Splits off a `•onset_offset•` (or NAK-delimited) media bullet.
fn extract_bullet(content: &str) -> (String, Option<Result<(u64, u64), ()>>) {
    let is_delim = |c: char| c == '\u{2022}' || c == '\u{15}';
    let Some(start) = content.find(is_delim) else {
        return (content.trim().to_string(), None);
    };
    let after = &content[start..];
    let delim_len = after.chars().next().map_or(1, char::len_utf8);
    let inner_start = start + delim_len;
    let Some(end_rel) = content[inner_start..].find(is_delim) else {
        return (content[..start].trim().to_string(), Some(Err(())));
    };
    let inner = &content[inner_start..inner_start + end_rel];
    let end_len = content[inner_start + end_rel..].chars().next().map_or(1, char::len_utf8);
    let mut text = content[..start].to_string();
    text.push_str(&content[inner_start + end_rel + end_len..]);
    let parsed = inner
        .split_once('_')
        .and_then(|(a, b)| Some((a.trim().parse::<u64>().ok()?, b.trim().parse::<u64>().ok()?)))
        .filter(|(a, b)| a < b)
        .ok_or(());
    (text.trim().to_string(), Some(parsed))
}

/// Drops utterance terminators from a phonetic tier.
fn clean_pho(s: &str) -> String {
    s.split_whitespace()
        .filter(|tok| !matches!(*tok, "." | "?" | "!" | "+..." | "+/." | "+//." | "+..?"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Writes records as line-delimited JSON.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, records: &[T]) -> Result<(), ManifestError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| ManifestError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>, ManifestError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ManifestError::Json { line: i + 1, source: e })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "@UTF8\n@Begin\n@Languages:\teng\n\
@Participants:\tCHI Alex Target_Child, MOT Mother Mother\n\
@ID:\teng|Demo|CHI|1;06.00|female|||Target_Child|||\n\
@ID:\teng|Demo|MOT|||||Mother|||\n\
*CHI:\tba ba . \u{2022}1000_1800\u{2022}\n%pho:\tbaba .\n\
*MOT:\tyes ball . \u{2022}2000_2600\u{2022}\n%pho:\tjɛs bɔl\n\
*CHI:\tmama . \u{2022}3000_3500\u{2022}\n%xpho:\tmama\n%pho:\tmæmə\n\
*CHI:\tuh . \n%pho:\tʌ\n@End\n";

    #[test]
    fn fixture_yields_two_child_utterances() {
        let parsed = parse_chat(FIXTURE.as_bytes(), "Demo", "f1");
        assert_eq!(parsed.file.language, Language::En);
        let u = &parsed.utterances;
        assert_eq!(u.len(), 2);
        assert_eq!((u[0].onset_ms, u[0].offset_ms), (1000, 1800));
        assert_eq!(u[0].surface_pho, "baba");
        assert_eq!((u[1].onset_ms, u[1].offset_ms), (3000, 3500));
        assert_eq!(u[1].surface_pho, "mæmə", "%pho wins over %xpho");
        assert_eq!(u[0].child_id, "Demo/Alex");
        assert_eq!(u[0].age_months, Some(18.0));
        assert!(parsed.notices.contains(&ParseNotice::OrphanPhoTier { line: 15 }));
    }

    #[test]
    fn xpho_preference_is_configurable() {
        let parsed = parse_chat_with(FIXTURE.as_bytes(), "Demo", "f1", PhoTierPreference::Xpho);
        assert_eq!(parsed.utterances[1].surface_pho, "mama");
    }

    #[test]
    fn file_without_pho_is_skipped() {
        let text = "@Participants:\tCHI Target_Child\n*CHI:\tba . \u{2022}0_500\u{2022}\n";
        let parsed = parse_chat(text.as_bytes(), "c", "f");
        assert!(parsed.utterances.is_empty());
        assert!(parsed.notices.contains(&ParseNotice::FileSkipped));
    }

    #[test]
    fn pho_bullet_overrides_main_tier() {
        let text = "@Participants:\tCHI Target_Child\n*CHI:\tba . \u{2022}0_500\u{2022}\n%pho:\tba \u{2022}100_400\u{2022}\n";
        let parsed = parse_chat(text.as_bytes(), "c", "f");
        assert_eq!((parsed.utterances[0].onset_ms, parsed.utterances[0].offset_ms), (100, 400));
    }

    #[test]
    fn nak_bullets_and_bad_timestamps() {
        let text = "@Participants:\tCHI Target_Child\n*CHI:\tba . \u{15}20_90\u{15}\n%pho:\tba\n*CHI:\tda . \u{15}90_20\u{15}\n%pho:\tda\n";
        let parsed = parse_chat(text.as_bytes(), "c", "f");
        assert_eq!(parsed.utterances.len(), 1);
        assert_eq!(parsed.utterances[0].onset_ms, 20);
        assert!(parsed.notices.contains(&ParseNotice::MalformedTimestamp { line: 4 }));
    }

    #[test]
    fn continuation_lines_are_joined() {
        let text = "@Participants:\tCHI Target_Child\n*CHI:\tba\n\tba . \u{2022}0_500\u{2022}\n%pho:\tba\n\tba\n";
        let parsed = parse_chat(text.as_bytes(), "c", "f");
        assert_eq!(parsed.utterances[0].surface_pho, "ba ba");
    }

    #[test]
    fn multiple_children_get_separate_ids() {
        let text = "@Participants:\tCHI Target_Child, BRO Paul Child\n\
*CHI:\tba . \u{2022}0_500\u{2022}\n%pho:\tba\n*BRO:\tdo . \u{2022}600_900\u{2022}\n%pho:\tdo\n";
        let parsed = parse_chat(text.as_bytes(), "c", "f");
        let ids: Vec<_> = parsed.utterances.iter().map(|u| u.child_id.as_str()).collect();
        assert_eq!(ids, ["c/CHI", "c/Paul"]);
        assert!(matches!(parsed.notices.last(), Some(ParseNotice::MultipleChildren { .. })));
    }

    #[test]
    fn age_examples() {
        assert_eq!(parse_age("2;06.00").unwrap(), Some(30.0));
        assert_eq!(parse_age("").unwrap(), None);
        let a = parse_age("1;00.15").unwrap().unwrap();
        assert!((a - (12.0 + 15.0 / 30.44)).abs() < 1e-12);
        assert!((a - 12.4927).abs() < 1e-4);
        assert_eq!(parse_age("3;").unwrap(), Some(36.0));
        assert!(parse_age("abc").is_err());
        assert!(parse_age("1;13.00").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let parsed = parse_chat(FIXTURE.as_bytes(), "Demo", "f1");
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &parsed.utterances).unwrap();
        let back: Vec<Utterance> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, parsed.utterances);
        let first = String::from_utf8(buf).unwrap();
        assert!(first.starts_with("{\"utt_id\":\"Demo/f1/0000\",\"child_id\":"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
                let _ = parse_chat(&bytes, "c", "f");
            }

            #[test]
            fn never_panics_on_chat_like_text(lines in proptest::collection::vec(
                prop_oneof![
                    Just("@Participants:\tCHI Target_Child".to_string()),
                    Just("@ID:\teng|c|CHI|1;02.03|||".to_string()),
                    "\\*CHI:\t[a-z •_0-9\u{15}]{0,20}",
                    "%x?pho:\t[a-zɪʃ •_0-9]{0,20}",
                    "\t[a-z ]{0,10}",
                    "@[A-Za-z]{0,8}:?[ |;0-9.]{0,12}",
                ], 0..20)) {
                let text = lines.join("\n");
                let parsed = parse_chat(text.as_bytes(), "c", "f");
                for u in parsed.utterances {
                    prop_assert!(u.offset_ms > u.onset_ms);
                }
            }
        }
    }
}
