//! Phone labels, lexicon lookup and context expansion.
//!
//! Label times use 100 ns units so HTS-style label files load unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SILENCE: &str = "sil";
pub const BOUNDARY: &str = "#";

/// Label time units per second.
pub const UNITS_PER_SECOND: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("label file is empty")]
    EmptyLabelFile,
    #[error("malformed label at line {0}")]
    MalformedLine(usize),
    #[error("label times go backwards or overlap at line {0}")]
    NonMonotonicTimes(usize),
    #[error("gap between label spans at line {0}")]
    Gap(usize),
    #[error("word '{0}' is not in the lexicon")]
    OutOfVocabulary(String),
    #[error("empty phone sequence")]
    EmptySequence,
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("I/O error: {0}")]
    Io(String),
}

/// Declared phone inventory. `sil` is always a member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSet {
    phones: BTreeSet<String>,
}

impl PhoneSet {
    pub fn new<I, S>(phones: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut phones: BTreeSet<String> = phones.into_iter().map(Into::into).collect();
        phones.insert(SILENCE.to_string());
        Self { phones }
    }

    /// ARPAbet inventory without stress marks.
    pub fn arpabet() -> Self {
        Self::new([
            "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "eh", "er", "ey", "f", "g", "hh", "ih", "iy",
            "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p", "r", "s", "sh", "t", "th", "uh", "uw", "v", "w", "y",
            "z", "zh",
        ])
    }

    pub fn contains(&self, phone: &str) -> bool {
        self.phones.contains(phone)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.phones.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }
}

/// Where a phone sits inside its word (1-based position).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPosition {
    pub position: u8,
    pub length: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneLabel {
    pub phoneme: String,
    /// 100 ns units
    pub start: Option<u64>,
    pub end: Option<u64>,
    pub word: Option<WordPosition>,
}

impl PhoneLabel {
    pub fn untimed(phoneme: impl Into<String>) -> Self {
        Self { phoneme: phoneme.into(), start: None, end: None, word: None }
    }

    pub fn timed(phoneme: impl Into<String>, start: u64, end: u64) -> Self {
        Self { phoneme: phoneme.into(), start: Some(start), end: Some(end), word: None }
    }
}

pub fn parse_label_file(path: impl AsRef<Path>) -> Result<Vec<PhoneLabel>, LabelError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| LabelError::Io(e.to_string()))?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<PhoneLabel>, LabelError> {
    let mut labels: Vec<PhoneLabel> = Vec::new();
    let mut timed = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let label = match fields.as_slice() {
            [] => continue,
            [ph] => PhoneLabel::untimed(*ph),
            [s, e, ph] => {
                let start = s.parse().map_err(|_| LabelError::MalformedLine(lineno))?;
                let end = e.parse().map_err(|_| LabelError::MalformedLine(lineno))?;
                PhoneLabel::timed(*ph, start, end)
            }
            _ => return Err(LabelError::MalformedLine(lineno)),
        };
        let is_timed = label.start.is_some();
        if *timed.get_or_insert(is_timed) != is_timed {
            return Err(LabelError::MalformedLine(lineno));
        }
        if let (Some(start), Some(end)) = (label.start, label.end) {
            if start >= end {
                return Err(LabelError::NonMonotonicTimes(lineno));
            }
            if let Some(prev_end) = labels.last().and_then(|l| l.end) {
                if start < prev_end {
                    return Err(LabelError::NonMonotonicTimes(lineno));
                }
                if start > prev_end {
                    return Err(LabelError::Gap(lineno));
                }
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(LabelError::EmptyLabelFile);
    }
    Ok(labels)
}

/// Canonical text form accepted by [`parse_labels`].
pub fn format_labels(labels: &[PhoneLabel]) -> String {
    labels
        .iter()
        .map(|l| match (l.start, l.end) {
            (Some(s), Some(e)) => format!("{s} {e} {}\n", l.phoneme),
            _ => format!("{}\n", l.phoneme),
        })
        .collect()
}

pub fn write_label_file(labels: &[PhoneLabel], path: impl AsRef<Path>) -> Result<(), LabelError> {
    std::fs::write(path.as_ref(), format_labels(labels)).map_err(|e| LabelError::Io(e.to_string()))
}

/// Word → pronunciation map with case-insensitive keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, pronunciation: &[&str]) {
        self.entries
            .insert(word.to_lowercase(), pronunciation.iter().map(|p| p.to_string()).collect());
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `word ph1 ph2 ...` lines; `#` starts a comment.
    pub fn parse(text: &str, phones: &PhoneSet) -> Result<Self, LabelError> {
        let mut lex = Lexicon::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let pron: Vec<&str> = fields.collect();
            if pron.is_empty() {
                return Err(LabelError::Lexicon { line: idx + 1, reason: format!("'{word}' has no pronunciation") });
            }
            if let Some(bad) = pron.iter().find(|p| !phones.contains(p)) {
                return Err(LabelError::Lexicon { line: idx + 1, reason: format!("unknown phone '{bad}'") });
            }
            lex.insert(word, &pron);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>, phones: &PhoneSet) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| LabelError::Io(e.to_string()))?;
        Self::parse(&text, phones)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(w, p)| format!("{w} {}\n", p.join(" "))).collect()
    }
}

fn normalize_word(token: &str) -> String {
    token
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Lexicon pronunciations of every word, wrapped in leading and trailing silence.
pub fn text_to_phonemes(text: &str, lex: &Lexicon) -> Result<Vec<PhoneLabel>, LabelError> {
    let mut out = vec![PhoneLabel::untimed(SILENCE)];
    for token in text.split_whitespace() {
        let word = normalize_word(token);
        if word.is_empty() {
            continue;
        }
        let pron = lex.get(&word).ok_or_else(|| LabelError::OutOfVocabulary(word.clone()))?;
        let length = pron.len().min(u8::MAX as usize) as u8;
        out.extend(pron.iter().enumerate().map(|(i, p)| PhoneLabel {
            word: Some(WordPosition { position: (i + 1).min(u8::MAX as usize) as u8, length }),
            ..PhoneLabel::untimed(p.as_str())
        }));
    }
    out.push(PhoneLabel::untimed(SILENCE));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextWidth {
    Triphone,
    Quinphone,
}

impl std::str::FromStr for ContextWidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triphone" => Ok(ContextWidth::Triphone),
            "quinphone" => Ok(ContextWidth::Quinphone),
            other => Err(format!("unknown context width '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextLabel {
    pub left2: String,
    pub left1: String,
    pub center: String,
    pub right1: String,
    pub right2: String,
    pub position_in_word: u8,
    pub word_length: u8,
}

impl ContextLabel {
    /// Model lookup key; word position is not part of it.
    pub fn key(&self) -> String {
        format!("{}^{}-{}+{}={}", self.left2, self.left1, self.center, self.right1, self.right2)
    }
}

impl fmt::Display for ContextLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

pub fn expand_context(phones: &[PhoneLabel], width: ContextWidth) -> Result<Vec<ContextLabel>, LabelError> {
    if phones.is_empty() {
        return Err(LabelError::EmptySequence);
    }
    let at = |i: isize| -> String {
        usize::try_from(i)
            .ok()
            .and_then(|i| phones.get(i))
            .map_or_else(|| BOUNDARY.to_string(), |p| p.phoneme.clone())
    };
    Ok((0..phones.len() as isize)
        .map(|i| {
            let wide = width == ContextWidth::Quinphone;
            let word = phones[i as usize].word;
            ContextLabel {
                left2: if wide { at(i - 2) } else { BOUNDARY.to_string() },
                left1: at(i - 1),
                center: at(i),
                right1: at(i + 1),
                right2: if wide { at(i + 2) } else { BOUNDARY.to_string() },
                position_in_word: word.map_or(0, |w| w.position),
                word_length: word.map_or(0, |w| w.length),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cat_lexicon() -> Lexicon {
        Lexicon::parse("# toy\ncat k ae t\n", &PhoneSet::arpabet()).unwrap()
    }

    fn names(labels: &[PhoneLabel]) -> Vec<&str> {
        labels.iter().map(|l| l.phoneme.as_str()).collect()
    }

    #[test]
    fn parses_contiguous_labels() {
        let labels = parse_labels("0 1000000 sil\n1000000 3000000 ae").unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[1], PhoneLabel::timed("ae", 1_000_000, 3_000_000));
    }

    #[test]
    fn label_errors() {
        assert_eq!(parse_labels(""), Err(LabelError::EmptyLabelFile));
        assert_eq!(parse_labels("  \n\n"), Err(LabelError::EmptyLabelFile));
        assert_eq!(parse_labels("0 20 a\n10 30 b"), Err(LabelError::NonMonotonicTimes(2)));
        assert_eq!(parse_labels("0 20 a\n30 40 b"), Err(LabelError::Gap(2)));
        assert_eq!(parse_labels("20 10 a"), Err(LabelError::NonMonotonicTimes(1)));
        assert_eq!(parse_labels("0 x a"), Err(LabelError::MalformedLine(1)));
        assert_eq!(parse_labels("a b"), Err(LabelError::MalformedLine(1)));
        assert_eq!(parse_labels("0 10 a\nb"), Err(LabelError::MalformedLine(2)));
    }

    #[test]
    fn empty_label_file_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.lab");
        std::fs::write(&path, "").unwrap();
        assert_eq!(parse_label_file(&path), Err(LabelError::EmptyLabelFile));
    }

    #[test]
    fn text_lookup() {
        let lex = cat_lexicon();
        assert_eq!(names(&text_to_phonemes("cat", &lex).unwrap()), ["sil", "k", "ae", "t", "sil"]);
        assert_eq!(text_to_phonemes("Cat.", &lex).unwrap(), text_to_phonemes("cat", &lex).unwrap());
        assert_eq!(text_to_phonemes("xyzzy", &lex), Err(LabelError::OutOfVocabulary("xyzzy".into())));
        let labels = text_to_phonemes("cat", &lex).unwrap();
        assert_eq!(labels[2].word, Some(WordPosition { position: 2, length: 3 }));
    }

    #[test]
    fn lexicon_rejects_unknown_phones() {
        let err = Lexicon::parse("dog d ao qq\n", &PhoneSet::arpabet()).unwrap_err();
        assert!(matches!(err, LabelError::Lexicon { line: 1, .. }));
        assert!(Lexicon::parse("dog\n", &PhoneSet::arpabet()).is_err());
    }

    #[test]
    fn context_padding() {
        let one = expand_context(&[PhoneLabel::untimed("a")], ContextWidth::Quinphone).unwrap();
        assert_eq!(one[0].key(), "#^#-a+#=#");
        let abc: Vec<PhoneLabel> = ["a", "b", "c"].iter().map(|p| PhoneLabel::untimed(*p)).collect();
        let tri = expand_context(&abc, ContextWidth::Triphone).unwrap();
        assert_eq!(tri[1].key(), "#^a-b+c=#");
        let quin = expand_context(&abc, ContextWidth::Quinphone).unwrap();
        assert_eq!(quin[0].key(), "#^#-a+b=c");
        assert_eq!(expand_context(&[], ContextWidth::Triphone), Err(LabelError::EmptySequence));
    }

    proptest! {
        #[test]
        fn labels_round_trip(durations in proptest::collection::vec(1u64..1_000_000, 1..20), idx in proptest::collection::vec(0usize..5, 20)) {
            let phones = ["sil", "aa", "m", "s", "iy"];
            let mut t = 0;
            let labels: Vec<PhoneLabel> = durations.iter().enumerate().map(|(i, d)| {
                let l = PhoneLabel::timed(phones[idx[i]], t, t + d);
                t += d;
                l
            }).collect();
            prop_assert_eq!(parse_labels(&format_labels(&labels)).unwrap(), labels);
        }

        #[test]
        fn context_preserves_centres(idx in proptest::collection::vec(0usize..5, 1..30), quin in any::<bool>()) {
            let phones = ["sil", "aa", "m", "s", "iy"];
            let labels: Vec<PhoneLabel> = idx.iter().map(|&i| PhoneLabel::untimed(phones[i])).collect();
            let width = if quin { ContextWidth::Quinphone } else { ContextWidth::Triphone };
            let ctx = expand_context(&labels, width).unwrap();
            prop_assert_eq!(ctx.len(), labels.len());
            for (c, l) in ctx.iter().zip(&labels) {
                prop_assert_eq!(&c.center, &l.phoneme);
            }
        }
    }
}
