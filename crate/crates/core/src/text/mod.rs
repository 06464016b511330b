//! Phoneme vocabulary, lexicon lookup and forced-alignment durations.
//!
//! Silences between words enter the phoneme sequence as explicit `sil` tokens,
//! but only where the paired alignment contains a silence interval (see
//! [`tokenize_aligned`]). Plain [`tokenize`] never inserts them.

mod alignment;

use std::collections::HashMap;
use std::path::Path;

pub use alignment::{durations_from_alignment, AlignmentEntry, AlignmentRecord, DurationVector};

use crate::error::{Error, Result};

const BUILTIN_VOCAB: &str = include_str!("../../data/phonemes_v1.txt");

pub const PAD: &str = "<pad>";
pub const SILENCE: &str = "sil";

/// Labels that alignment tools emit for silence; all map to [`SILENCE`].
const SILENCE_ALIASES: &[&str] = &["", "sil", "sp", "SIL", "SP", "<sil>", "<eps>", "silence"];

pub fn is_silence(label: &str) -> bool {
    SILENCE_ALIASES.contains(&label)
}

/// Fixed, versioned list of phoneme labels; a label's line position is its id.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    version: String,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// ARPAbet with stress marks plus `<pad>`, `sil` and `spn`.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_VOCAB).expect("builtin vocabulary is well-formed")
    }

    /// First line `# <version>`, then one label per line; other `#` lines are
    /// comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Format("vocabulary must start with `# <version>`".into()))?;
        let labels: Vec<String> = lines
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary label `{l}`")));
            }
        }
        if !index.contains_key(SILENCE) {
            return Err(Error::Format(format!("vocabulary lacks `{SILENCE}`")));
        }
        Ok(Self {
            version,
            labels,
            index,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Result<usize> {
        let label = if is_silence(label) { SILENCE } else { label };
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownPhoneme(label.to_string()))
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<PhonemeSequence> {
        let ids = labels
            .iter()
            .map(|l| self.id(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        PhonemeSequence::new(ids, self)
    }
}

/// Token ids of one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSequence {
    ids: Vec<usize>,
    vocab_version: String,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty phoneme sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab.len()) {
            return Err(Error::OutOfRange {
                what: "phoneme vocabulary",
                index: bad,
                size: vocab.len(),
            });
        }
        Ok(Self {
            ids,
            vocab_version: vocab.version().to_string(),
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vocab_version(&self) -> &str {
        &self.vocab_version
    }

    pub fn labels<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.ids.iter().filter_map(|&i| vocab.label(i)).collect()
    }
}

/// Word → phoneme labels, CMU-dictionary style.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
}

impl Lexicon {
    /// One entry per line: `word PH1 PH2 …`. Words are case-insensitive.
    /// Lines starting with `;;;` or `#` are comments; alternate pronunciations
    /// (`word(2)`) and repeated words keep the first entry.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(";;;") || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line has a first token");
            let phones: Vec<String> = parts.map(String::from).collect();
            if phones.is_empty() {
                return Err(Error::Parse {
                    path: "<lexicon>".into(),
                    line: n + 1,
                    msg: format!("word `{word}` has no phonemes"),
                });
            }
            if word.ends_with(')') && word.contains('(') {
                continue;
            }
            entries.entry(word.to_lowercase()).or_insert(phones);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            e => e,
        })
    }

    pub fn insert(&mut self, word: &str, phones: &[&str]) {
        self.entries
            .insert(word.to_lowercase(), phones.iter().map(|s| s.to_string()).collect());
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
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Phoneme labels of `text`, word by word.
pub fn phoneme_labels(text: &str, lexicon: &Lexicon) -> Result<Vec<String>> {
    let words = words(text);
    if words.is_empty() {
        return Err(Error::InvalidArgument("empty text".into()));
    }
    let missing: Vec<String> = words
        .iter()
        .filter(|w| lexicon.get(w).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnknownWords(missing));
    }
    Ok(words
        .iter()
        .flat_map(|w| lexicon.get(w).unwrap().iter().cloned())
        .collect())
}

pub fn tokenize(text: &str, lexicon: &Lexicon, vocab: &Vocabulary) -> Result<PhonemeSequence> {
    vocab.encode(&phoneme_labels(text, lexicon)?)
}

/// Tokenizes `text` and inserts a silence token wherever `alignment` has a
/// silence interval. Non-silence alignment labels must equal the text's
/// phonemes one-to-one.
pub fn tokenize_aligned(
    text: &str,
    lexicon: &Lexicon,
    vocab: &Vocabulary,
    alignment: &AlignmentRecord,
) -> Result<PhonemeSequence> {
    let phones = phoneme_labels(text, lexicon)?;
    let mut next = phones.iter();
    let mut labels = Vec::with_capacity(alignment.entries().len());
    for (i, e) in alignment.entries().iter().enumerate() {
        if is_silence(&e.label) {
            labels.push(SILENCE.to_string());
            continue;
        }
        match next.next() {
            Some(p) if *p == e.label => labels.push(p.clone()),
            Some(p) => {
                return Err(Error::Alignment(format!(
                    "entry {i}: alignment label `{}` but text gives `{p}`",
                    e.label
                )))
            }
            None => {
                return Err(Error::Alignment(format!(
                    "entry {i}: alignment has more phonemes than the text"
                )))
            }
        }
    }
    if next.next().is_some() {
        return Err(Error::Alignment("text has more phonemes than the alignment".into()));
    }
    vocab.encode(&labels)
}

/// [`durations_from_alignment`] after checking that the alignment labels are
/// exactly the labels of `seq`.
pub fn aligned_durations(
    rec: &AlignmentRecord,
    seq: &PhonemeSequence,
    vocab: &Vocabulary,
    mel_fps: f64,
    l_a: usize,
) -> Result<DurationVector> {
    if rec.entries().len() != seq.len() {
        return Err(Error::Alignment(format!(
            "{} alignment intervals for {} phonemes",
            rec.entries().len(),
            seq.len()
        )));
    }
    for (i, (e, &id)) in rec.entries().iter().zip(seq.ids()).enumerate() {
        if vocab.id(&e.label)? != id {
            return Err(Error::Alignment(format!(
                "entry {i}: alignment label `{}` but sequence has `{}`",
                e.label,
                vocab.label(id).unwrap_or("?")
            )));
        }
    }
    durations_from_alignment(rec, mel_fps, l_a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon() -> Lexicon {
        Lexicon::parse(
            ";;; tiny CMU-style lexicon\n\
             SET  S EH1 T\n\
             BLUE  B L UW1\n\
             BLUE(2)  B L UW0\n\
             A  AH0\n\
             AT  AE1 T\n",
        )
        .unwrap()
    }

    #[test]
    fn builtin_vocab_layout() {
        let v = Vocabulary::builtin();
        assert_eq!(v.version(), "arpabet-stress-v1");
        assert_eq!(v.len(), 72);
        assert_eq!(v.id(PAD).unwrap(), 0);
        assert_eq!(v.id(SILENCE).unwrap(), 1);
        assert_eq!(v.id("sp").unwrap(), 1);
        assert_eq!(v.id("").unwrap(), 1);
        assert!(v.id("QQ").is_err());
    }

    #[test]
    fn single_entry_lexicon() {
        let v = Vocabulary::builtin();
        let mut lex = Lexicon::default();
        lex.insert("a", &["AH0"]);
        let seq = tokenize("a", &lex, &v).unwrap();
        assert_eq!(seq.ids(), &[v.id("AH0").unwrap()]);
        assert_eq!(seq.vocab_version(), "arpabet-stress-v1");
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(tokenize("", &lexicon(), &Vocabulary::builtin()).is_err());
        assert!(tokenize("  ?! ", &lexicon(), &Vocabulary::builtin()).is_err());
    }

    #[test]
    fn set_blue() {
        let v = Vocabulary::builtin();
        let seq = tokenize("Set blue.", &lexicon(), &v).unwrap();
        assert_eq!(seq.labels(&v), ["S", "EH1", "T", "B", "L", "UW1"]);
    }

    #[test]
    fn unknown_words_are_listed() {
        match tokenize("set green now", &lexicon(), &Vocabulary::builtin()) {
            Err(Error::UnknownWords(w)) => assert_eq!(w, ["green", "now"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn silences_follow_the_alignment() {
        let v = Vocabulary::builtin();
        let rec = AlignmentRecord::parse(
            "sil\t0.00\t0.10\nS\t0.10\t0.15\nEH1\t0.15\t0.20\nT\t0.20\t0.25\n\t0.25\t0.30\n\
             B\t0.30\t0.35\nL\t0.35\t0.40\nUW1\t0.40\t0.50\nsp\t0.50\t0.60\n",
        )
        .unwrap();
        let seq = tokenize_aligned("set blue", &lexicon(), &v, &rec).unwrap();
        assert_eq!(
            seq.labels(&v),
            ["sil", "S", "EH1", "T", "sil", "B", "L", "UW1", "sil"]
        );
        let bad = AlignmentRecord::parse("S\t0\t0.1\nAH0\t0.1\t0.2\n").unwrap();
        assert!(matches!(
            tokenize_aligned("set", &lexicon(), &v, &bad),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn aligned_durations_checks_labels() {
        let v = Vocabulary::builtin();
        let rec = AlignmentRecord::parse("S\t0\t0.04\nEH1\t0.04\t0.06\nT\t0.06\t0.08\n").unwrap();
        let seq = tokenize("set", &lexicon(), &v).unwrap();
        assert_eq!(aligned_durations(&rec, &seq, &v, 100.0, 8).unwrap().values(), &[4, 2, 2]);
        let other = tokenize("at", &lexicon(), &v).unwrap();
        assert!(aligned_durations(&rec, &other, &v, 100.0, 8).is_err());
    }

    #[test]
    fn tokenization_is_pure() {
        let v = Vocabulary::builtin();
        let a = tokenize("a set at blue", &lexicon(), &v).unwrap();
        let b = tokenize("a set at blue", &lexicon(), &v).unwrap();
        assert_eq!(a, b);
    }
}
