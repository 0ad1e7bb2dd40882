//! First-entry definition lookup with an original > lemma > last-word
//! fallback chain.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{concept_surface, normalize_concept};

/// Lemmatization contract used by [`lookup_definition`].
pub trait Lemmatizer: Send + Sync {
    fn lemmatize(&self, word: &str) -> String;
}

/// Suffix-rule English lemmatizer; see [`default_lemmatize`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleLemmatizer;

impl Lemmatizer for RuleLemmatizer {
    fn lemmatize(&self, word: &str) -> String {
        default_lemmatize(word)
    }
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Drops the last letter of a doubled final consonant ("runn" -> "run").
/// `l`, `s` and `z` doubles are kept ("call", "pass", "buzz").
fn undouble(stem: &str) -> &str {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2
        && b[n - 1] == b[n - 2]
        && !is_vowel(b[n - 1])
        && !matches!(b[n - 1], b'l' | b's' | b'z')
    {
        &stem[..n - 1]
    } else {
        stem
    }
}

/// Applies the first matching rule, in order:
///
/// | suffix | action                            | min stem |
/// |--------|-----------------------------------|----------|
/// | `ies`  | replace with `y`                  | 2        |
/// | `es`   | strip, only after s/x/z/ch/sh     | 2        |
/// | `s`    | strip, not after `s`, `u` or `i`  | 3        |
/// | `ing`  | strip, undouble final consonant   | 3        |
/// | `ed`   | strip, undouble final consonant   | 3        |
///
/// Words that match no rule (or would leave too short a stem) come back
/// unchanged. Input is lowercased first.
pub fn default_lemmatize(word: &str) -> String {
    let w = word.to_lowercase();
    if !w.is_ascii() {
        return w;
    }
    if let Some(stem) = w.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = w.strip_suffix("es") {
        if stem.len() >= 2
            && ["s", "x", "z", "ch", "sh"]
                .iter()
                .any(|s| stem.ends_with(s))
        {
            return stem.to_owned();
        }
    }
    if let Some(stem) = w.strip_suffix('s') {
        if stem.len() >= 3 && !stem.ends_with(['s', 'u', 'i']) {
            return stem.to_owned();
        }
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = w.strip_suffix(suffix) {
            if stem.len() >= 3 {
                return undouble(stem).to_owned();
            }
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchForm {
    Original,
    Lemma,
    BaseWord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionEntry {
    pub concept: String,
    pub matched_headword: String,
    pub match_form: MatchForm,
    pub text: String,
}

impl DefinitionEntry {
    /// `concept: text`, with the concept rendered with spaces.
    pub fn verbalize(&self) -> String {
        format!("{}: {}", concept_surface(&self.concept), self.text)
    }
}

#[derive(Debug, Deserialize)]
struct DictRecord {
    headword: String,
    definitions: Vec<String>,
}

/// Headword to definitions; list order is the dictionary's sense order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DictionaryStore {
    entries: HashMap<String, Vec<String>>,
}

impl DictionaryStore {
    /// Adds senses for a headword. Repeated headwords append their senses
    /// after the existing ones.
    pub fn insert<I, S>(&mut self, headword: &str, definitions: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let key = normalize_concept(headword);
        if key.is_empty() {
            return Err(Error::contract("empty headword"));
        }
        let defs: Vec<String> = definitions.into_iter().map(Into::into).collect();
        if defs.is_empty() {
            return Err(Error::contract(format!(
                "headword {key:?} has no definitions"
            )));
        }
        self.entries.entry(key).or_default().extend(defs);
        Ok(())
    }

    /// Reads `{"headword": ..., "definitions": [...]}` JSON Lines.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut store = DictionaryStore::default();
        for (n, line) in reader.lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DictRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
            store
                .insert(&rec.headword, rec.definitions)
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(BufReader::new(file))
    }

    pub fn get(&self, headword: &str) -> Option<&[String]> {
        self.entries.get(headword).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Looks the concept up as written, then as its lemma (each word
/// lemmatized), then as its last word. The first hit yields its first
/// definition.
pub fn lookup_definition<L: Lemmatizer + ?Sized>(
    concept: &str,
    store: &DictionaryStore,
    lemmatizer: &L,
) -> Option<DefinitionEntry> {
    let original = normalize_concept(concept);
    if original.is_empty() {
        return None;
    }
    let lemma = original
        .split('_')
        .map(|w| lemmatizer.lemmatize(w))
        .collect::<Vec<_>>()
        .join("_");
    let base = original.rsplit('_').next().unwrap_or(&original).to_owned();

    let attempts = [
        (original.clone(), MatchForm::Original),
        (lemma, MatchForm::Lemma),
        (base, MatchForm::BaseWord),
    ];
    attempts.into_iter().find_map(|(headword, form)| {
        let first = store.get(&headword)?.first()?.clone();
        Some(DefinitionEntry {
            concept: original.clone(),
            matched_headword: headword,
            match_form: form,
            text: first,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, &[&str])]) -> DictionaryStore {
        let mut s = DictionaryStore::default();
        for (h, defs) in entries {
            s.insert(h, defs.iter().copied()).unwrap();
        }
        s
    }

    #[test]
    fn lemmatizer_rule_table() {
        let cases = [
            ("run", "run"),
            ("stories", "story"),
            ("running", "run"),
            ("magazines", "magazine"),
            ("boxes", "box"),
            ("churches", "church"),
            ("stopped", "stop"),
            ("played", "play"),
            ("calling", "call"),
            ("glass", "glass"),
            ("bus", "bus"),
            ("is", "is"),
            ("sing", "sing"),
            ("Books", "book"),
        ];
        for (w, want) in cases {
            assert_eq!(default_lemmatize(w), want, "{w}");
        }
    }

    #[test]
    fn lemmatizer_idempotent_on_outputs() {
        let words = [
            "running",
            "stories",
            "magazines",
            "boxes",
            "books",
            "stopped",
            "played",
            "walked",
            "things",
            "classes",
            "buses",
            "wishes",
            "cities",
            "bedding",
            "needed",
            "trains",
            "stations",
            "markets",
            "doctors",
            "mortuaries",
        ];
        for w in words {
            let once = default_lemmatize(w);
            assert_eq!(default_lemmatize(&once), once, "{w}");
        }
    }

    #[test]
    fn original_form() {
        let s = store(&[(
            "bookstore",
            &["A store where books are bought and sold", "later"],
        )]);
        let d = lookup_definition("bookstore", &s, &RuleLemmatizer).unwrap();
        assert_eq!(d.text, "A store where books are bought and sold");
        assert_eq!(d.match_form, MatchForm::Original);
        assert_eq!(d.matched_headword, "bookstore");
    }

    #[test]
    fn lemma_form() {
        let s = store(&[("magazine", &["A periodical"])]);
        let d = lookup_definition("magazines", &s, &RuleLemmatizer).unwrap();
        assert_eq!(d.match_form, MatchForm::Lemma);
        assert_eq!(d.matched_headword, "magazine");
        assert_eq!(d.concept, "magazines");
    }

    #[test]
    fn base_word_form() {
        let s = store(&[("station", &["A stopping place"])]);
        let d = lookup_definition("train_station", &s, &RuleLemmatizer).unwrap();
        assert_eq!(d.match_form, MatchForm::BaseWord);
        assert_eq!(d.matched_headword, "station");
    }

    #[test]
    fn miss_is_absent() {
        let s = store(&[("x", &["y"])]);
        assert!(lookup_definition("mortuary", &s, &RuleLemmatizer).is_none());
        assert!(lookup_definition("", &s, &RuleLemmatizer).is_none());
    }

    #[test]
    fn jsonl_keeps_entry_order() {
        let raw = r#"{"headword": "Train Station", "definitions": ["first", "second"]}
{"headword": "market", "definitions": ["m"]}
"#;
        let s = DictionaryStore::from_jsonl(raw.as_bytes()).unwrap();
        assert_eq!(s.get("train_station").unwrap(), ["first", "second"]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn jsonl_rejects_empty_definitions() {
        let raw = r#"{"headword": "a", "definitions": []}"#;
        let err = DictionaryStore::from_jsonl(raw.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn verbalize_entry() {
        let s = store(&[("train_station", &["A place where trains stop"])]);
        let d = lookup_definition("train_station", &s, &RuleLemmatizer).unwrap();
        assert_eq!(d.verbalize(), "train station: A place where trains stop");
    }
}
