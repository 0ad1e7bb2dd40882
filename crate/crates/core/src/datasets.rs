//! Multiple-choice QA and explanation JSON Lines readers.
//!
//! QA records look like
//! `{"id": "...", "question": {"stem": "...", "choices": [{"label": "A", "text": "..."}]}, "answerKey": "A"}`
//! and explanation records like
//! `{"id": "...", "positive": "...", "negatives": ["...", "..."]}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

/// One question with its ordered answer candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub candidates: Vec<Choice>,
    pub gold_label: Option<String>,
}

impl QaExample {
    pub fn candidate_texts(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.text.clone()).collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.label == label)
    }

    pub fn gold_index(&self) -> Option<usize> {
        self.gold_label.as_deref().and_then(|g| self.label_index(g))
    }

    fn validate(&self, arity: usize) -> Result<()> {
        if self.candidates.len() != arity {
            return Err(Error::example(
                &self.id,
                format!("expected {arity} choices, found {}", self.candidates.len()),
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.label.as_str()) {
                return Err(Error::example(
                    &self.id,
                    format!("duplicate label {:?}", c.label),
                ));
            }
        }
        if let Some(g) = &self.gold_label {
            if !seen.contains(g.as_str()) {
                return Err(Error::example(
                    &self.id,
                    format!("answerKey {g:?} is not a choice label"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON line: fields in the reader's order, `answerKey`
    /// omitted when absent, no extra whitespace.
    pub fn to_json_line(&self) -> String {
        let rec = WireQa {
            id: self.id.clone(),
            question: WireQuestion {
                stem: self.question.clone(),
                choices: self.candidates.clone(),
            },
            answer_key: self.gold_label.clone(),
        };
        serde_json::to_string(&rec).expect("QA record serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct WireQuestion {
    stem: String,
    choices: Vec<Choice>,
}

#[derive(Serialize, Deserialize)]
struct WireQa {
    id: String,
    question: WireQuestion,
    #[serde(rename = "answerKey", default, skip_serializing_if = "Option::is_none")]
    answer_key: Option<String>,
}

/// Reads a JSON value per non-blank line, handing each to `f` with its
/// 1-based line number.
fn for_each_record<R: BufRead>(
    reader: R,
    mut f: impl FnMut(usize, Value) -> Result<()>,
) -> Result<()> {
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        f(lineno, value)?;
    }
    Ok(())
}

fn record_id(lineno: usize, v: &Value) -> Result<String> {
    match v.get("id") {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::parse(lineno, "record has no id")),
    }
}

/// Parses QA records, checking each against the dataset's choice count.
/// Input order is kept.
pub fn parse_qa<R: BufRead>(reader: R, arity: usize) -> Result<Vec<QaExample>> {
    if arity == 0 {
        return Err(Error::contract("arity must be positive"));
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for_each_record(reader, |lineno, value| {
        let id = record_id(lineno, &value)?;
        let mut value = value;
        // numeric ids are accepted and kept as strings
        value["id"] = Value::String(id.clone());
        let rec: WireQa =
            serde_json::from_value(value).map_err(|e| Error::example(&id, e.to_string()))?;
        if !ids.insert(id.clone()) {
            return Err(Error::example(&id, "duplicate id"));
        }
        let ex = QaExample {
            id,
            question: rec.question.stem,
            candidates: rec.question.choices,
            gold_label: rec.answer_key,
        };
        ex.validate(arity)?;
        out.push(ex);
        Ok(())
    })?;
    Ok(out)
}

pub fn load_qa(path: &Path, arity: usize) -> Result<Vec<QaExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_qa(BufReader::new(file), arity)
}

pub fn qa_index(examples: &[QaExample]) -> HashMap<String, QaExample> {
    examples.iter().map(|e| (e.id.clone(), e.clone())).collect()
}

/// A QA example with its annotated explanations. The contrastive reference
/// is the positive explanation followed by the negatives, joined by single
/// spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationExample {
    pub qa: QaExample,
    pub positive_expl: String,
    pub negative_expls: Vec<String>,
    pub contrastive_gold: String,
}

impl ExplanationExample {
    pub fn new(qa: QaExample, positive_expl: String, negative_expls: Vec<String>) -> Self {
        let contrastive_gold = contrastive_gold(&positive_expl, &negative_expls);
        ExplanationExample {
            qa,
            positive_expl,
            negative_expls,
            contrastive_gold,
        }
    }
}

pub fn contrastive_gold<S: AsRef<str>>(positive: &str, negatives: &[S]) -> String {
    std::iter::once(positive)
        .chain(negatives.iter().map(AsRef::as_ref))
        .collect::<Vec<_>>()
        .join(" ")
}

/// An explanation record before it is joined to its QA example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub id: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}

impl ExplanationRecord {
    pub fn contrastive_gold(&self) -> String {
        contrastive_gold(&self.positive, &self.negatives)
    }
}

/// Reads explanation records without resolving them.
pub fn parse_explanation_records<R: BufRead>(reader: R) -> Result<Vec<ExplanationRecord>> {
    let mut out = Vec::new();
    for_each_record(reader, |lineno, mut value| {
        let id = record_id(lineno, &value)?;
        value["id"] = Value::String(id.clone());
        out.push(serde_json::from_value(value).map_err(|e| Error::example(&id, e.to_string()))?);
        Ok(())
    })?;
    Ok(out)
}

/// Parses explanation records and joins them to their QA examples. Every
/// id that does not resolve is reported in one link error.
pub fn parse_explanations<R: BufRead>(
    reader: R,
    qa_index: &HashMap<String, QaExample>,
) -> Result<Vec<ExplanationExample>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for rec in parse_explanation_records(reader)? {
        match qa_index.get(&rec.id) {
            Some(qa) => out.push(ExplanationExample::new(
                qa.clone(),
                rec.positive,
                rec.negatives,
            )),
            None => missing.push(rec.id),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Link { ids: missing });
    }
    Ok(out)
}

/// Published choice counts and split sizes of the supported datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Csqa,
    Qasc,
    Obqa,
    Ecqa,
}

impl DatasetKind {
    pub fn arity(self) -> usize {
        match self {
            DatasetKind::Csqa | DatasetKind::Ecqa => 5,
            DatasetKind::Qasc => 8,
            DatasetKind::Obqa => 4,
        }
    }

    pub fn expected_counts(self) -> BTreeMap<String, usize> {
        let rows: &[(&str, usize)] = match self {
            DatasetKind::Csqa => &[("train", 9741), ("dev", 1221), ("test", 1140)],
            DatasetKind::Qasc => &[("train", 8134), ("dev", 926), ("test", 920)],
            DatasetKind::Obqa => &[("train", 4957), ("dev", 500), ("test", 500)],
            DatasetKind::Ecqa => &[("train", 9741), ("dev", 1221)],
        };
        rows.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect()
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csqa" => Ok(DatasetKind::Csqa),
            "qasc" => Ok(DatasetKind::Qasc),
            "obqa" => Ok(DatasetKind::Obqa),
            "ecqa" => Ok(DatasetKind::Ecqa),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCheck {
    pub split: String,
    pub expected: usize,
    pub actual: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub checks: Vec<SplitCheck>,
}

impl SplitReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &SplitCheck> {
        self.checks.iter().filter(|c| !c.ok)
    }
}

/// One row per expected split; a split with no examples counts as 0.
/// Mismatches are flagged, never raised.
pub fn validate_split_counts(
    actual: &BTreeMap<String, usize>,
    expected: &BTreeMap<String, usize>,
) -> SplitReport {
    SplitReport {
        checks: expected
            .iter()
            .map(|(split, &want)| {
                let got = actual.get(split).copied().unwrap_or(0);
                SplitCheck {
                    split: split.clone(),
                    expected: want,
                    actual: got,
                    ok: got == want,
                }
            })
            .collect(),
    }
}
