//! Explanation prompt templates and the five-segment generator input.
//!
//! The generator input is
//!
//! ```text
//! <task prefix> [SEP] <question> ; <c1> ; ... ; <cn> [SEP] <concepts> [SEP] <triples> [SEP] <definitions> [SEP] [SEP] <prompt>
//! ```
//!
//! where the fourth segment is the serialized knowledge bundle, which itself
//! ends in a bare `[SEP]`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::DefinitionEntry;
use crate::error::{Error, Result};
use crate::kb::CandidateTriples;
use crate::Scalar;

pub const SEP: &str = " [SEP] ";
const SEP_TOKEN: &str = "[SEP]";
/// Joins the question and the candidates inside the second segment.
pub const CANDIDATE_JOINER: &str = " ; ";
pub const TASK_PREFIX: &str = "Generate the contrastive explanation for this question";
pub const DEFAULT_TEMPLATE_ID: u32 = 1;

/// Slot for the whole candidate list, rendered `[c1, ..., cn]`.
pub const SLOT_ALL: &str = "{options}";
/// Slot for the first candidate, rendered `[c1]`.
pub const SLOT_FIRST: &str = "{first}";
/// Slot for all but the first candidate, rendered `[c2, ..., cn]`.
pub const SLOT_REST: &str = "{rest}";
/// Slot for the last candidate, rendered `[cn]`.
pub const SLOT_LAST: &str = "{last}";

const PAIRWISE_SLOTS: [&str; 3] = [SLOT_FIRST, SLOT_REST, SLOT_LAST];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: u32,
    pub pattern: String,
}

impl PromptTemplate {
    pub fn new(id: u32, pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        if ![SLOT_ALL, SLOT_FIRST, SLOT_REST, SLOT_LAST]
            .iter()
            .any(|s| pattern.contains(s))
        {
            return Err(Error::contract(format!("template {id} has no slot marker")));
        }
        if pattern.contains(SEP_TOKEN) {
            return Err(Error::contract(format!(
                "template {id} contains {SEP_TOKEN}"
            )));
        }
        Ok(PromptTemplate { id, pattern })
    }

    /// Templates that single out the first candidate against the rest need
    /// at least two candidates.
    pub fn min_candidates(&self) -> usize {
        if PAIRWISE_SLOTS.iter().any(|s| self.pattern.contains(s)) {
            2
        } else {
            1
        }
    }
}

/// The seven explanation prompt patterns, ids 1 through 7.
pub fn default_templates() -> Vec<PromptTemplate> {
    [
        "Given concept sets {options}, the difference among them is ...",
        "Given {options}, while {first} can ..., ..., {last} can not ...",
        "The main difference among the concepts {options} is ...",
        "Given concepts, {first} can, but {rest} can not ...",
        "Given concepts, while {first} can, {rest} can not ...",
        "Given concepts, {first} can not, however {rest} can ...",
        "Given concepts, while {first} can not, however {rest} can ...",
    ]
    .iter()
    .zip(1..)
    .map(|(p, id)| PromptTemplate::new(id, *p).expect("built-in template"))
    .collect()
}

/// Reads `{"id": n, "pattern": "..."}` JSON Lines. Ids must be unique.
pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<PromptTemplate> = Vec::new();
    let mut ids = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PromptTemplate =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let t = PromptTemplate::new(raw.id, raw.pattern)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if !ids.insert(t.id) {
            return Err(Error::parse(
                lineno,
                format!("duplicate template id {}", t.id),
            ));
        }
        out.push(t);
    }
    Ok(out)
}

fn bracket(items: &[&str]) -> String {
    format!("[{}]", items.join(", "))
}

/// Fills the template's slots with the candidates in their given order.
pub fn instantiate_prompt<S: AsRef<str>>(
    template: &PromptTemplate,
    candidates: &[S],
) -> Result<String> {
    let cands: Vec<&str> = candidates.iter().map(AsRef::as_ref).collect();
    let need = template.min_candidates();
    if cands.len() < need {
        return Err(Error::contract(format!(
            "template {} needs at least {need} candidate(s), got {}",
            template.id,
            cands.len()
        )));
    }
    let mut out = template.pattern.replace(SLOT_ALL, &bracket(&cands));
    if need == 2 {
        out = out
            .replace(SLOT_FIRST, &bracket(&cands[..1]))
            .replace(SLOT_REST, &bracket(&cands[1..]))
            .replace(SLOT_LAST, &bracket(&cands[cands.len() - 1..]));
    }
    Ok(out)
}

/// Retrieved knowledge for one example: per-candidate triples (in candidate
/// order) and concept definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle<T> {
    pub triples: Vec<CandidateTriples<T>>,
    pub definitions: Vec<DefinitionEntry>,
}

impl<T> Default for KnowledgeBundle<T> {
    fn default() -> Self {
        KnowledgeBundle {
            triples: Vec::new(),
            definitions: Vec::new(),
        }
    }
}

impl<T: Scalar> KnowledgeBundle<T> {
    pub fn is_empty(&self) -> bool {
        self.definitions.is_empty() && self.triples.iter().all(|c| c.triples.is_empty())
    }
}

/// `triples [SEP] definitions [SEP]`: triples as `head relation tail` and
/// definitions as `concept: text`, each part joined by `"; "`.
pub fn serialize_knowledge<T>(bundle: &KnowledgeBundle<T>) -> String {
    let triples = bundle
        .triples
        .iter()
        .flat_map(|c| c.triples.iter().map(|t| t.verbalize()))
        .collect::<Vec<_>>()
        .join("; ");
    let definitions = bundle
        .definitions
        .iter()
        .map(DefinitionEntry::verbalize)
        .collect::<Vec<_>>()
        .join("; ");
    format!("{triples}{SEP}{definitions} {SEP_TOKEN}")
}

/// Everything the generator sees for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInput<T> {
    pub task_prefix: String,
    pub question: String,
    pub candidates: Vec<String>,
    pub concepts: Vec<String>,
    pub knowledge: KnowledgeBundle<T>,
    pub prompt: String,
}

fn check_field(name: &str, value: &str) -> Result<()> {
    if value.contains(SEP_TOKEN) {
        return Err(Error::Format(format!("{name} contains {SEP_TOKEN}")));
    }
    Ok(())
}

impl<T: Scalar> GeneratorInput<T> {
    /// Validates the fields so that the built string always parses back.
    /// No field may contain `[SEP]`; the question and candidates may not
    /// contain the `" ; "` joiner or end in `" ;"` either.
    pub fn new(
        task_prefix: impl Into<String>,
        question: impl Into<String>,
        candidates: Vec<String>,
        concepts: Vec<String>,
        knowledge: KnowledgeBundle<T>,
        prompt: impl Into<String>,
    ) -> Result<Self> {
        let gi = GeneratorInput {
            task_prefix: task_prefix.into(),
            question: question.into(),
            candidates,
            concepts,
            knowledge,
            prompt: prompt.into(),
        };
        if gi.task_prefix.trim().is_empty() {
            return Err(Error::Format("empty task prefix".into()));
        }
        if gi.candidates.is_empty() {
            return Err(Error::Format("no candidates".into()));
        }
        check_field("task prefix", &gi.task_prefix)?;
        check_field("question", &gi.question)?;
        check_field("prompt", &gi.prompt)?;
        for c in &gi.concepts {
            check_field("concept", c)?;
        }
        for c in std::iter::once(&gi.question).chain(&gi.candidates) {
            check_field("candidate", c)?;
            // a trailing " ;" would merge with the joiner that follows it
            if c.contains(CANDIDATE_JOINER) || c.ends_with(CANDIDATE_JOINER.trim_end()) {
                return Err(Error::Format(format!(
                    "{c:?} would be split on {CANDIDATE_JOINER:?}"
                )));
            }
        }
        for d in &gi.knowledge.definitions {
            check_field("definition", &d.text)?;
        }
        Ok(gi)
    }

    pub fn segments(&self) -> GeneratorSegments {
        let mut qc = self.question.clone();
        for c in &self.candidates {
            qc.push_str(CANDIDATE_JOINER);
            qc.push_str(c);
        }
        GeneratorSegments {
            task_prefix: self.task_prefix.clone(),
            question_candidates: qc,
            concepts: self.concepts.join(", "),
            knowledge: serialize_knowledge(&self.knowledge),
            prompt: self.prompt.clone(),
        }
    }
}

pub fn build_generator_input<T: Scalar>(gi: &GeneratorInput<T>) -> String {
    gi.segments().join()
}

/// The five segments of a generator input string, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSegments {
    pub task_prefix: String,
    pub question_candidates: String,
    pub concepts: String,
    pub knowledge: String,
    pub prompt: String,
}

impl GeneratorSegments {
    pub fn join(&self) -> String {
        [
            self.task_prefix.as_str(),
            &self.question_candidates,
            &self.concepts,
            &self.knowledge,
            &self.prompt,
        ]
        .join(SEP)
    }

    /// Question followed by the candidates.
    pub fn question_and_candidates(&self) -> (&str, Vec<&str>) {
        let mut parts = self.question_candidates.split(CANDIDATE_JOINER);
        let question = parts.next().unwrap_or_default();
        (question, parts.collect())
    }

    /// Triples part and definitions part of the knowledge segment.
    pub fn knowledge_parts(&self) -> (&str, &str) {
        let k = self.knowledge.as_str();
        let k = k.strip_suffix(SEP_TOKEN).unwrap_or(k).trim_end_matches(' ');
        match k.split_once(SEP) {
            Some((t, d)) => (t, d),
            None => (k.strip_suffix(" [SEP]").unwrap_or(k), ""),
        }
    }
}

/// Splits a generator input back into its segments. The first three and the
/// last segment never contain the separator, so the knowledge segment is
/// whatever lies between the third separator and the last one.
pub fn parse_generator_input(s: &str) -> Result<GeneratorSegments> {
    let mut rest = s;
    let mut head = Vec::with_capacity(3);
    for _ in 0..3 {
        let (seg, tail) = rest.split_once(SEP).ok_or_else(|| {
            Error::Format(format!("expected 5 segments, found {}", head.len() + 1))
        })?;
        head.push(seg);
        rest = tail;
    }
    let (knowledge, prompt) = rest
        .rsplit_once(SEP)
        .ok_or_else(|| Error::Format("expected 5 segments, found 4".into()))?;
    Ok(GeneratorSegments {
        task_prefix: head[0].to_owned(),
        question_candidates: head[1].to_owned(),
        concepts: head[2].to_owned(),
        knowledge: knowledge.to_owned(),
        prompt: prompt.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::MatchForm;
    use crate::kb::KbTriple;

    fn magazine_candidates() -> Vec<String> {
        ["doctor", "bookstore", "market", "train station", "mortuary"]
            .map(String::from)
            .to_vec()
    }

    fn def(concept: &str, text: &str) -> DefinitionEntry {
        DefinitionEntry {
            concept: concept.into(),
            matched_headword: concept.into(),
            match_form: MatchForm::Original,
            text: text.into(),
        }
    }

    #[test]
    fn seven_templates() {
        let ts = default_templates();
        assert_eq!(ts.len(), 7);
        let pairwise: Vec<u32> = ts
            .iter()
            .filter(|t| t.min_candidates() == 2)
            .map(|t| t.id)
            .collect();
        assert_eq!(pairwise, [2, 4, 5, 6, 7]);
    }

    #[test]
    fn template_one_magazine() {
        let t = &default_templates()[0];
        assert_eq!(
            instantiate_prompt(t, &magazine_candidates()).unwrap(),
            "Given concept sets [doctor, bookstore, market, train station, mortuary], the difference among them is ..."
        );
    }

    #[test]
    fn template_four_pair() {
        let t = &default_templates()[3];
        assert_eq!(
            instantiate_prompt(t, &["a", "b"]).unwrap(),
            "Given concepts, [a] can, but [b] can not ..."
        );
        assert!(matches!(
            instantiate_prompt(t, &["a"]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn template_two_uses_last() {
        let t = &default_templates()[1];
        assert_eq!(
            instantiate_prompt(t, &["a", "b", "c"]).unwrap(),
            "Given [a, b, c], while [a] can ..., ..., [c] can not ..."
        );
    }

    #[test]
    fn template_without_slot_rejected() {
        assert!(PromptTemplate::new(9, "no slots here").is_err());
    }

    #[test]
    fn serialize_single_triple() {
        let b = KnowledgeBundle {
            triples: vec![CandidateTriples {
                candidate: "bookstore".into(),
                triples: vec![KbTriple::new("magazine", "AtLocation", "bookstore", 1.0).unwrap()],
            }],
            definitions: vec![],
        };
        assert_eq!(
            serialize_knowledge(&b),
            "magazine AtLocation bookstore [SEP]  [SEP]"
        );
    }

    #[test]
    fn serialize_empty() {
        assert_eq!(
            serialize_knowledge(&KnowledgeBundle::<f64>::default()),
            " [SEP]  [SEP]"
        );
    }

    #[test]
    fn serialize_with_definitions() {
        let b: KnowledgeBundle<f64> = KnowledgeBundle {
            triples: vec![],
            definitions: vec![def("bookstore", "A store"), def("train_station", "A place")],
        };
        assert_eq!(
            serialize_knowledge(&b),
            " [SEP] bookstore: A store; train station: A place [SEP]"
        );
    }

    fn sample(concepts: Vec<String>) -> GeneratorInput<f64> {
        GeneratorInput::new(
            TASK_PREFIX,
            "Where can you find a magazine",
            magazine_candidates(),
            concepts,
            KnowledgeBundle::default(),
            "p",
        )
        .unwrap()
    }

    #[test]
    fn build_layout() {
        let s = build_generator_input(&sample(vec!["magazine".into()]));
        assert!(s.starts_with(
            "Generate the contrastive explanation for this question [SEP] Where can you find a magazine ; doctor ; bookstore ; market ; train station ; mortuary [SEP] magazine [SEP] "
        ));
    }

    #[test]
    fn empty_concepts_segment_kept() {
        let s = build_generator_input(&sample(vec![]));
        assert!(
            s.contains("mortuary [SEP]  [SEP]  [SEP]  [SEP] [SEP] p"),
            "{s}"
        );
        let seg = parse_generator_input(&s).unwrap();
        assert_eq!(seg.concepts, "");
        assert_eq!(seg.knowledge, " [SEP]  [SEP]");
        assert_eq!(seg.prompt, "p");
    }

    #[test]
    fn parse_plain() {
        let seg = parse_generator_input("a [SEP] b [SEP] c [SEP] d [SEP] e").unwrap();
        assert_eq!(
            (
                seg.task_prefix.as_str(),
                seg.question_candidates.as_str(),
                seg.concepts.as_str(),
                seg.knowledge.as_str(),
                seg.prompt.as_str()
            ),
            ("a", "b", "c", "d", "e")
        );
    }

    #[test]
    fn parse_too_few() {
        assert!(matches!(
            parse_generator_input("a [SEP] b"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_generator_input("a [SEP] b [SEP] c [SEP] d"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_separator_in_fields() {
        let r = GeneratorInput::<f64>::new(
            TASK_PREFIX,
            "q [SEP] x",
            vec!["a".into()],
            vec![],
            KnowledgeBundle::default(),
            "p",
        );
        assert!(matches!(r, Err(Error::Format(_))));
        let r = GeneratorInput::<f64>::new(
            TASK_PREFIX,
            "q",
            vec!["a ; b".into()],
            vec![],
            KnowledgeBundle::default(),
            "p",
        );
        assert!(matches!(r, Err(Error::Format(_))));
        let r = GeneratorInput::<f64>::new(
            TASK_PREFIX,
            "q ;",
            vec!["a".into()],
            vec![],
            KnowledgeBundle::default(),
            "p",
        );
        assert!(matches!(r, Err(Error::Format(_))));
        let r = GeneratorInput::<f64>::new(
            TASK_PREFIX,
            "q",
            vec![";".into(), "; b".into()],
            vec![],
            KnowledgeBundle::default(),
            "p",
        );
        assert!(r.is_ok());
        let r = GeneratorInput::<f64>::new(
            " ",
            "q",
            vec!["a".into()],
            vec![],
            KnowledgeBundle::default(),
            "p",
        );
        assert!(r.is_err());
        let r = GeneratorInput::<f64>::new(
            TASK_PREFIX,
            "q",
            vec![],
            vec![],
            KnowledgeBundle::default(),
            "p",
        );
        assert!(r.is_err());
    }

    #[test]
    fn knowledge_parts_split() {
        let seg = GeneratorSegments {
            task_prefix: String::new(),
            question_candidates: String::new(),
            concepts: String::new(),
            knowledge: "t1; t2 [SEP] d1: x; d2: y [SEP]".into(),
            prompt: String::new(),
        };
        assert_eq!(seg.knowledge_parts(), ("t1; t2", "d1: x; d2: y"));
        let seg = GeneratorSegments {
            knowledge: " [SEP]  [SEP]".into(),
            ..seg
        };
        assert_eq!(seg.knowledge_parts(), ("", ""));
    }
}
