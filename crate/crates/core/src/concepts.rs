//! Concept recognition by greedy longest match against a lexicon, plus the
//! top-k selection applied to question-stem concepts.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::text::{normalize_concept, read_list, tokenize, Stopwords, Token};

pub const DEFAULT_CONCEPT_LIMIT: usize = 3;

/// A recognized concept mention. Token indices refer to [`tokenize`] output
/// of the text it was found in; `token_end` is exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpan {
    pub surface: String,
    pub concept_id: String,
    pub token_start: usize,
    pub token_end: usize,
    pub score: f64,
}

impl ConceptSpan {
    pub fn token_len(&self) -> usize {
        self.token_end - self.token_start
    }
}

/// Anything that can find concept mentions in text.
pub trait ConceptRecognizer: Send + Sync {
    fn recognize(&self, text: &str) -> Vec<ConceptSpan>;
}

#[derive(Debug, Clone)]
pub struct RecognizerLexicon {
    entries: HashSet<String>,
    max_tokens: usize,
    stopwords: Stopwords,
}

impl RecognizerLexicon {
    /// Entries are normalized to concept-ids; ones that normalize to nothing
    /// are dropped.
    pub fn new<I, S>(entries: I, stopwords: Stopwords) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries: HashSet<String> = entries
            .into_iter()
            .map(|e| normalize_concept(e.as_ref()))
            .filter(|e| !e.is_empty())
            .collect();
        let max_tokens = entries
            .iter()
            .map(|e| e.split('_').count())
            .max()
            .unwrap_or(0);
        RecognizerLexicon {
            entries,
            max_tokens,
            stopwords,
        }
    }

    pub fn load(lexicon: &Path, stopwords: Option<&Path>) -> Result<Self> {
        let entries = read_list(lexicon)?;
        let stopwords = match stopwords {
            Some(p) => Stopwords::load(p)?,
            None => Stopwords::default(),
        };
        Ok(Self::new(entries, stopwords))
    }

    pub fn contains(&self, concept_id: &str) -> bool {
        self.entries.contains(concept_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ConceptRecognizer for RecognizerLexicon {
    fn recognize(&self, text: &str) -> Vec<ConceptSpan> {
        recognize(text, self)
    }
}

/// Left-to-right greedy longest match. Spans never overlap; a single-token
/// stopword never matches. Each span is scored by its token length.
pub fn recognize(text: &str, lexicon: &RecognizerLexicon) -> Vec<ConceptSpan> {
    let tokens = tokenize(text);
    let norms: Vec<String> = tokens.iter().map(Token::norm).collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lexicon.max_tokens.min(tokens.len() - i);
        let hit = (1..=longest).rev().find(|&len| {
            if len == 1 && lexicon.stopwords.contains(&norms[i]) {
                return false;
            }
            lexicon.entries.contains(&norms[i..i + len].join("_"))
        });
        match hit {
            Some(len) => {
                let surface = &text[tokens[i].start..tokens[i + len - 1].end];
                spans.push(ConceptSpan {
                    surface: surface.to_owned(),
                    concept_id: norms[i..i + len].join("_"),
                    token_start: i,
                    token_end: i + len,
                    score: len as f64,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    spans
}

/// Keeps the `limit` highest-scoring spans when there are more than `limit`,
/// otherwise everything. Ties go to the earlier span; output keeps text
/// order.
pub fn rank_and_truncate(spans: &[ConceptSpan], limit: usize) -> Vec<ConceptSpan> {
    if spans.len() <= limit {
        return spans.to_vec();
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| {
        spans[b]
            .score
            .total_cmp(&spans[a].score)
            .then(spans[a].token_start.cmp(&spans[b].token_start))
    });
    order.truncate(limit);
    order.sort_unstable();
    order.into_iter().map(|i| spans[i].clone()).collect()
}

/// Concepts of one QA example: the question stem (after top-k selection) and
/// each candidate (kept in full).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleConcepts {
    pub question: Vec<ConceptSpan>,
    pub candidates: Vec<Vec<ConceptSpan>>,
}

impl ExampleConcepts {
    pub fn recognize<R: ConceptRecognizer + ?Sized>(
        recognizer: &R,
        question: &str,
        candidates: &[&str],
        limit: usize,
    ) -> Self {
        ExampleConcepts {
            question: rank_and_truncate(&recognizer.recognize(question), limit),
            candidates: candidates.iter().map(|c| recognizer.recognize(c)).collect(),
        }
    }

    pub fn question_ids(&self) -> Vec<String> {
        dedup(self.question.iter().map(|s| s.concept_id.clone()))
    }

    pub fn candidate_ids(&self) -> Vec<String> {
        dedup(
            self.candidates
                .iter()
                .flatten()
                .map(|s| s.concept_id.clone()),
        )
    }

    /// Question concepts followed by candidate concepts, first occurrence
    /// wins.
    pub fn all_ids(&self) -> Vec<String> {
        dedup(self.question_ids().into_iter().chain(self.candidate_ids()))
    }
}

fn dedup<I: IntoIterator<Item = String>>(ids: I) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.into_iter()
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon(entries: &[&str]) -> RecognizerLexicon {
        RecognizerLexicon::new(entries.iter().copied(), Stopwords::default())
    }

    fn span(start: usize, len: usize) -> ConceptSpan {
        ConceptSpan {
            surface: format!("s{start}"),
            concept_id: format!("s{start}"),
            token_start: start,
            token_end: start + len,
            score: len as f64,
        }
    }

    #[test]
    fn magazine_concepts() {
        let lex = lexicon(&[
            "magazine",
            "doctor",
            "bookstore",
            "market",
            "train_station",
            "mortuary",
            "train",
            "station",
        ]);
        let cands = ["doctor", "bookstore", "market", "train station", "mortuary"];
        let c = ExampleConcepts::recognize(&lex, "Where can you find a magazine", &cands, 3);
        assert_eq!(
            c.all_ids(),
            [
                "magazine",
                "doctor",
                "bookstore",
                "market",
                "train_station",
                "mortuary"
            ]
        );
    }

    #[test]
    fn empty_text() {
        assert!(recognize("", &lexicon(&["a_b"])).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let lex = lexicon(&["train", "station", "train_station"]);
        let spans = recognize("train station", &lex);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].concept_id, "train_station");
        assert_eq!(spans[0].surface, "train station");
        assert_eq!(spans[0].score, 2.0);
    }

    #[test]
    fn single_stopword_never_matches() {
        let lex = lexicon(&["can", "can_opener"]);
        let spans = recognize("you can use a can opener", &lex);
        let ids: Vec<_> = spans.iter().map(|s| s.concept_id.as_str()).collect();
        assert_eq!(ids, ["can_opener"]);
    }

    #[test]
    fn surface_keeps_original_case_and_punctuation() {
        let lex = lexicon(&["train_station"]);
        let spans = recognize("At the Train-Station.", &lex);
        assert_eq!(spans[0].surface, "Train-Station");
        assert_eq!(spans[0].concept_id, normalize_concept(&spans[0].surface));
    }

    #[test]
    fn truncate_keeps_all_under_limit() {
        let spans = vec![span(0, 1), span(3, 1)];
        assert_eq!(rank_and_truncate(&spans, 3), spans);
    }

    #[test]
    fn truncate_single_tokens_keeps_earliest() {
        let spans: Vec<_> = (0..5).map(|i| span(i * 2, 1)).collect();
        let kept = rank_and_truncate(&spans, 3);
        let starts: Vec<_> = kept.iter().map(|s| s.token_start).collect();
        assert_eq!(starts, [0, 2, 4]);
    }

    #[test]
    fn truncate_prefers_longer() {
        // lengths {2,1,1,1} with the 2-token span last
        let spans = vec![span(0, 1), span(1, 1), span(2, 1), span(3, 2)];
        let kept = rank_and_truncate(&spans, 3);
        let starts: Vec<_> = kept.iter().map(|s| s.token_start).collect();
        assert_eq!(starts, [0, 1, 3]);
    }
}
