//! Contrastive explanation generation behind a pluggable backend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{parse_generator_input, GeneratorSegments};
use crate::remote::{JsonClient, RetryPolicy, DEFAULT_IN_FLIGHT};
use crate::text::{concept_surface, normalize_concept, split_sentences};

pub const DEFAULT_MAX_LENGTH: usize = 256;
pub const GENERATOR_URL_ENV: &str = "CPACE_GENERATOR_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub input: String,
    pub max_length: usize,
}

impl GenerationRequest {
    pub fn new(input: impl Into<String>, max_length: usize) -> Result<Self> {
        let input = input.into();
        if max_length == 0 {
            return Err(Error::contract("max_length must be at least 1"));
        }
        parse_generator_input(&input)?;
        Ok(GenerationRequest { input, max_length })
    }

    pub fn segments(&self) -> Result<GeneratorSegments> {
        parse_generator_input(&self.input)
    }
}

/// Sentences of an explanation attributed to one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSentences {
    pub candidate: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_candidate: Option<Vec<CandidateSentences>>,
}

impl Explanation {
    pub fn sentences_for(&self, candidate: &str) -> Option<&[String]> {
        self.per_candidate
            .as_ref()?
            .iter()
            .find(|c| c.candidate == candidate)
            .map(|c| c.sentences.as_slice())
    }
}

/// A text-generation service. Implementations must tolerate concurrent
/// calls.
pub trait GeneratorBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &GenerationRequest) -> Result<String>;
}

/// Runs the backend, truncates to `max_length` whitespace tokens and
/// attributes sentences to candidates.
pub fn generate<B: GeneratorBackend + ?Sized>(
    req: &GenerationRequest,
    backend: &B,
) -> Result<Explanation> {
    let raw = backend.complete(req)?;
    let text = truncate_tokens(raw.trim(), req.max_length);
    if text.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let segs = req.segments()?;
    let (_, candidates) = segs.question_and_candidates();
    let per_candidate = split_per_candidate(&text, &candidates);
    Ok(Explanation {
        text,
        backend_id: backend.id(),
        per_candidate: Some(per_candidate),
    })
}

pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        text.to_owned()
    } else {
        tokens[..max_tokens].join(" ")
    }
}

/// Assigns each sentence to the candidate it starts with (longest candidate
/// first, case-insensitive). Sentences that start with no candidate continue
/// the previous candidate's list. The stored sentence is the body after the
/// leading candidate mention and, when present, after the label clause
/// ending at the first colon.
pub fn split_per_candidate(text: &str, candidates: &[&str]) -> Vec<CandidateSentences> {
    let mut out: Vec<CandidateSentences> = candidates
        .iter()
        .map(|c| CandidateSentences {
            candidate: (*c).to_owned(),
            sentences: Vec::new(),
        })
        .collect();
    let mut by_len: Vec<(usize, String)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.to_lowercase()))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    by_len.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut current: Option<usize> = None;
    for sentence in split_sentences(text) {
        let lower = sentence.to_lowercase();
        let hit = by_len.iter().find(|(_, c)| {
            lower.starts_with(c.as_str())
                && !lower[c.len()..].starts_with(|ch: char| ch.is_alphanumeric())
        });
        match hit {
            Some((i, c)) => {
                let rest = &sentence[c.len()..];
                let body = match rest.split_once(':') {
                    Some((_, after)) => after,
                    None => rest,
                };
                out[*i].sentences.push(body.trim().to_owned());
                current = Some(*i);
            }
            None => {
                if let Some(i) = current {
                    out[i].sentences.push(sentence.to_owned());
                }
            }
        }
    }
    out
}

/// Deterministic offline backend. It emits one line per candidate built from
/// the knowledge segment: `c1: <knowledge>.` for the first candidate,
/// `ci is not supported: <knowledge>.` for the others, and
/// `ci: no supporting knowledge.` where nothing was retrieved. A candidate's
/// knowledge is its definition when there is one, else the triples that
/// mention it.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

pub const MOCK_BACKEND_ID: &str = "mock";

impl GeneratorBackend for MockGenerator {
    fn id(&self) -> String {
        MOCK_BACKEND_ID.to_owned()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<String> {
        mock_text(&req.segments()?)
    }
}

pub fn mock_generate(req: &GenerationRequest) -> Result<Explanation> {
    generate(req, &MockGenerator)
}

fn mock_text(segs: &GeneratorSegments) -> Result<String> {
    let (_, candidates) = segs.question_and_candidates();
    if candidates.is_empty() {
        return Err(Error::Format("no candidates in generator input".into()));
    }
    let (triples, defs) = segs.knowledge_parts();
    let triples: Vec<&str> = triples
        .split("; ")
        .filter(|t| !t.trim().is_empty())
        .collect();

    let mut labels: Vec<String> = candidates.iter().map(|c| display_key(c)).collect();
    labels.extend(
        segs.concepts
            .split(", ")
            .filter(|c| !c.trim().is_empty())
            .map(display_key),
    );
    let definitions = split_definitions(defs, &labels);

    let lines: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, cand)| {
            let key = display_key(cand);
            let knowledge = definitions
                .iter()
                .find(|(label, _)| *label == key)
                .map(|(_, text)| clean(text))
                .or_else(|| {
                    let hits: Vec<&str> = triples
                        .iter()
                        .copied()
                        .filter(|t| contains_phrase(t, &key))
                        .collect();
                    (!hits.is_empty()).then(|| clean(&hits.join("; ")))
                })
                .filter(|k| !k.is_empty());
            match (i, knowledge) {
                (_, None) => format!("{cand}: no supporting knowledge."),
                (0, Some(k)) => format!("{cand}: {k}."),
                (_, Some(k)) => format!("{cand} is not supported: {k}."),
            }
        })
        .collect();
    Ok(lines.join(" "))
}

fn display_key(s: &str) -> String {
    concept_surface(&normalize_concept(s))
}

fn clean(text: &str) -> String {
    text.trim()
        .trim_end_matches(|c: char| matches!(c, '.' | ';' | ',' | ':') || c.is_whitespace())
        .to_owned()
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let words: Vec<String> = haystack
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect();
    let needle: Vec<&str> = phrase.split_whitespace().collect();
    !needle.is_empty()
        && words
            .windows(needle.len())
            .any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
}

/// Splits `label: text; label: text` where texts may themselves contain
/// `"; "`. An entry starts wherever a known label followed by `": "` sits at
/// the beginning or right after `"; "`.
fn split_definitions<'a>(defs: &'a str, labels: &[String]) -> Vec<(String, &'a str)> {
    let mut starts: Vec<(usize, &str)> = Vec::new();
    for label in labels {
        let pat = format!("{label}: ");
        let mut from = 0;
        while let Some(off) = defs[from..].find(&pat) {
            let at = from + off;
            if at == 0 || defs[..at].ends_with("; ") {
                starts.push((at, label));
            }
            from = at + 1;
        }
    }
    // at one position keep the longest label
    starts.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.len().cmp(&a.1.len())));
    starts.dedup_by_key(|s| s.0);

    starts
        .iter()
        .enumerate()
        .map(|(k, &(at, label))| {
            let body_start = at + label.len() + 2;
            let end = starts.get(k + 1).map_or(defs.len(), |n| n.0 - 2);
            (
                label.to_owned(),
                defs[body_start..end.max(body_start)].trim(),
            )
        })
        .collect()
}

/// Client for a remote `POST /generate` service.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: JsonClient,
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    input: &'a str,
    max_length: usize,
}

#[derive(Deserialize)]
struct GenerateReply {
    explanation: String,
}

impl RemoteGenerator {
    pub fn new(base_url: &str) -> Self {
        Self::with_policy(base_url, RetryPolicy::default(), DEFAULT_IN_FLIGHT)
    }

    pub fn with_policy(base_url: &str, policy: RetryPolicy, max_in_flight: usize) -> Self {
        RemoteGenerator {
            client: JsonClient::new(base_url, policy, max_in_flight),
        }
    }
}

impl GeneratorBackend for RemoteGenerator {
    fn id(&self) -> String {
        format!("remote:{}", self.client.base_url())
    }

    fn complete(&self, req: &GenerationRequest) -> Result<String> {
        let reply: GenerateReply = self.client.post(
            "/generate",
            &GenerateBody {
                input: &req.input,
                max_length: req.max_length,
            },
        )?;
        Ok(reply.explanation)
    }
}
