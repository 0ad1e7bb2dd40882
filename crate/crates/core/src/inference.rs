//! Explanation-enhanced answer selection: candidate scoring, softmax,
//! argmax and the mean cross-entropy objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::Explanation;
use crate::remote::{JsonClient, RetryPolicy, DEFAULT_IN_FLIGHT};
use crate::text::Stopwords;
use crate::Scalar;

pub const SCORER_URL_ENV: &str = "CPACE_SCORER_URL";

/// One score per candidate, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateScores<T>(Vec<T>);

impl<T: Scalar> CandidateScores<T> {
    pub fn new(scores: Vec<T>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::contract(format!("score {i} is not finite")));
        }
        Ok(CandidateScores(scores))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult<T> {
    pub probs: Vec<T>,
    pub predicted_index: usize,
    pub gold_index: Option<usize>,
    /// `-ln probs[gold]`, present when the gold index is known.
    pub loss_contribution: Option<T>,
}

impl<T: Scalar> InferenceResult<T> {
    pub fn from_scores(scores: &CandidateScores<T>, gold_index: Option<usize>) -> Result<Self> {
        let probs = softmax(scores)?;
        let loss_contribution = match gold_index {
            Some(g) if g < probs.len() => Some(-probs[g].ln()),
            Some(g) => {
                return Err(Error::contract(format!(
                    "gold index {g} out of range for {} candidates",
                    probs.len()
                )))
            }
            None => None,
        };
        Ok(InferenceResult {
            predicted_index: predict(&probs),
            probs,
            gold_index,
            loss_contribution,
        })
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.gold_index.map(|g| g == self.predicted_index)
    }
}

/// Max-shifted exponential normalization.
pub fn softmax<T: Scalar>(scores: &CandidateScores<T>) -> Result<Vec<T>> {
    let s = scores.as_slice();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("softmax of non-finite scores"));
    }
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = s.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Index of the largest probability; the lowest index wins ties.
pub fn predict<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Mean of `-ln p(gold)` over the examples.
pub fn cross_entropy<T: Scalar>(results: &[InferenceResult<T>]) -> Result<T> {
    if results.is_empty() {
        return Err(Error::contract("cross-entropy over zero examples"));
    }
    let mut total = T::zero();
    for (i, r) in results.iter().enumerate() {
        let loss = r
            .loss_contribution
            .ok_or_else(|| Error::contract(format!("result {i} has no gold index")))?;
        total = total + loss;
    }
    Ok(total / T::from_count(results.len()))
}

pub fn accuracy<T: Scalar>(predictions: &[usize], golds: &[usize]) -> Result<T> {
    if predictions.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} predictions vs {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("accuracy over zero examples"));
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(T::from_count(hits) / T::from_count(predictions.len()))
}

/// Which part of the explanation each candidate is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationMode {
    /// The candidate's own sentences when they are attributed, else the
    /// whole text.
    #[default]
    PerCandidate,
    /// The whole explanation for every candidate.
    Whole,
}

/// Scores answer candidates given the question and an explanation.
pub trait CandidateScorer<T>: Send + Sync {
    fn score(
        &self,
        question: &str,
        candidates: &[String],
        explanation: &Explanation,
    ) -> Result<Vec<T>>;
}

/// Checks the scorer's output against the candidate list.
pub fn score_candidates<T: Scalar, S: CandidateScorer<T> + ?Sized>(
    question: &str,
    candidates: &[String],
    explanation: &Explanation,
    scorer: &S,
) -> Result<CandidateScores<T>> {
    if candidates.is_empty() {
        return Err(Error::contract("no candidates to score"));
    }
    let raw = scorer.score(question, candidates, explanation)?;
    if raw.len() != candidates.len() {
        return Err(Error::Scorer(format!(
            "{} scores for {} candidates",
            raw.len(),
            candidates.len()
        )));
    }
    CandidateScores::new(raw).map_err(|e| Error::Scorer(e.to_string()))
}

/// Offline scorer: the number of distinct content words shared by the
/// candidate's explanation text and the question plus that candidate.
#[derive(Debug, Clone, Default)]
pub struct LexicalScorer {
    pub stopwords: Stopwords,
    pub mode: ExplanationMode,
}

impl LexicalScorer {
    pub fn new(stopwords: Stopwords, mode: ExplanationMode) -> Self {
        LexicalScorer { stopwords, mode }
    }
}

pub fn baseline_lexical_scorer<T: Scalar>(
    question: &str,
    candidates: &[String],
    explanation: &Explanation,
    stopwords: &Stopwords,
    mode: ExplanationMode,
) -> CandidateScores<T> {
    let scores = candidates
        .iter()
        .map(|cand| {
            let evidence = match (mode, explanation.sentences_for(cand)) {
                (ExplanationMode::PerCandidate, Some(sents)) => sents.join(" "),
                _ => explanation.text.clone(),
            };
            let query: std::collections::HashSet<String> = stopwords
                .content_words(question)
                .into_iter()
                .chain(stopwords.content_words(cand))
                .collect();
            let shared: std::collections::HashSet<String> = stopwords
                .content_words(&evidence)
                .into_iter()
                .filter(|w| query.contains(w))
                .collect();
            T::from_count(shared.len())
        })
        .collect();
    CandidateScores(scores)
}

impl<T: Scalar> CandidateScorer<T> for LexicalScorer {
    fn score(
        &self,
        question: &str,
        candidates: &[String],
        explanation: &Explanation,
    ) -> Result<Vec<T>> {
        Ok(baseline_lexical_scorer(
            question,
            candidates,
            explanation,
            &self.stopwords,
            self.mode,
        )
        .0)
    }
}

/// Client for a remote `POST /score` service.
#[derive(Debug)]
pub struct RemoteScorer {
    client: JsonClient,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    question: &'a str,
    candidates: &'a [String],
    explanation: &'a str,
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

impl RemoteScorer {
    pub fn new(base_url: &str) -> Self {
        Self::with_policy(base_url, RetryPolicy::default(), DEFAULT_IN_FLIGHT)
    }

    pub fn with_policy(base_url: &str, policy: RetryPolicy, max_in_flight: usize) -> Self {
        RemoteScorer {
            client: JsonClient::new(base_url, policy, max_in_flight),
        }
    }
}

impl<T: Scalar> CandidateScorer<T> for RemoteScorer {
    fn score(
        &self,
        question: &str,
        candidates: &[String],
        explanation: &Explanation,
    ) -> Result<Vec<T>> {
        let reply: ScoreReply = self.client.post(
            "/score",
            &ScoreBody {
                question,
                candidates,
                explanation: &explanation.text,
            },
        )?;
        reply
            .scores
            .into_iter()
            .map(|s| {
                T::from_f64(s).ok_or_else(|| Error::Scorer(format!("unrepresentable score {s}")))
            })
            .collect()
    }
}
