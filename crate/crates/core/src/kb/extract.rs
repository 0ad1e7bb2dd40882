use serde::{Deserialize, Serialize};

use super::graph::{KbGraph, KbTriple};
use super::path::shortest_path;
use super::scoring::best_fallback_triple;
use crate::Scalar;

pub const DEFAULT_MAX_HOPS: usize = 3;

/// Triples retrieved for one candidate concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTriples<T> {
    pub candidate: String,
    pub triples: Vec<KbTriple<T>>,
}

/// For every candidate concept, the triples along the shortest path from the
/// nearest question concept (earlier question concepts win ties). When no
/// path exists within `max_hops`, falls back to the best-scoring incident
/// triple; when there is none either, the list is empty.
///
/// A candidate that is itself a question concept has only a zero-length path,
/// which carries no triples, so it goes through the fallback.
pub fn extract_triples<T: Scalar>(
    question_concepts: &[String],
    candidate_concepts: &[String],
    graph: &KbGraph<T>,
    max_hops: usize,
) -> Vec<CandidateTriples<T>> {
    let mut out: Vec<CandidateTriples<T>> = Vec::with_capacity(candidate_concepts.len());
    for cand in candidate_concepts {
        if out.iter().any(|c| &c.candidate == cand) {
            continue;
        }
        let nearest = question_concepts
            .iter()
            .filter_map(|q| shortest_path(graph, q, cand, max_hops))
            .filter(|p| !p.is_empty())
            .min_by_key(|p| p.len());
        let triples = match nearest {
            Some(path) => path.triples().cloned().collect(),
            None => best_fallback_triple(graph, cand)
                .cloned()
                .into_iter()
                .collect(),
        };
        out.push(CandidateTriples {
            candidate: cand.clone(),
            triples,
        });
    }
    out
}
