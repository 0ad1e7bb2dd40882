use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{KbGraph, KbTriple};
use crate::error::{Error, Result};
use crate::Scalar;

/// Relation-group sizes around one concept. `total` is the number of
/// incident triples and each group holds the triples sharing a relation
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub concept: String,
    pub total: usize,
    pub group_sizes: BTreeMap<String, usize>,
}

pub fn cluster_stats<T>(graph: &KbGraph<T>, concept: &str) -> ClusterStats {
    let mut group_sizes = BTreeMap::new();
    let mut total = 0;
    for t in graph.incident(concept) {
        *group_sizes.entry(t.relation.clone()).or_insert(0) += 1;
        total += 1;
    }
    ClusterStats {
        concept: concept.to_owned(),
        total,
        group_sizes,
    }
}

/// Fallback triple score: the triple weight scaled by how rare its relation
/// group is among the concept's triples, `weight * total / group_size`.
pub fn score_triple<T: Scalar>(triple: &KbTriple<T>, stats: &ClusterStats) -> Result<T> {
    if stats.total == 0 {
        return Err(Error::contract(format!(
            "no triples around concept {:?}",
            stats.concept
        )));
    }
    let group = match stats.group_sizes.get(&triple.relation) {
        Some(&n) if n > 0 => n,
        _ => {
            return Err(Error::contract(format!(
                "relation {:?} has no group around {:?}",
                triple.relation, stats.concept
            )))
        }
    };
    Ok(triple.weight * T::from_count(stats.total) / T::from_count(group))
}

/// Highest-scoring triple incident to `concept`. Equal scores go to the
/// lexicographically smallest `(relation, head, tail)`.
pub fn best_fallback_triple<'g, T: Scalar>(
    graph: &'g KbGraph<T>,
    concept: &str,
) -> Option<&'g KbTriple<T>> {
    let stats = cluster_stats(graph, concept);
    let mut best: Option<(&KbTriple<T>, T)> = None;
    for t in graph.incident(concept) {
        let s = score_triple(t, &stats).expect("stats built from the same incident set");
        best = match best {
            None => Some((t, s)),
            Some((b, bs)) => match s.partial_cmp(&bs).unwrap_or(Ordering::Equal) {
                Ordering::Greater => Some((t, s)),
                Ordering::Equal if t.key() < b.key() => Some((t, s)),
                _ => Some((b, bs)),
            },
        };
    }
    best.map(|(t, _)| t)
}
