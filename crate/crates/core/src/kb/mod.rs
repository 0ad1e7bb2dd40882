//! ConceptNet-style relational store: loading, shortest concept-to-concept
//! paths, relation-group statistics and fallback triple scoring.

mod extract;
mod graph;
mod path;
mod scoring;

pub use extract::{extract_triples, CandidateTriples, DEFAULT_MAX_HOPS};
pub use graph::{load_graph, KbGraph, KbTriple};
pub use path::{shortest_path, Direction, KbPath, PathStep};
pub use scoring::{best_fallback_triple, cluster_stats, score_triple, ClusterStats};
