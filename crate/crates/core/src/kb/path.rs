use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{KbGraph, KbTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Walked head to tail.
    Forward,
    /// Walked tail to head.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep<T> {
    pub triple: KbTriple<T>,
    pub direction: Direction,
}

impl<T> PathStep<T> {
    pub fn from_node(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.triple.head,
            Direction::Reverse => &self.triple.tail,
        }
    }

    pub fn to_node(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.triple.tail,
            Direction::Reverse => &self.triple.head,
        }
    }
}

/// A walk through the graph; consecutive steps share an endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbPath<T> {
    pub steps: Vec<PathStep<T>>,
}

impl<T> KbPath<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &KbTriple<T>> {
        self.steps.iter().map(|s| &s.triple)
    }
}

/// Minimum-hop path from `source` to `dest`, walking edges in either
/// direction.
///
/// Neighbors are expanded in `(relation, far endpoint, direction)` order, so
/// among equally short paths the lexicographically first is returned.
/// Returns `None` when an endpoint is missing or no path of at most
/// `max_hops` steps exists. With `max_hops == 0` only the zero-length path
/// (`source == dest`) can be found.
pub fn shortest_path<T: Clone>(
    graph: &KbGraph<T>,
    source: &str,
    dest: &str,
    max_hops: usize,
) -> Option<KbPath<T>> {
    if !graph.contains(source) || !graph.contains(dest) {
        return None;
    }
    if source == dest {
        return Some(KbPath { steps: Vec::new() });
    }

    // node -> (edge index, direction, previous node)
    let mut parent: HashMap<&str, (usize, Direction, &str)> = HashMap::new();
    let mut depth: HashMap<&str, usize> = HashMap::from([(source, 0)]);
    let mut queue = VecDeque::from([source]);
    let edges = graph.edges();

    while let Some(node) = queue.pop_front() {
        let d = depth[node];
        if d == max_hops {
            continue;
        }
        let mut nbrs: Vec<(&str, &str, Direction, usize)> = graph
            .outgoing(node)
            .iter()
            .map(|&i| {
                (
                    edges[i].relation.as_str(),
                    edges[i].tail.as_str(),
                    Direction::Forward,
                    i,
                )
            })
            .chain(graph.incoming(node).iter().map(|&i| {
                (
                    edges[i].relation.as_str(),
                    edges[i].head.as_str(),
                    Direction::Reverse,
                    i,
                )
            }))
            .collect();
        nbrs.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

        for (_, far, dir, i) in nbrs {
            if depth.contains_key(far) {
                continue;
            }
            depth.insert(far, d + 1);
            parent.insert(far, (i, dir, node));
            if far == dest {
                return Some(rebuild(edges, &parent, source, dest));
            }
            queue.push_back(far);
        }
    }
    None
}

fn rebuild<T: Clone>(
    edges: &[KbTriple<T>],
    parent: &HashMap<&str, (usize, Direction, &str)>,
    source: &str,
    dest: &str,
) -> KbPath<T> {
    let mut steps = Vec::new();
    let mut cur = dest;
    while cur != source {
        let (i, direction, prev) = parent[cur];
        steps.push(PathStep {
            triple: edges[i].clone(),
            direction,
        });
        cur = prev;
    }
    steps.reverse();
    KbPath { steps }
}
