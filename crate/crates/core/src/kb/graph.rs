use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{concept_surface, normalize_concept};
use crate::Scalar;

/// A weighted `(head, relation, tail)` assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbTriple<T> {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub weight: T,
}

impl<T: Scalar> KbTriple<T> {
    pub fn new(
        head: impl AsRef<str>,
        relation: impl Into<String>,
        tail: impl AsRef<str>,
        weight: T,
    ) -> Result<Self> {
        let head = normalize_concept(head.as_ref());
        let tail = normalize_concept(tail.as_ref());
        let relation = relation.into().trim().to_owned();
        if head.is_empty() || tail.is_empty() || relation.is_empty() {
            return Err(Error::contract("triple fields must be non-empty"));
        }
        if !(weight.is_finite() && weight >= T::zero()) {
            return Err(Error::contract(format!(
                "triple weight must be finite and non-negative, got {weight}"
            )));
        }
        Ok(KbTriple {
            head,
            relation,
            tail,
            weight,
        })
    }
}

impl<T> KbTriple<T> {
    /// `head relation tail`, with concept underscores rendered as spaces.
    pub fn verbalize(&self) -> String {
        format!(
            "{} {} {}",
            concept_surface(&self.head),
            self.relation,
            concept_surface(&self.tail)
        )
    }

    pub fn touches(&self, concept: &str) -> bool {
        self.head == concept || self.tail == concept
    }

    pub(crate) fn key(&self) -> (&str, &str, &str) {
        (&self.relation, &self.head, &self.tail)
    }
}

/// Immutable edge store indexed by head and by tail.
///
/// Duplicate `(head, relation, tail)` assertions collapse into one edge that
/// keeps the maximum weight.
#[derive(Debug, Clone, PartialEq)]
pub struct KbGraph<T> {
    nodes: BTreeSet<String>,
    edges: Vec<KbTriple<T>>,
    by_head: HashMap<String, Vec<usize>>,
    by_tail: HashMap<String, Vec<usize>>,
}

impl<T> Default for KbGraph<T> {
    fn default() -> Self {
        KbGraph {
            nodes: BTreeSet::new(),
            edges: Vec::new(),
            by_head: HashMap::new(),
            by_tail: HashMap::new(),
        }
    }
}

impl<T: Scalar> KbGraph<T> {
    pub fn from_triples<I: IntoIterator<Item = KbTriple<T>>>(triples: I) -> Self {
        let mut slot: HashMap<(String, String, String), usize> = HashMap::new();
        let mut edges: Vec<KbTriple<T>> = Vec::new();
        for t in triples {
            let key = (t.head.clone(), t.relation.clone(), t.tail.clone());
            match slot.get(&key) {
                Some(&i) => {
                    if t.weight > edges[i].weight {
                        edges[i].weight = t.weight;
                    }
                }
                None => {
                    slot.insert(key, edges.len());
                    edges.push(t);
                }
            }
        }

        let mut graph = KbGraph {
            edges,
            ..Default::default()
        };
        for (i, e) in graph.edges.iter().enumerate() {
            graph.nodes.insert(e.head.clone());
            graph.nodes.insert(e.tail.clone());
            graph.by_head.entry(e.head.clone()).or_default().push(i);
            graph.by_tail.entry(e.tail.clone()).or_default().push(i);
        }
        graph
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        load_graph(BufReader::new(file))
    }
}

impl<T> KbGraph<T> {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.nodes.contains(concept)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn edges(&self) -> &[KbTriple<T>] {
        &self.edges
    }

    pub(crate) fn outgoing(&self, concept: &str) -> &[usize] {
        self.by_head.get(concept).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn incoming(&self, concept: &str) -> &[usize] {
        self.by_tail.get(concept).map_or(&[], Vec::as_slice)
    }

    /// One `relation<TAB>head<TAB>tail<TAB>weight` line per edge, in the
    /// order the edges were first seen.
    pub fn to_tsv(&self) -> String
    where
        T: fmt::Display,
    {
        self.edges
            .iter()
            .map(|t| format!("{}\t{}\t{}\t{}\n", t.relation, t.head, t.tail, t.weight))
            .collect()
    }

    /// Triples with `concept` at either end. A self-loop is reported once.
    pub fn incident(&self, concept: &str) -> impl Iterator<Item = &KbTriple<T>> + '_ {
        let out = self.outgoing(concept).iter();
        // incoming edges already have `concept` as tail
        let inc = self
            .incoming(concept)
            .iter()
            .filter(move |&&i| self.edges[i].head != self.edges[i].tail);
        out.chain(inc).map(move |&i| &self.edges[i])
    }
}

/// Reads `relation<TAB>head<TAB>tail<TAB>weight` records. Blank lines and
/// lines starting with `#` are skipped.
pub fn load_graph<T: Scalar, R: BufRead>(reader: R) -> Result<KbGraph<T>> {
    let mut triples = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                lineno,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let weight: T = cols[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, format!("non-numeric weight {:?}", cols[3])))?;
        let triple = KbTriple::new(cols[1], cols[0], cols[2], weight)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        triples.push(triple);
    }
    Ok(KbGraph::from_triples(triples))
}
