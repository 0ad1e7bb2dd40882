use std::collections::BTreeSet;

use cpace_core::kb::{
    best_fallback_triple, cluster_stats, extract_triples, load_graph, score_triple, shortest_path,
    Direction, KbGraph, KbTriple,
};
use proptest::prelude::*;

fn triple(rel: &str, h: &str, t: &str, w: f64) -> KbTriple<f64> {
    KbTriple::new(h, rel, t, w).unwrap()
}

/// Hop count of the shortest simple path by exhaustive enumeration over the
/// undirected view of the graph.
fn brute_force_hops(g: &KbGraph<f64>, src: &str, dst: &str, max_hops: usize) -> Option<usize> {
    if !g.contains(src) || !g.contains(dst) {
        return None;
    }
    fn dfs<'a>(
        g: &'a KbGraph<f64>,
        at: &'a str,
        dst: &str,
        seen: &mut Vec<&'a str>,
        left: usize,
        best: &mut Option<usize>,
    ) {
        if at == dst {
            let hops = seen.len() - 1;
            *best = Some(best.map_or(hops, |b| b.min(hops)));
            return;
        }
        if left == 0 {
            return;
        }
        for e in g.edges() {
            let next = if e.head == at {
                e.tail.as_str()
            } else if e.tail == at {
                e.head.as_str()
            } else {
                continue;
            };
            if seen.contains(&next) {
                continue;
            }
            seen.push(next);
            dfs(g, next, dst, seen, left - 1, best);
            seen.pop();
        }
    }
    let mut best = None;
    let mut seen = vec![src];
    dfs(g, src, dst, &mut seen, max_hops, &mut best);
    best
}

fn arb_graph() -> impl Strategy<Value = KbGraph<f64>> {
    (2usize..=12).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..3usize, 0..n, 1u32..5), 0..(2 * n)).prop_map(|edges| {
            KbGraph::from_triples(edges.into_iter().map(|(h, r, t, w)| {
                triple(
                    ["AtLocation", "IsA", "UsedFor"][r],
                    &format!("n{h}"),
                    &format!("n{t}"),
                    w as f64,
                )
            }))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn path_matches_exhaustive_search(g in arb_graph(), s in 0usize..12, d in 0usize..12) {
        let (s, d) = (format!("n{s}"), format!("n{d}"));
        let got = shortest_path(&g, &s, &d, 3);
        prop_assert_eq!(got.as_ref().map(|p| p.len()), brute_force_hops(&g, &s, &d, 3));
        if let Some(p) = got {
            // steps chain from source to destination
            let mut at = s.as_str();
            for step in &p.steps {
                prop_assert_eq!(step.from_node(), at);
                at = step.to_node();
            }
            prop_assert_eq!(at, d.as_str());
        }
    }

    #[test]
    fn group_sizes_sum_to_total(g in arb_graph(), c in 0usize..12) {
        let stats = cluster_stats(&g, &format!("n{c}"));
        prop_assert_eq!(stats.group_sizes.values().sum::<usize>(), stats.total);
    }

    #[test]
    fn score_decreases_with_group_size(w in 0.01f64..100.0, total in 2usize..50, k in 1usize..49) {
        prop_assume!(k < total);
        let t = triple("R", "a", "b", w);
        let stats = |nk: usize| cpace_core::kb::ClusterStats {
            concept: "a".into(),
            total,
            group_sizes: [("R".to_string(), nk)].into(),
        };
        let small = score_triple(&t, &stats(k)).unwrap();
        let large = score_triple(&t, &stats(k + 1)).unwrap();
        prop_assert!(large < small);
        prop_assert!((small - w * total as f64 / k as f64).abs() < 1e-9);
    }

    #[test]
    fn tsv_reload_is_identity(g in arb_graph()) {
        let once = g.to_tsv();
        let back: KbGraph<f64> = load_graph(once.as_bytes()).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(back.to_tsv(), once);
    }
}

#[test]
fn score_examples() {
    let t = triple("R", "a", "b", 2.0);
    let stats = cpace_core::kb::ClusterStats {
        concept: "a".into(),
        total: 10,
        group_sizes: [("R".to_string(), 5)].into(),
    };
    assert!((score_triple(&t, &stats).unwrap() - 4.0).abs() < 1e-9);
    let single = cpace_core::kb::ClusterStats {
        concept: "a".into(),
        total: 7,
        group_sizes: [("R".to_string(), 7)].into(),
    };
    assert!((score_triple(&t, &single).unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn fallback_prefers_rare_relation() {
    // six AtLocation triples and four IsA triples around "x"
    let mut ts: Vec<_> = (0..6)
        .map(|i| triple("AtLocation", "x", &format!("l{i}"), 1.0))
        .collect();
    ts.extend((0..4).map(|i| triple("IsA", "x", &format!("k{i}"), 1.0)));
    let g = KbGraph::from_triples(ts);
    let best = best_fallback_triple(&g, "x").unwrap();
    assert_eq!((best.relation.as_str(), best.tail.as_str()), ("IsA", "k0"));
}

#[test]
fn reverse_edges_are_walked() {
    let g = KbGraph::from_triples([triple("AtLocation", "magazine", "bookstore", 1.0)]);
    let p = shortest_path(&g, "bookstore", "magazine", 3).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p.steps[0].direction, Direction::Reverse);
}

#[test]
fn magazine_triples() {
    let g: KbGraph<f64> = KbGraph::load(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/magazine/graph.tsv"
    )))
    .unwrap();
    let cands: Vec<String> = ["doctor", "bookstore", "market", "train_station", "mortuary"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let out = extract_triples(&["magazine".to_string()], &cands, &g, 3);
    let verbal: BTreeSet<String> = out
        .iter()
        .flat_map(|c| c.triples.iter().map(|t| t.verbalize()))
        .collect();
    let expected: BTreeSet<String> = [
        "magazine AtLocation doctor",
        "magazine AtLocation bookstore",
        "magazine AtLocation market",
        "magazine AtLocation train station",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    assert_eq!(verbal, expected);
    assert!(out[4].triples.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn score_is_linear_in_weight(w in 0.01f64..100.0, a in 0.1f64..10.0, total in 1usize..40, k in 1usize..40) {
        prop_assume!(k <= total);
        let stats = cpace_core::kb::ClusterStats {
            concept: "a".into(),
            total,
            group_sizes: [("R".to_string(), k)].into(),
        };
        let one = score_triple(&triple("R", "a", "b", w), &stats).unwrap();
        let scaled = score_triple(&triple("R", "a", "b", a * w), &stats).unwrap();
        prop_assert!((scaled - a * one).abs() <= 1e-9 * scaled.abs().max(1.0));
    }

    #[test]
    fn connected_candidate_always_gets_triples(g in arb_graph(), q in 0usize..12, c in 0usize..12) {
        let (q, c) = (format!("n{q}"), format!("n{c}"));
        let has_edge = g.incident(&c).next().is_some();
        let out = extract_triples(&[q], std::slice::from_ref(&c), &g, 3);
        prop_assert_eq!(out.len(), 1);
        if has_edge {
            prop_assert!(!out[0].triples.is_empty());
        }
    }
}
