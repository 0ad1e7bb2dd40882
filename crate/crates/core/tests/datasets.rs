use cpace_core::datasets::{parse_qa, Choice, QaExample};
use proptest::prelude::*;

fn arb_example(arity: usize) -> impl Strategy<Value = QaExample> {
    (
        "[a-z0-9-]{1,10}",
        "[ -~]{0,40}",
        prop::collection::vec("[ -~\u{e9}\u{4e2d}]{0,12}", arity),
        prop::option::of(0..arity),
    )
        .prop_map(move |(id, q, texts, gold)| QaExample {
            id,
            question: q,
            candidates: texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| Choice {
                    label: ((b'A' + i as u8) as char).to_string(),
                    text,
                })
                .collect(),
            gold_label: gold.map(|g| ((b'A' + g as u8) as char).to_string()),
        })
}

proptest! {
    #[test]
    fn canonical_round_trip(ex in (1usize..9).prop_flat_map(arb_example)) {
        let line = ex.to_json_line();
        let back = parse_qa(line.as_bytes(), ex.candidates.len()).unwrap();
        prop_assert_eq!(&back[0], &ex);
        prop_assert_eq!(back[0].to_json_line(), line);
    }

    #[test]
    fn order_is_kept(exs in prop::collection::vec(arb_example(4), 1..10)) {
        let mut seen = std::collections::HashSet::new();
        let exs: Vec<QaExample> = exs.into_iter().filter(|e| seen.insert(e.id.clone())).collect();
        let text: String = exs.iter().map(|e| e.to_json_line() + "\n").collect();
        let back = parse_qa(text.as_bytes(), 4).unwrap();
        prop_assert_eq!(back, exs);
    }
}
