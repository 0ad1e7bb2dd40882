use std::fs;
use std::path::{Path, PathBuf};

use cpace_core::pipeline::{
    read_jsonl, run_e2e, run_evaluate, run_extract, run_generate, run_infer, ExplanationRecord,
    KnowledgeRecord, PipelineConfig, PredictionRecord, EXPLANATIONS_FILE, KNOWLEDGE_FILE,
};
use cpace_core::prompt::TASK_PREFIX;
use cpace_core::text::concept_surface;
use cpace_core::Error;

fn fixture(dir: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(dir)
}

fn config(dir: &str, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.apply_file(&fixture(dir).join("run.conf")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn magazine_end_to_end() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("magazine", out.path());
    let stages = run_e2e(&cfg).unwrap();
    assert!(stages.iter().all(|s| s.failures == 0));

    let k: Vec<KnowledgeRecord> = read_jsonl(&out.path().join(KNOWLEDGE_FILE)).unwrap();
    let surfaces: Vec<String> = k[0].concepts.iter().map(|c| concept_surface(c)).collect();
    assert_eq!(
        surfaces,
        [
            "magazine",
            "doctor",
            "bookstore",
            "market",
            "train station",
            "mortuary"
        ]
    );
    assert_eq!(k[0].knowledge.definitions.len(), 5);

    let e: Vec<ExplanationRecord> = read_jsonl(&out.path().join(EXPLANATIONS_FILE)).unwrap();
    assert!(e[0].input.as_deref().unwrap().starts_with(TASK_PREFIX));
    let text = &e[0].explanation.as_ref().unwrap().text;
    assert!(text.contains("bookstore is not supported: A store where books are bought and sold."));

    let p: Vec<PredictionRecord> = read_jsonl(&out.path().join("predictions.jsonl")).unwrap();
    assert_eq!(p[0].predicted_label.as_deref(), Some("B"));
    assert_eq!(p[0].correct, Some(true));
}

#[test]
fn empty_dataset_gives_empty_output() {
    let out = tempfile::tempdir().unwrap();
    let empty = out.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let mut cfg = config("magazine", out.path());
    cfg.dataset = Some(empty);
    let o = run_extract(&cfg).unwrap();
    assert_eq!((o.records, o.failures), (0, 0));
    assert_eq!(fs::read_to_string(&o.outputs[0]).unwrap(), "");
}

#[test]
fn missing_dictionary_is_a_startup_error() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("magazine", out.path());
    cfg.dictionary = Some(PathBuf::from("/no/such/dictionary.jsonl"));
    let err = run_extract(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("/no/such/dictionary.jsonl"));
}

#[test]
fn bad_question_becomes_warning() {
    let out = tempfile::tempdir().unwrap();
    let qa = out.path().join("qa.jsonl");
    fs::write(
        &qa,
        r#"{"id":"bad","question":{"stem":"where [SEP] magazine","choices":[{"label":"A","text":"doctor"},{"label":"B","text":"bookstore"},{"label":"C","text":"market"},{"label":"D","text":"train station"},{"label":"E","text":"mortuary"}]},"answerKey":"B"}
"#,
    )
    .unwrap();
    let mut cfg = config("magazine", out.path());
    cfg.dataset = Some(qa);
    let o = run_extract(&cfg).unwrap();
    assert_eq!(o.failures, 1);
    let k: Vec<KnowledgeRecord> = read_jsonl(&o.outputs[0]).unwrap();
    assert!(k[0].warning.is_some());
    assert!(k[0].knowledge.definitions.is_empty());

    // generation then fails per example, and inference degrades
    let g = run_generate(&cfg, &o.outputs[0]).unwrap();
    assert_eq!(g.failures, 1);
    let (i, summary) = run_infer(&cfg, &g.outputs[0]).unwrap();
    assert_eq!(i.failures, 1);
    assert_eq!(summary.degraded, 1);
    let p: Vec<PredictionRecord> = read_jsonl(&out.path().join("predictions.jsonl")).unwrap();
    assert!(p[0].degraded);
    assert_eq!(p[0].id, "bad");
    assert!(p[0].predicted_label.is_some());
}

#[test]
fn no_gold_means_no_accuracy_block() {
    let out = tempfile::tempdir().unwrap();
    let qa = out.path().join("qa.jsonl");
    let line = fs::read_to_string(fixture("magazine").join("qa.jsonl")).unwrap();
    fs::write(&qa, line.replace(r#","answerKey":"B""#, "")).unwrap();
    let mut cfg = config("magazine", out.path());
    cfg.dataset = Some(qa);
    cfg.references = None;
    run_e2e(&cfg).unwrap();
    let (_, summary) = run_infer(&cfg, &out.path().join(EXPLANATIONS_FILE)).unwrap();
    assert!(summary.gold.is_none());
    assert_eq!(summary.predicted, 1);
}

#[test]
fn evaluate_identity_and_misalignment() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("magazine", out.path());
    run_e2e(&cfg).unwrap();
    let expl = out.path().join(EXPLANATIONS_FILE);

    // references equal to the generated text
    let recs: Vec<ExplanationRecord> = read_jsonl(&expl).unwrap();
    let refs = out.path().join("self.jsonl");
    let body: String = recs
        .iter()
        .map(|r| {
            serde_json::json!({"id": r.id, "positive": r.explanation.as_ref().unwrap().text, "negatives": []})
                .to_string()
                + "\n"
        })
        .collect();
    fs::write(&refs, body).unwrap();
    cfg.references = Some(refs.clone());
    let (_, rep) = run_evaluate(&cfg, Some(&expl)).unwrap();
    for f in [
        rep.corpus.rouge1.f1,
        rep.corpus.rouge2.f1,
        rep.corpus.rouge_l.f1,
        rep.corpus.bleu1,
    ] {
        assert!((f - 1.0).abs() < 1e-12);
    }

    fs::write(&refs, r#"{"id": "other", "positive": "x"}"#).unwrap();
    match run_evaluate(&cfg, Some(&expl)) {
        Err(Error::Link { ids }) => assert_eq!(ids, ["magazine", "other"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn metric_corpus_file() {
    let out = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        metric_corpus: Some(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/metric_pairs.jsonl"),
        ),
        output_dir: out.path().to_path_buf(),
        ..Default::default()
    };
    let (o, rep) = run_evaluate(&cfg, None).unwrap();
    assert_eq!(o.records, 10);
    assert!((rep.corpus.rouge1.f1 - 0.6750793650793651).abs() < 1e-6);
    assert!((rep.corpus.bleu1 - 0.5979157140103115).abs() < 1e-6);
    assert_eq!(rep.rows[0].id, "p01");
}

#[test]
fn corpus_runs_are_identical_and_ordered() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = config("corpus", a.path());
    let mut cb = config("corpus", b.path());
    ca.workers = 1;
    cb.workers = 8;
    run_e2e(&ca).unwrap();
    run_e2e(&cb).unwrap();
    for f in [
        "knowledge.jsonl",
        "explanations.jsonl",
        "predictions.jsonl",
        "inference.json",
        "metrics.json",
        "metrics.txt",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let p: Vec<PredictionRecord> = read_jsonl(&a.path().join("predictions.jsonl")).unwrap();
    let ids: Vec<&str> = p.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["c1", "c2", "c3", "c4", "c5", "c6"]);
}

#[test]
fn template_sweep_writes_seven_sets() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("magazine", out.path());
    cfg.template_sweep = true;
    let k = run_extract(&cfg).unwrap();
    let g = run_generate(&cfg, &k.outputs[0]).unwrap();
    assert_eq!(g.outputs.len(), 7);
    for (i, p) in g.outputs.iter().enumerate() {
        let recs: Vec<ExplanationRecord> = read_jsonl(p).unwrap();
        assert_eq!(recs[0].template_id, i as u32 + 1);
    }
}

#[test]
fn unreachable_generator_gives_error_records() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("magazine", out.path());
    cfg.set("generator", "http://127.0.0.1:9", None).unwrap();
    let k = run_extract(&cfg).unwrap();
    let g = run_generate(&cfg, &k.outputs[0]).unwrap();
    assert_eq!(g.failures, 1);
    let recs: Vec<ExplanationRecord> = read_jsonl(&g.outputs[0]).unwrap();
    assert!(recs[0].error.as_deref().unwrap().contains("transport"));
}
