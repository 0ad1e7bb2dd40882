//! Stage orchestration: extract, generate, infer, evaluate.
//!
//! Each stage reads and writes JSON Lines checkpoints in the output
//! directory so that stages can be re-run on their own. Records always carry
//! the example id, and per-example failures become explicit error records
//! instead of aborting the run. Within a stage, examples go through a
//! bounded worker pool and come out in input order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::concepts::{ExampleConcepts, RecognizerLexicon, DEFAULT_CONCEPT_LIMIT};
use crate::datasets::{load_qa, parse_explanation_records, Choice, QaExample};
use crate::dictionary::{lookup_definition, DictionaryStore, RuleLemmatizer};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_human_eval, corpus_report_with_rows, HumanEvalRecord, HumanEvalReport, MetricReport,
};
use crate::generation::{
    generate, Explanation, GenerationRequest, GeneratorBackend, MockGenerator, RemoteGenerator,
    DEFAULT_MAX_LENGTH, GENERATOR_URL_ENV,
};
use crate::inference::{
    accuracy, cross_entropy, score_candidates, CandidateScorer, ExplanationMode, InferenceResult,
    LexicalScorer, RemoteScorer, SCORER_URL_ENV,
};
use crate::kb::{extract_triples, KbGraph, DEFAULT_MAX_HOPS};
use crate::prompt::{
    build_generator_input, default_templates, instantiate_prompt, load_templates,
    serialize_knowledge, GeneratorInput, KnowledgeBundle, PromptTemplate, DEFAULT_TEMPLATE_ID,
    TASK_PREFIX,
};
use crate::remote::{RetryPolicy, DEFAULT_IN_FLIGHT};
use crate::text::{concept_surface, Stopwords};

pub const KNOWLEDGE_FILE: &str = "knowledge.jsonl";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const INFERENCE_FILE: &str = "inference.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";
pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_ARITY: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum GeneratorChoice {
    #[default]
    Mock,
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ScorerChoice {
    #[default]
    Baseline,
    Remote(String),
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

impl FromStr for GeneratorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mock" => Ok(GeneratorChoice::Mock),
            url if is_url(url) => Ok(GeneratorChoice::Remote(url.to_owned())),
            other => Err(Error::Config(format!(
                "generator must be `mock` or an http(s) URL, got {other:?}"
            ))),
        }
    }
}

impl FromStr for ScorerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(ScorerChoice::Baseline),
            url if is_url(url) => Ok(ScorerChoice::Remote(url.to_owned())),
            other => Err(Error::Config(format!(
                "scorer must be `baseline` or an http(s) URL, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for GeneratorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorChoice::Mock => f.write_str("mock"),
            GeneratorChoice::Remote(u) => f.write_str(u),
        }
    }
}

impl fmt::Display for ScorerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerChoice::Baseline => f.write_str("baseline"),
            ScorerChoice::Remote(u) => f.write_str(u),
        }
    }
}

/// Everything a run needs. Sources are layered: built-in defaults, then a
/// `key = value` config file, then environment variables, then explicit
/// overrides (command-line flags).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub graph: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub metric_corpus: Option<PathBuf>,
    pub human_eval: Option<PathBuf>,
    pub arity: usize,
    pub max_hops: usize,
    pub concept_limit: usize,
    pub template_id: u32,
    pub template_sweep: bool,
    pub generator: GeneratorChoice,
    pub scorer: ScorerChoice,
    pub explanation_mode: ExplanationMode,
    pub max_length: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub max_in_flight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            graph: None,
            dictionary: None,
            lexicon: None,
            stopwords: None,
            templates: None,
            dataset: None,
            references: None,
            metric_corpus: None,
            human_eval: None,
            arity: DEFAULT_ARITY,
            max_hops: DEFAULT_MAX_HOPS,
            concept_limit: DEFAULT_CONCEPT_LIMIT,
            template_id: DEFAULT_TEMPLATE_ID,
            template_sweep: false,
            generator: GeneratorChoice::Mock,
            scorer: ScorerChoice::Baseline,
            explanation_mode: ExplanationMode::PerCandidate,
            max_length: DEFAULT_MAX_LENGTH,
            output_dir: PathBuf::from("out"),
            workers: DEFAULT_WORKERS,
            max_in_flight: DEFAULT_IN_FLIGHT,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

impl PipelineConfig {
    /// Sets one key. Relative paths are joined onto `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let path = || {
            let p = PathBuf::from(value.trim());
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key.trim().replace('-', "_").as_str() {
            "graph" => self.graph = Some(path()),
            "dictionary" => self.dictionary = Some(path()),
            "lexicon" => self.lexicon = Some(path()),
            "stopwords" => self.stopwords = Some(path()),
            "templates" => self.templates = Some(path()),
            "dataset" => self.dataset = Some(path()),
            "references" => self.references = Some(path()),
            "metric_corpus" => self.metric_corpus = Some(path()),
            "human_eval" => self.human_eval = Some(path()),
            "output_dir" => self.output_dir = path(),
            "dataset_kind" => self.arity = value.parse::<crate::datasets::DatasetKind>()?.arity(),
            "arity" => self.arity = parse_num(key, value)?,
            "max_hops" => self.max_hops = parse_num(key, value)?,
            "concept_limit" => self.concept_limit = parse_num(key, value)?,
            "template_id" => self.template_id = parse_num(key, value)?,
            "template_sweep" => self.template_sweep = parse_bool(key, value)?,
            "generator" => self.generator = value.parse()?,
            "scorer" => self.scorer = value.parse()?,
            "explanation_mode" => {
                self.explanation_mode = match value.trim() {
                    "per_candidate" | "per-candidate" => ExplanationMode::PerCandidate,
                    "whole" => ExplanationMode::Whole,
                    other => {
                        return Err(Error::Config(format!("unknown explanation mode {other:?}")))
                    }
                }
            }
            "max_length" => self.max_length = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "max_in_flight" => self.max_in_flight = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a config file; relative paths in it resolve against the
    /// file's directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path.parent())
    }

    /// Backend URLs from `CPACE_GENERATOR_URL` and `CPACE_SCORER_URL`.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, get: F) -> Result<()> {
        if let Some(url) = get(GENERATOR_URL_ENV).filter(|u| !u.trim().is_empty()) {
            self.set("generator", &url, None)?;
        }
        if let Some(url) = get(SCORER_URL_ENV).filter(|u| !u.trim().is_empty()) {
            self.set("scorer", &url, None)?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then the environment, then `overrides`.
    pub fn resolve<F: Fn(&str) -> Option<String>>(
        file: Option<&Path>,
        env: F,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        cfg.apply_env(env)?;
        for (k, v) in overrides {
            cfg.set(k, v, None)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("concept_limit", self.concept_limit),
            ("max_length", self.max_length),
            ("workers", self.workers),
            ("max_in_flight", self.max_in_flight),
            ("arity", self.arity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn output(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }

    fn require<'a>(&self, name: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("no {name} path configured")))?;
        if !p.is_file() {
            return Err(Error::Config(format!(
                "{name} file not readable: {}",
                p.display()
            )));
        }
        Ok(p)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    pub fn load_templates(&self) -> Result<Vec<PromptTemplate>> {
        match &self.templates {
            Some(p) => load_templates(p),
            None => Ok(default_templates()),
        }
    }

    fn stopword_list(&self) -> Result<Stopwords> {
        match &self.stopwords {
            Some(p) => Stopwords::load(p),
            None => Ok(Stopwords::default()),
        }
    }

    pub fn generator_backend(&self) -> Box<dyn GeneratorBackend> {
        match &self.generator {
            GeneratorChoice::Mock => Box::new(MockGenerator),
            GeneratorChoice::Remote(url) => Box::new(RemoteGenerator::with_policy(
                url,
                RetryPolicy::default(),
                self.max_in_flight,
            )),
        }
    }

    pub fn scorer_backend(&self) -> Result<Box<dyn CandidateScorer<f64>>> {
        Ok(match &self.scorer {
            ScorerChoice::Baseline => Box::new(LexicalScorer::new(
                self.stopword_list()?,
                self.explanation_mode,
            )),
            ScorerChoice::Remote(url) => Box::new(RemoteScorer::with_policy(
                url,
                RetryPolicy::default(),
                self.max_in_flight,
            )),
        })
    }
}

/// What a stage wrote and how many examples failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    pub records: usize,
    pub failures: usize,
}

impl StageOutcome {
    fn new(stage: &str, outputs: Vec<PathBuf>, records: usize, failures: usize) -> Self {
        StageOutcome {
            stage: stage.to_owned(),
            outputs,
            records,
            failures,
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(n + 1, format!("{}: {e}", path.display())))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Output of the extract stage for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub id: String,
    pub question: String,
    pub candidates: Vec<Choice>,
    pub gold_label: Option<String>,
    /// Question concepts then candidate concepts, first occurrence wins.
    pub concepts: Vec<String>,
    pub question_concepts: Vec<String>,
    pub candidate_concepts: Vec<Vec<String>>,
    pub knowledge: KnowledgeBundle<f64>,
    pub serialized: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

struct KnowledgeSources {
    recognizer: RecognizerLexicon,
    graph: KbGraph<f64>,
    dictionary: DictionaryStore,
}

impl KnowledgeSources {
    fn load(cfg: &PipelineConfig) -> Result<Self> {
        let lexicon = cfg.require("lexicon", &cfg.lexicon)?;
        let graph = cfg.require("graph", &cfg.graph)?;
        let dictionary = cfg.require("dictionary", &cfg.dictionary)?;
        let stopwords = match &cfg.stopwords {
            Some(_) => Some(cfg.require("stopwords", &cfg.stopwords)?),
            None => None,
        };
        Ok(KnowledgeSources {
            recognizer: RecognizerLexicon::load(lexicon, stopwords)?,
            graph: KbGraph::load(graph)?,
            dictionary: DictionaryStore::load(dictionary)?,
        })
    }
}

fn extract_one(ex: &QaExample, src: &KnowledgeSources, cfg: &PipelineConfig) -> KnowledgeRecord {
    let texts = ex.candidate_texts();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let concepts =
        ExampleConcepts::recognize(&src.recognizer, &ex.question, &refs, cfg.concept_limit);
    let question_ids = concepts.question_ids();
    let candidate_ids = concepts.candidate_ids();
    let all = concepts.all_ids();

    let triples = extract_triples(&question_ids, &candidate_ids, &src.graph, cfg.max_hops);
    let definitions = all
        .iter()
        .filter_map(|c| lookup_definition(c, &src.dictionary, &RuleLemmatizer))
        .collect();
    let mut knowledge = KnowledgeBundle {
        triples,
        definitions,
    };

    // reject knowledge that could not be laid out in a generator input
    let check = GeneratorInput::new(
        TASK_PREFIX,
        ex.question.clone(),
        texts.clone(),
        all.iter().map(|c| concept_surface(c)).collect(),
        knowledge.clone(),
        "",
    );
    let warning = check.err().map(|e| {
        warn!("example {}: {e}; continuing with empty knowledge", ex.id);
        knowledge = KnowledgeBundle::default();
        e.to_string()
    });

    KnowledgeRecord {
        id: ex.id.clone(),
        question: ex.question.clone(),
        candidates: ex.candidates.clone(),
        gold_label: ex.gold_label.clone(),
        serialized: serialize_knowledge(&knowledge),
        concepts: all,
        question_concepts: question_ids,
        candidate_concepts: concepts
            .candidates
            .iter()
            .map(|spans| spans.iter().map(|s| s.concept_id.clone()).collect())
            .collect(),
        knowledge,
        warning,
    }
}

/// Concept recognition and knowledge retrieval for every dataset example.
pub fn run_extract(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let dataset = cfg.require("dataset", &cfg.dataset)?;
    let src = KnowledgeSources::load(cfg)?;
    let examples = load_qa(dataset, cfg.arity)?;
    let records: Vec<KnowledgeRecord> = cfg.pool()?.install(|| {
        examples
            .par_iter()
            .map(|ex| extract_one(ex, &src, cfg))
            .collect()
    });
    let failures = records.iter().filter(|r| r.warning.is_some()).count();
    let path = cfg.output(KNOWLEDGE_FILE);
    write_jsonl(&path, &records)?;
    info!("extract: {} records, {failures} warnings", records.len());
    Ok(StageOutcome::new(
        "extract",
        vec![path],
        records.len(),
        failures,
    ))
}

/// Output of the generate stage for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub id: String,
    pub question: String,
    pub candidates: Vec<Choice>,
    pub gold_label: Option<String>,
    pub template_id: u32,
    /// The exact generator input, kept for auditing.
    pub input: Option<String>,
    pub explanation: Option<Explanation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn generate_one(
    rec: &KnowledgeRecord,
    template: &PromptTemplate,
    backend: &dyn GeneratorBackend,
    max_length: usize,
) -> ExplanationRecord {
    let texts: Vec<String> = rec.candidates.iter().map(|c| c.text.clone()).collect();
    let mut input = None;
    let result = instantiate_prompt(template, &texts)
        .and_then(|prompt| {
            GeneratorInput::new(
                TASK_PREFIX,
                rec.question.clone(),
                texts.clone(),
                rec.concepts.iter().map(|c| concept_surface(c)).collect(),
                rec.knowledge.clone(),
                prompt,
            )
        })
        .and_then(|gi| {
            let s = build_generator_input(&gi);
            input = Some(s.clone());
            GenerationRequest::new(s, max_length)
        })
        .and_then(|req| generate(&req, backend));
    let (explanation, error) = match result {
        Ok(e) => (Some(e), None),
        Err(e) => {
            warn!("example {}: generation failed: {e}", rec.id);
            (None, Some(e.to_string()))
        }
    };
    ExplanationRecord {
        id: rec.id.clone(),
        question: rec.question.clone(),
        candidates: rec.candidates.clone(),
        gold_label: rec.gold_label.clone(),
        template_id: template.id,
        input,
        explanation,
        error,
    }
}

/// `explanations.jsonl`, or `explanations.t<id>.jsonl` in sweep mode.
pub fn explanations_file(template_id: Option<u32>) -> String {
    match template_id {
        Some(id) => format!("explanations.t{id}.jsonl"),
        None => EXPLANATIONS_FILE.to_owned(),
    }
}

/// Explanation generation. In sweep mode every template gets its own
/// output file.
pub fn run_generate(cfg: &PipelineConfig, knowledge: &Path) -> Result<StageOutcome> {
    let templates = cfg.load_templates()?;
    let records: Vec<KnowledgeRecord> = read_jsonl(knowledge)?;
    let backend = cfg.generator_backend();
    let pool = cfg.pool()?;

    let selected: Vec<(&PromptTemplate, PathBuf)> = if cfg.template_sweep {
        templates
            .iter()
            .map(|t| (t, cfg.output(&explanations_file(Some(t.id)))))
            .collect()
    } else {
        let t = templates
            .iter()
            .find(|t| t.id == cfg.template_id)
            .ok_or_else(|| Error::Config(format!("no template with id {}", cfg.template_id)))?;
        vec![(t, cfg.output(EXPLANATIONS_FILE))]
    };

    let mut failures = 0;
    let mut outputs = Vec::new();
    for (template, path) in selected {
        let out: Vec<ExplanationRecord> = pool.install(|| {
            records
                .par_iter()
                .map(|r| generate_one(r, template, backend.as_ref(), cfg.max_length))
                .collect()
        });
        failures += out.iter().filter(|r| r.error.is_some()).count();
        write_jsonl(&path, &out)?;
        outputs.push(path);
    }
    info!(
        "generate: {} records x {} template(s), {failures} failures",
        records.len(),
        outputs.len()
    );
    Ok(StageOutcome::new(
        "generate",
        outputs,
        records.len(),
        failures,
    ))
}

/// Output of the infer stage for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted_label: Option<String>,
    pub predicted_index: Option<usize>,
    pub probs: Vec<f64>,
    pub gold_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// The explanation was missing, so the candidates were scored from the
    /// question alone.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBlock {
    pub examples: usize,
    pub accuracy: f64,
    pub mean_cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub examples: usize,
    pub predicted: usize,
    pub degraded: usize,
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<AccuracyBlock>,
}

fn infer_one(
    rec: &ExplanationRecord,
    scorer: &dyn CandidateScorer<f64>,
) -> (PredictionRecord, Option<InferenceResult<f64>>) {
    let texts: Vec<String> = rec.candidates.iter().map(|c| c.text.clone()).collect();
    let (explanation, degraded) = match &rec.explanation {
        Some(e) => (e.clone(), false),
        None => (
            Explanation {
                text: String::new(),
                backend_id: "none".into(),
                per_candidate: None,
            },
            true,
        ),
    };
    let gold = rec
        .gold_label
        .as_deref()
        .and_then(|g| rec.candidates.iter().position(|c| c.label == g));
    let result = score_candidates(&rec.question, &texts, &explanation, scorer)
        .and_then(|scores| InferenceResult::from_scores(&scores, gold));
    let mut out = PredictionRecord {
        id: rec.id.clone(),
        predicted_label: None,
        predicted_index: None,
        probs: Vec::new(),
        gold_label: rec.gold_label.clone(),
        correct: None,
        loss: None,
        degraded,
        error: None,
    };
    match result {
        Ok(r) => {
            out.predicted_label = Some(rec.candidates[r.predicted_index].label.clone());
            out.predicted_index = Some(r.predicted_index);
            out.probs = r.probs.clone();
            out.correct = r.is_correct();
            out.loss = r.loss_contribution;
            (out, Some(r))
        }
        Err(e) => {
            warn!("example {}: scoring failed: {e}", rec.id);
            out.error = Some(e.to_string());
            (out, None)
        }
    }
}

/// Answer prediction from the explanations, plus accuracy and mean
/// cross-entropy over the examples that have a gold label.
pub fn run_infer(
    cfg: &PipelineConfig,
    explanations: &Path,
) -> Result<(StageOutcome, InferenceSummary)> {
    let records: Vec<ExplanationRecord> = read_jsonl(explanations)?;
    let scorer = cfg.scorer_backend()?;
    let rows: Vec<(PredictionRecord, Option<InferenceResult<f64>>)> = cfg.pool()?.install(|| {
        records
            .par_iter()
            .map(|r| infer_one(r, scorer.as_ref()))
            .collect()
    });

    let with_gold: Vec<&InferenceResult<f64>> = rows
        .iter()
        .filter_map(|(_, r)| r.as_ref())
        .filter(|r| r.gold_index.is_some())
        .collect();
    let gold = if with_gold.is_empty() {
        None
    } else {
        let preds: Vec<usize> = with_gold.iter().map(|r| r.predicted_index).collect();
        let golds: Vec<usize> = with_gold.iter().filter_map(|r| r.gold_index).collect();
        let owned: Vec<InferenceResult<f64>> = with_gold.iter().map(|r| (*r).clone()).collect();
        Some(AccuracyBlock {
            examples: with_gold.len(),
            accuracy: accuracy(&preds, &golds)?,
            mean_cross_entropy: cross_entropy(&owned)?,
        })
    };
    let predictions: Vec<PredictionRecord> = rows.into_iter().map(|(p, _)| p).collect();
    let summary = InferenceSummary {
        examples: predictions.len(),
        predicted: predictions
            .iter()
            .filter(|p| p.predicted_index.is_some())
            .count(),
        degraded: predictions.iter().filter(|p| p.degraded).count(),
        errors: predictions.iter().filter(|p| p.error.is_some()).count(),
        gold,
    };
    let pred_path = cfg.output(PREDICTIONS_FILE);
    let summary_path = cfg.output(INFERENCE_FILE);
    write_jsonl(&pred_path, &predictions)?;
    write_json(&summary_path, &summary)?;
    let failures = summary.errors + summary.degraded;
    Ok((
        StageOutcome::new(
            "infer",
            vec![pred_path, summary_path],
            predictions.len(),
            failures,
        ),
        summary,
    ))
}

/// One row of the metric corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPair {
    pub id: String,
    pub candidate: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub corpus: MetricReport<f64>,
    pub rows: Vec<MetricRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_eval: Option<HumanEvalReport>,
}

impl EvaluationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("examples: {}\n", self.rows.len());
        out.push_str(&self.corpus.to_table());
        if let Some(h) = &self.human_eval {
            out.push('\n');
            out.push_str(&HumanEvalReport::header(10));
            out.push('\n');
            out.push_str(&h.to_row("human", 10));
            out.push('\n');
        }
        out
    }
}

/// Pairs generated explanations with references by id. Every id present
/// on one side only is reported in a single link error.
pub fn align_by_id(
    candidates: &[(String, String)],
    references: &[(String, String)],
) -> Result<Vec<MetricPair>> {
    let refs: HashMap<&str, &str> = references
        .iter()
        .map(|(i, t)| (i.as_str(), t.as_str()))
        .collect();
    let cand_ids: BTreeSet<&str> = candidates.iter().map(|(i, _)| i.as_str()).collect();
    let mut missing: Vec<String> = candidates
        .iter()
        .filter(|(i, _)| !refs.contains_key(i.as_str()))
        .map(|(i, _)| i.clone())
        .collect();
    missing.extend(
        references
            .iter()
            .filter(|(i, _)| !cand_ids.contains(i.as_str()))
            .map(|(i, _)| i.clone()),
    );
    if !missing.is_empty() {
        return Err(Error::Link { ids: missing });
    }
    Ok(candidates
        .iter()
        .map(|(id, c)| MetricPair {
            id: id.clone(),
            candidate: c.clone(),
            reference: refs[id.as_str()].to_owned(),
        })
        .collect())
}

pub fn evaluate_pairs(pairs: &[MetricPair]) -> Result<EvaluationReport> {
    let texts: Vec<(&str, &str)> = pairs
        .iter()
        .map(|p| (p.candidate.as_str(), p.reference.as_str()))
        .collect();
    let (corpus, rows) = corpus_report_with_rows(&texts)?;
    Ok(EvaluationReport {
        corpus,
        rows: pairs
            .iter()
            .zip(rows)
            .map(|(p, metrics)| MetricRow {
                id: p.id.clone(),
                metrics,
            })
            .collect(),
        human_eval: None,
    })
}

/// Explanation quality against references. Uses the metric corpus file
/// when one is configured, otherwise `explanations` aligned with the
/// reference explanations. Failed generations are scored as empty text and
/// counted as failures.
pub fn run_evaluate(
    cfg: &PipelineConfig,
    explanations: Option<&Path>,
) -> Result<(StageOutcome, EvaluationReport)> {
    let mut failures = 0;
    let pairs = match &cfg.metric_corpus {
        Some(p) => read_jsonl::<MetricPair>(p)?,
        None => {
            let expl =
                explanations.ok_or_else(|| Error::Config("no explanations file given".into()))?;
            let refs_path = cfg.require("references", &cfg.references)?;
            let records: Vec<ExplanationRecord> = read_jsonl(expl)?;
            let candidates: Vec<(String, String)> = records
                .iter()
                .map(|r| {
                    let text = r.explanation.as_ref().map(|e| e.text.clone());
                    if text.is_none() {
                        failures += 1;
                    }
                    (r.id.clone(), text.unwrap_or_default())
                })
                .collect();
            let file = File::open(refs_path).map_err(|e| Error::io(refs_path, e))?;
            let references: Vec<(String, String)> =
                parse_explanation_records(BufReader::new(file))?
                    .into_iter()
                    .map(|r| {
                        let gold = r.contrastive_gold();
                        (r.id, gold)
                    })
                    .collect();
            align_by_id(&candidates, &references)?
        }
    };
    let mut report = evaluate_pairs(&pairs)?;
    if let Some(h) = &cfg.human_eval {
        let records: Vec<HumanEvalRecord> = read_jsonl(h)?;
        report.human_eval = Some(aggregate_human_eval(&records)?);
    }
    let json = cfg.output(METRICS_FILE);
    let table = cfg.output(METRICS_TABLE_FILE);
    write_json(&json, &report)?;
    write_text(&table, &report.to_table())?;
    Ok((
        StageOutcome::new("evaluate", vec![json, table], report.rows.len(), failures),
        report,
    ))
}

/// All stages in order. Evaluation runs only when references or a metric
/// corpus are configured.
pub fn run_e2e(cfg: &PipelineConfig) -> Result<Vec<StageOutcome>> {
    let mut out = Vec::new();
    let extract = run_extract(cfg)?;
    let knowledge = extract.outputs[0].clone();
    out.push(extract);

    let generate = run_generate(cfg, &knowledge)?;
    let explanations = if cfg.template_sweep {
        cfg.output(&explanations_file(Some(cfg.template_id)))
    } else {
        generate.outputs[0].clone()
    };
    out.push(generate);

    out.push(run_infer(cfg, &explanations)?.0);
    if cfg.references.is_some() || cfg.metric_corpus.is_some() {
        out.push(run_evaluate(cfg, Some(&explanations))?.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_layers() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        fs::write(
            &file,
            "# comment\ngraph = kb/graph.tsv\nmax_hops = 2\ngenerator = mock\nscorer = http://file:1\n",
        )
        .unwrap();
        let env = |k: &str| (k == SCORER_URL_ENV).then(|| "http://env:2".to_string());
        let overrides = vec![("max_hops".to_string(), "4".to_string())];
        let cfg = PipelineConfig::resolve(Some(&file), env, &overrides).unwrap();
        assert_eq!(
            cfg.graph.as_deref(),
            Some(dir.path().join("kb/graph.tsv").as_path())
        );
        assert_eq!(cfg.max_hops, 4);
        assert_eq!(cfg.scorer, ScorerChoice::Remote("http://env:2".into()));
        assert_eq!(cfg.generator, GeneratorChoice::Mock);
        assert_eq!(cfg.concept_limit, 3);
        assert_eq!(cfg.max_length, 256);
    }

    #[test]
    fn flags_beat_env() {
        let env = |k: &str| (k == GENERATOR_URL_ENV).then(|| "http://env:1".to_string());
        let cfg =
            PipelineConfig::resolve(None, env, &[("generator".into(), "mock".into())]).unwrap();
        assert_eq!(cfg.generator, GeneratorChoice::Mock);
        let cfg = PipelineConfig::resolve(None, env, &[]).unwrap();
        assert_eq!(
            cfg.generator,
            GeneratorChoice::Remote("http://env:1".into())
        );
    }

    #[test]
    fn config_errors() {
        let none = |_: &str| None;
        for (k, v) in [
            ("concept_limit", "0"),
            ("max_length", "0"),
            ("generator", "gpt"),
            ("scorer", "ftp://x"),
            ("bogus", "1"),
            ("max_hops", "three"),
        ] {
            let r = PipelineConfig::resolve(None, none, &[(k.into(), v.into())]);
            assert!(matches!(r, Err(Error::Config(_))), "{k}={v}");
        }
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply_text("no equals sign", None).is_err());
        cfg.set("dataset_kind", "qasc", None).unwrap();
        assert_eq!(cfg.arity, 8);
    }

    #[test]
    fn alignment() {
        let c = vec![("a".to_string(), "x".to_string()), ("b".into(), "y".into())];
        let r = vec![("b".to_string(), "y".to_string()), ("a".into(), "x".into())];
        let pairs = align_by_id(&c, &r).unwrap();
        assert_eq!(pairs[0].id, "a");
        assert_eq!(pairs[1].reference, "y");

        let r2 = vec![("a".to_string(), "x".to_string()), ("c".into(), "z".into())];
        match align_by_id(&c, &r2) {
            Err(Error::Link { ids }) => assert_eq!(ids, ["b", "c"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/x.jsonl");
        let pairs = vec![MetricPair {
            id: "1".into(),
            candidate: "a".into(),
            reference: "b".into(),
        }];
        write_jsonl(&p, &pairs).unwrap();
        assert_eq!(read_jsonl::<MetricPair>(&p).unwrap(), pairs);
    }
}
