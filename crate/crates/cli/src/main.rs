//! `cpace`: run the knowledge, explanation and inference stages from the
//! command line.
//!
//! Exit status is 0 on success, 1 for startup or configuration errors and 2
//! when some examples failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use cpace_core::pipeline::{self, PipelineConfig, StageOutcome};

#[derive(Parser, Debug)]
#[command(
    name = "cpace",
    version,
    about = "Concept-centric contrastive explanations for multiple-choice QA"
)]
struct Cli {
    /// key = value config file; flags and environment override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recognize concepts and retrieve triples and definitions
    Extract,
    /// Generate explanations from a knowledge file
    Generate {
        /// defaults to <output-dir>/knowledge.jsonl
        #[arg(long)]
        knowledge: Option<PathBuf>,
    },
    /// Predict answers from an explanations file
    Infer {
        /// defaults to <output-dir>/explanations.jsonl
        #[arg(long)]
        explanations: Option<PathBuf>,
    },
    /// Score explanations against references (or a metric corpus)
    Evaluate {
        /// defaults to <output-dir>/explanations.jsonl
        #[arg(long)]
        explanations: Option<PathBuf>,
    },
    /// Run every stage in order
    E2e,
}

#[derive(Args, Debug, Default)]
struct Settings {
    #[arg(long, global = true)]
    graph: Option<String>,
    #[arg(long, global = true)]
    dictionary: Option<String>,
    #[arg(long, global = true)]
    lexicon: Option<String>,
    #[arg(long, global = true)]
    stopwords: Option<String>,
    #[arg(long, global = true)]
    templates: Option<String>,
    /// QA JSON Lines file
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// csqa, qasc, obqa or ecqa; sets the expected choice count
    #[arg(long, global = true)]
    dataset_kind: Option<String>,
    #[arg(long, global = true)]
    arity: Option<String>,
    /// reference explanations (id, positive, negatives)
    #[arg(long, global = true)]
    references: Option<String>,
    /// id, candidate, reference pairs scored directly
    #[arg(long, global = true)]
    metric_corpus: Option<String>,
    #[arg(long, global = true)]
    human_eval: Option<String>,
    #[arg(long, global = true)]
    max_hops: Option<String>,
    #[arg(long, global = true)]
    concept_limit: Option<String>,
    #[arg(long, global = true)]
    template_id: Option<String>,
    /// generate with every template, one file each
    #[arg(long, global = true)]
    template_sweep: bool,
    /// `mock` or a base URL
    #[arg(long, global = true)]
    generator: Option<String>,
    /// `baseline` or a base URL
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// per_candidate or whole
    #[arg(long, global = true)]
    explanation_mode: Option<String>,
    #[arg(long, global = true)]
    max_length: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    #[arg(long, global = true)]
    workers: Option<String>,
    #[arg(long, global = true)]
    max_in_flight: Option<String>,
}

impl Settings {
    fn overrides(&self) -> Vec<(String, String)> {
        let fields = [
            ("graph", &self.graph),
            ("dictionary", &self.dictionary),
            ("lexicon", &self.lexicon),
            ("stopwords", &self.stopwords),
            ("templates", &self.templates),
            ("dataset", &self.dataset),
            ("dataset_kind", &self.dataset_kind),
            ("arity", &self.arity),
            ("references", &self.references),
            ("metric_corpus", &self.metric_corpus),
            ("human_eval", &self.human_eval),
            ("max_hops", &self.max_hops),
            ("concept_limit", &self.concept_limit),
            ("template_id", &self.template_id),
            ("generator", &self.generator),
            ("scorer", &self.scorer),
            ("explanation_mode", &self.explanation_mode),
            ("max_length", &self.max_length),
            ("output_dir", &self.output_dir),
            ("workers", &self.workers),
            ("max_in_flight", &self.max_in_flight),
        ];
        let mut out: Vec<(String, String)> = fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_owned(), v.clone())))
            .collect();
        if self.template_sweep {
            out.push(("template_sweep".into(), "true".into()));
        }
        out
    }
}

fn report(outcomes: &[StageOutcome]) -> u8 {
    for o in outcomes {
        let files: Vec<String> = o.outputs.iter().map(|p| p.display().to_string()).collect();
        println!(
            "{:<9} {:>6} records {:>5} failed  {}",
            o.stage,
            o.records,
            o.failures,
            files.join(" ")
        );
    }
    if outcomes.iter().any(|o| o.failures > 0) {
        2
    } else {
        0
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let cfg = PipelineConfig::resolve(
        cli.config.as_deref(),
        |k| std::env::var(k).ok(),
        &cli.settings.overrides(),
    )?;
    log::debug!("config: {cfg:?}");
    let default_expl = || cfg.output(pipeline::EXPLANATIONS_FILE);
    let code = match cli.command {
        Command::Extract => report(&[pipeline::run_extract(&cfg)?]),
        Command::Generate { knowledge } => {
            let knowledge = knowledge.unwrap_or_else(|| cfg.output(pipeline::KNOWLEDGE_FILE));
            report(&[pipeline::run_generate(&cfg, &knowledge)?])
        }
        Command::Infer { explanations } => {
            let (outcome, summary) =
                pipeline::run_infer(&cfg, &explanations.unwrap_or_else(default_expl))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            report(&[outcome])
        }
        Command::Evaluate { explanations } => {
            let path = explanations.unwrap_or_else(default_expl);
            let (outcome, evaluation) = pipeline::run_evaluate(&cfg, Some(&path))?;
            print!("{}", evaluation.to_table());
            report(&[outcome])
        }
        Command::E2e => report(&pipeline::run_e2e(&cfg)?),
    };
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
