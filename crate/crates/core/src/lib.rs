//! Concept-centric knowledge retrieval and contrastive explanation pipeline.
//!
//! The pipeline has three stages:
//!
//! 1. **Knowledge acquisition**: recognize concepts in the question and the
//!    answer candidates ([`concepts`]), then pull relational triples from a
//!    ConceptNet-style graph ([`kb`]) and first-entry definitions from a
//!    dictionary ([`dictionary`]).
//! 2. **Explanation generation**: serialize everything into the generator
//!    input layout ([`prompt`]) and ask a text-generation backend for a
//!    contrastive explanation ([`generation`]).
//! 3. **Inference**: score the candidates given the explanation, normalize
//!    with softmax and pick the answer ([`inference`]).
//!
//! [`eval`] holds the explanation-quality metrics, [`datasets`] the QA and
//! explanation readers, and [`pipeline`] wires the stages into durable
//! JSONL checkpoints.
//!
//! The numeric parts are generic over the scalar type (see [`Scalar`]); the
//! aliases below fix them to `f64`, which is what the pipeline uses.

pub mod concepts;
pub mod datasets;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod generation;
pub mod inference;
pub mod kb;
pub mod pipeline;
pub mod prompt;
mod remote;
pub mod scalar;
pub mod text;

pub use error::{Error, Result};
pub use remote::RetryPolicy;
pub use scalar::Scalar;

pub type Triple = kb::KbTriple<f64>;
pub type Graph = kb::KbGraph<f64>;
pub type Path = kb::KbPath<f64>;
pub type Scores = inference::CandidateScores<f64>;
pub type Inference = inference::InferenceResult<f64>;
pub type Prf = eval::Prf<f64>;
pub type Report = eval::MetricReport<f64>;

pub type Triple32 = kb::KbTriple<f32>;
pub type Graph32 = kb::KbGraph<f32>;
pub type Scores32 = inference::CandidateScores<f32>;
pub type Prf32 = eval::Prf<f32>;
