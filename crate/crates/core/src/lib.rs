//! Biomedical question answering toolkit: a fielded BM25 search engine with a
//! boolean query-string language, an LLM-driven retrieval and answering
//! pipeline, and challenge-style evaluation.

pub mod analysis;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod fewshot;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod query;
pub mod runfile;
pub mod scalar;
pub mod wiki;

/// Scalar used for retrieval scores and reported metrics.
pub type Score = f64;

pub type RetrievalScores = eval::RetrievalScores<Score>;
pub type YesNoScores = eval::YesNoScores<Score>;
pub type FactoidScores = eval::FactoidScores<Score>;
pub type ListScores = eval::ListScores<Score>;
pub type Report = eval::Report<Score>;
pub type Bm25 = index::Bm25<Score>;
