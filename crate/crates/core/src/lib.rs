//! Querying clinical tables through a validated query language, answering
//! questions over free-text notes with retrieval-augmented generation, and
//! scoring both pipelines against synthetic test suites.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`table`]: CSV ingestion, cohort sampling, synthetic birth dates and the
//!   left-join chain that produces the analysis dataset.
//! - [`query`]: the restricted query language the structured agent emits,
//!   with parser, validator and deterministic interpreter.
//! - [`llm`]: chat-completion gateway (HTTP or scripted stub) with token
//!   budgeting and a run journal.
//! - [`agent`]: the structured question-answering agent.
//! - [`rag`]: tokenizer, chunker, embedders, exact vector index and the
//!   retrieval-augmented answerer.
//! - [`testgen`]: structured and unstructured test-suite generation.
//! - [`eval`]: exact match, ROUGE, annotation ingestion and report rendering.
//! - [`pipeline`]: config-driven orchestration used by the command-line tool.

pub mod agent;
pub mod eval;
pub mod fixtures;
pub mod llm;
pub mod par;
pub mod pipeline;
pub mod query;
pub mod rag;
pub mod rng;
pub mod table;
pub mod testgen;

mod fsutil;
