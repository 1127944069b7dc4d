//! Synthesizes CodeQL queries from natural-language questions and runs them
//! over a codebase.
//!
//! The pipeline generates self-test snippets, retrieves library
//! documentation, repairs queries from compiler feedback, and debugs empty
//! results with assistive queries. See [`orchestrator::answer_question`].

pub mod docs_index;
pub mod engine;
pub mod evalbench;
pub mod llm;
pub mod orchestrator;
pub mod question;
pub mod results;
pub mod selftest;

pub use question::{Column, Language, OutputSchema, Question, QuestionError};
