//! Synthesis of (question, SQL) training pairs for Text-to-SQL parsers.
//!
//! The crate covers corpus ingestion, SQL to relational-algebra trees, tree
//! edit distance retrieval, question templating, LLM-driven generation with
//! cycle-consistency validation, paraphrasing strategies, constant
//! perturbation and BLEU-based quality metrics.

pub mod config;
pub mod db;
pub mod generate;
pub mod ingest;
pub mod llm;
pub mod metrics;
pub mod paraphrase;
pub mod perturb;
pub mod pipeline;
pub mod retrieval;
pub mod seeding;
pub mod sql;
pub mod ted;
pub mod templating;
pub mod tree;
pub mod validate;
