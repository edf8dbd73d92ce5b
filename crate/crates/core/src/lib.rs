//! Prompt-induced tone-shift experiments.
//!
//! A run sends fixed stimulus prompts (TIPs) to a subject model in fresh
//! single-turn sessions, has one or more judge models score each response
//! with a quantifying prompt (TQP), parses the judges' semi-structured
//! replies into Tone Phase and Tsun-Dere scores, and compares conditions
//! with one-tailed Welch t-tests.
//!
//! - [`corpus`]: built-in prompts, validation, template instantiation
//! - [`providers`]: disposable chat sessions over HTTP or replay fixtures
//! - [`tqp`]: judge-output parser
//! - [`stats`]: Student t tail, Welch test, descriptive statistics
//! - [`experiment`]: manifest-driven runs, JSONL store, aggregation
//! - [`report`]: beeswarm SVG, CSV and Markdown summaries

pub mod corpus;
pub mod experiment;
pub mod providers;
pub mod report;
pub mod stats;
pub mod tqp;
