//! Flaky failure triage from test failure logs.

pub mod classifier;
pub mod cli;
pub mod corpus_xml;
pub mod dedup;
pub mod eval;
pub mod model;
pub mod normalize;
pub mod parse;
pub mod report;
pub mod synth;
pub mod tfidf;
