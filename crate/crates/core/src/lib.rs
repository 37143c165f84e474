//! Edit-time vulnerability detection for incomplete code snippets.

pub mod classifier;
pub mod completion;
pub mod corpus;
pub mod detection;
pub mod encoder;
pub mod hash;
pub mod jsonl;
pub mod language;
pub mod metrics;
pub mod prompting;
pub mod scenario;
pub mod service;
pub mod splitter;
pub mod synthetic;
