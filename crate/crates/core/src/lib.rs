//! Transcript-based scoring of ADOS-2 Module 3 language items.

pub mod assessment;
pub mod corpus;
pub mod exec;
pub mod features;
pub mod fusion;
pub mod items;
pub mod prompt;
pub mod rules;
pub mod synth;
pub mod transcript;

pub use exec::Execution;
pub use items::{ItemId, ItemMap, ItemScoreSheet, ItemScores, ScoreSource};
