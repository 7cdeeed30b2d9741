//! Std companion to `fwm-core`: episode corpora on disk, imported masks,
//! the chat-completions client, run configuration, the evaluation harness
//! and result tables.

pub mod config;
pub mod episode_io;
pub mod harness;
pub mod llm;
pub mod masks;
pub mod report;
