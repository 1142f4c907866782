//! Group-recommendation decision simulator.
//!
//! The pipeline builds collaborative user profiles by textualizing meta-path
//! walk evidence for chain-of-preference LLM reasoning, recognizes group
//! topics and leaders, and produces group rankings through multi-agent
//! simulation (a static workflow or a dynamic multi-round discussion),
//! evaluated under a leave-one-out HR@K / NDCG@K protocol. A deterministic
//! mock backend makes every stage reproducible without model access.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod hashutil;
pub mod llm;
pub mod metapath;
pub mod pipeline;
pub mod profiling;
pub mod simulation;
pub mod sparse;

pub use error::{Error, Result};
