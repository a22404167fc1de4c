//! Grading engine and learning-analytics toolkit for open-response
//! middle-school math answer logs.
//!
//! The pipeline runs end to end: load and validate answer logs
//! ([`dataset`]), grade responses with rule-based and LLM-backed
//! strategies ([`normalizer`], [`llm`], [`cascade`]), score the graders
//! against human labels ([`metrics`]), and trace the downstream effect
//! of grading quality on student-mastery estimates ([`bkt`]). The
//! [`cli`] module wires everything into reproducible commands.

pub mod bkt;
pub mod cascade;
pub mod cli;
pub mod metrics;
pub mod dataset;
pub mod llm;
pub mod normalizer;
