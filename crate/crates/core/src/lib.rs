//! Toolkit for LLM-assisted evaluation of news publisher reliability.
//!
//! Articles are extracted and anonymized ([`corpus`]), annotated by human
//! experts and by a language model against six journalism criteria
//! ([`criteria`], [`llm`], [`annotations`]), and compared with Cohen's kappa
//! ([`agreement`]). Human-human conflicts are triaged and adjudicated in
//! [`adjudication`]; [`pipeline`] wires the stages together.

pub mod corpus;
pub mod criteria;
pub mod jsonl;
pub mod llm;
pub mod annotations;
pub mod agreement;
pub mod adjudication;
pub mod pipeline;
pub mod twin;
