//! Core library of the AuditNet compliance-auditing assistant.
//!
//! Standards documents are parsed into heading-delimited sections, split into
//! bounded chunks, embedded and indexed. A user question is interpreted into
//! three slots (policy, standard, subject), confirmed by the user, matched
//! against the index, tagged with control labels and composed into a cited
//! Markdown answer.

pub mod composer;
pub mod corpus;
pub mod embed;
pub mod engine;
pub mod evalkit;
pub mod extractor;
pub mod hash;
pub mod http;
pub mod interpreter;
pub mod llm;
pub mod splitter;
pub mod structparse;
pub mod tagger;
pub mod vindex;
