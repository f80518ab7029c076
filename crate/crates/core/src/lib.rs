//! Two-stage S-expression semantic parsing for conversational question
//! answering over knowledge graphs.

pub mod agent;
pub mod api;
pub mod calibrate;
pub mod config;
pub mod eval;
pub mod fixtures;
pub mod harness;
pub mod kg;
pub mod llm;
pub mod memory;
pub mod oracle;
pub mod sexpr;
pub mod sparql;
pub mod template;
pub mod testkit;
