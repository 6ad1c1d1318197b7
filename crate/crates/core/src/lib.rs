//! Agentic text-to-SQL engine.
//!
//! The pipeline has two stages that both run a hypothesis/verification loop
//! against the live database:
//!
//! 1. [`linking`] narrows a large schema down to a verified column subset
//!    (plan, prune, explore, synthesize).
//! 2. [`agent`] writes the final SQL with rule-selected [`guidance`],
//!    exploring the data before committing to a query.
//!
//! [`eval`] samples and votes over several episodes and computes the linking
//! and execution metrics. Every model call goes through [`llm::Gateway`], which
//! records a replayable trace and a token ledger.

pub mod agent;
pub mod eval;
pub mod exec;
pub mod guidance;
pub mod linking;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod schema;
pub mod testkit;
pub mod tokens;

pub use exec::{CompareMode, Database, ExecError, ExecErrorKind, ExecMode, ResultSet, Value};
pub use llm::{ChatRequest, ChatResponse, Gateway, GatewayError};
pub use schema::{ColumnRef, DatabaseSchema, SchemaSubset, Table};
