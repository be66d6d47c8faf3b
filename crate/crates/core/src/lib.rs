//! Cooperative text-to-SQL over segmented database schemas.
//!
//! Several agents each hold a private fragment of a database schema. They
//! grow a shared global schema round by round, generate SQL from what they
//! know, and check each other's SQL until one of them accepts.
//!
//! - [`schema`]: the schema lattice (merge, extraction with retention,
//!   partitioning, coverage score).
//! - [`sql`]: parsing, identifier resolution, difficulty profile and
//!   canonical rendering.
//! - [`agents`]: agent profiles, prompts and reasoner backends (oracle,
//!   remote chat completions, cassette replay).
//! - [`orchestrator`]: the episode loop and reward accounting.

pub mod agents;
pub mod orchestrator;
pub mod schema;
pub mod sql;

pub use schema::{
    extract_subschema, merge_schemas, partition_schema, schema_contains, schema_match_score, Column,
    ColumnRef, ColumnType, ForeignKey, PartitionMode, Schema, SchemaError, SchemaRef, SchemaSelection,
    TableDef,
};
