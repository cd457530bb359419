//! Taxonomic trace links.
//!
//! Artifacts (requirements, test cases, standard clauses, ...) are classified
//! against a shared domain taxonomy by embedding similarity. Two artifacts
//! become a trace-link candidate when their top-K label sets overlap in at
//! least LC classes. Candidates are scored against ground truth, vetted by a
//! human, and exported as explicit trace links.

pub mod classifier;
pub mod corpus;
pub mod csvmeta;
pub mod embedding;
pub mod evaluation;
pub mod store;
pub mod synth;
pub mod taxgen;
pub mod taxonomy;
pub mod tracelinks;
