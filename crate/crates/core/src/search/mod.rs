//! Evolutionary search over per-sublayer ladder indices under a fixed
//! overall sparsity.

mod evolution;
mod fitness;
mod mutate;
mod plan;
mod select;

pub use evolution::{
    candidate_rng, evolutionary_search, read_trace, write_trace, SearchConfig, SearchResult,
    TraceEntry,
};
pub use fitness::{Evaluator, SearchMetric};
pub use mutate::{mutate, Mutation, MAX_MUTATION_RETRIES};
pub use plan::{verify_overall_sparsity, PlanSpace, SparsityPlan};
pub use select::{rank, select, validate_stages, Candidate, Selection, Stage};
