//! Answer selection and scoring.

mod gold;
mod metrics;
mod report;
mod vote;

pub use gold::{extract_gold_columns, GoldColumns, GoldParseError};
pub use metrics::{
    aggregate_generation, aggregate_linking, candidate_correctness, score_example,
    score_generation, score_linking, GenerationAggregate, GenerationExample, LinkingAggregate,
    LinkingExample,
};
pub use report::{AggregateReport, EvalReport, ExampleReport};
pub use vote::{
    parse_pick, plurality, render_candidates, vote, Candidate, CandidateBundle, Plurality,
    VoteOutcome, DEFAULT_SAMPLES,
};
