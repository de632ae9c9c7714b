//! Fixture-scale benchmark: success judgment, failure taxonomy, round
//! accounting and report emission.

mod classify;
mod harness;

pub use classify::{classify_failure, judge_success, ClassifyError, FailureCategory, MIN_VALIDATED_ENDPOINTS};
pub use harness::{
    aggregate, record_corpus, render_summary, run_bench, write_bench_outputs, BenchConfig, BenchError, BenchReport,
    BenchRun, BenchTiming, CaseResult, CaseStatus, CategoryCount, Corpus, CorpusCase, Expectation, GroupStats,
    RoundStats,
};
