//! Utility- and distraction-aware evaluation of retrieval contexts for
//! retrieval-augmented generation.
//!
//! Passages are annotated with a signed utility derived from an LLM's
//! abstention probability. Contexts are scored with classic IR metrics or
//! with UDCG, and metrics are compared by how well they rank contexts by
//! downstream answer outcome.

pub mod classic;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod trainer;
pub mod udcg;
pub mod utility;

pub use error::{DataError, MetricError};
pub use model::{
    EvalContext, JudgmentIndex, Outcome, Passage, Question, RankedEntry, RankedList,
    RelevanceJudgment, ThetaWeights, UtilityAnnotation, UtilityIndex,
};
pub use udcg::{udcg, udcg_theta, ContextUtilities, DEFAULT_GAMMA};
