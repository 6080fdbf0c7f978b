//! Ranks developers as candidate fixers for a crash, using only the crash's
//! stack trace and the blame annotations of the files it touches.
//!
//! The pipeline compresses recursive loops out of a trace, extracts per
//! developer "stack traces" of the frames they edited, encodes both the bug
//! and each developer with a shared-embedding sequence encoder, and scores
//! the pair with a bilinear similarity and an MLP trained on a pairwise
//! ranking loss. Heuristic and TF-IDF classification baselines, time-split
//! evaluation and a synthetic corpus generator are included.

pub mod annotations;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod ranker;
pub mod trace;

pub use annotations::{
    build_developer_stack, candidate_developers, parse_annotations, Annotation, AnnotationLine, AnnotationStore,
    AuthorshipPolicy, DeveloperStack,
};
pub use error::{Error, Result};
pub use eval::{bootstrap_diff, compute_metrics, split_by_time, BootstrapInterval, EvalResult, Metric, SplitSpec};
pub use ranker::{
    ranknet_loss, train, Checkpoint, EncoderKind, FeatureMode, ModelConfig, RankedEntry, RankedList, RankingModel,
    RankingOutput, TrainingSummary,
};
pub use trace::{
    compress_loops, parse_report, parse_reports, tokenize, DeveloperId, StackFrame, StackTrace, TokenMode,
};
