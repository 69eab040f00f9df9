//! Skill-aware chain-of-thought construction and expert routing for video
//! question answering datasets.
//!
//! The pipeline: describe the skill each training question needs, cluster
//! the descriptions into a shared skill taxonomy, annotate every question
//! with a skill-conditioned and verified chain of thought, partition the
//! questions into expert groups, and train one low-rank adapter per group
//! over a frozen base (at toy scale).

pub mod annotation;
pub mod canonical;
pub mod clock;
pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod experts;
pub mod http;
pub mod limiter;
pub mod llmclient;
pub mod projection;
pub mod rng;
pub mod sections;
pub mod taxonomy;

pub use annotation::{AnnotationConfig, CoTTrace, MergeMode, SubQA, TraceStatus, Verdict};
pub use clustering::{CentroidModel, ClusterAssignment, KMeansOptions};
pub use corpus::{
    AnnotatedExample, DatasetManifest, Split, SplitRatio, Verification, VideoQAExample,
};
pub use embedding::{cosine, EmbeddingVector, Encoder, EncoderKind, EncoderSpec, HashEncoder};
pub use error::{Error, ErrorCategory, Result, TransportError};
pub use experts::{ExpertPartition, ToyExpertModel, ToyModelConfig, TrainReport};
pub use llmclient::{
    LlmClient, LlmRequest, MockTransport, PromptTemplate, ResponseCache, TemplateRegistry,
};
pub use taxonomy::{SelectionMethod, SkillDescription, SkillSelection, SkillTaxonomy};
