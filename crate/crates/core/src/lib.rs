//! Visual text entity linking and knowledge-augmented question answering.
//!
//! The pipeline reads the text in an image, retrieves the closest knowledge
//! base entities by normalized edit distance, asks a multimodal model to pick
//! one, and answers questions with that entity's facts in the prompt.

pub mod distance;
pub mod error;
pub mod eval;
pub mod index;
pub mod kb;
pub mod linking;
pub mod lmm;
pub mod ocr;
pub mod qa;
pub mod synth;
pub mod util;

pub use distance::{fold, levenshtein, levenshtein_bounded, ned, Ned};
pub use error::{Error, ErrorClass, Result};
pub use eval::{
    evaluate_split, Category, DatasetRecord, EvalConfig, EvalOutcome, EvalReport, EvalResources,
    ReportFormat, Split,
};
pub use index::{CandidateSet, EntityIndex, ScoredCandidate};
pub use kb::{Entity, FactSentence, KbSplit, KnowledgeBase, TemplateTable, Triplet};
pub use linking::{LinkResult, Linker, LinkerConfig, LinkingMode, Resolution};
pub use lmm::{GenerationRequest, GenerationResult, LmmBackend, LmmGateway, MockPolicy, RetryPolicy};
pub use ocr::{FixtureOcr, ImageRef, LiveOcr, OcrGateway, OcrResult, TextToken};
pub use qa::{Answerer, PromptStyle, PromptVariant, QaOutput, QaPromptOptions};
