//! Multilingual multi-label emotion detection.
//!
//! Two strategies are supported for both tracks: `base` asks a model for all
//! emotions of a text at once, `pairwise` asks once per emotion and
//! aggregates the answers.

pub mod corpus;

pub use corpus::{
    internal_split, load_dataset, mix_languages, CorpusError, Dataset, IntensityLevel,
    LabelAssignment, LabelSchema, Sample, Track,
};
pub mod prompting;

pub use prompting::{
    aggregate_pairwise, export_instruction_dataset, parse_completion, render_base_prompt,
    render_completion, render_pairwise_prompts, render_system, CompletionFragment, ParseError,
    PromptError, PromptInstance, Strategy,
};
pub mod backend;

pub use backend::{
    pairwise_yes_probability, run_inference, Backend, BackendError, Completion, EchoGoldBackend,
    GenerationConfig, HttpBackend, InferenceOptions, LexiconBackend,
};
pub mod eval;
pub mod features;
pub mod head;

pub use eval::{
    macro_f1, pearson_score, per_sample_f1, read_predictions, write_predictions, EvalError,
    MetricsReport, PearsonMode,
};
pub use features::{featurize, FeatureProvider, FeatureVector, HashedNgramFeaturizer};
pub use head::{
    adamw_step, bce_loss, head_forward, head_gradients, head_predict, train_head, HeadParams,
    TrainConfig,
};
pub mod analysis;

pub use analysis::{emotion_intensity_performance, improvement_distribution, ImprovementHistogram};
pub mod synthetic;
