//! Dialogue records, preprocessing, vocabulary and corpus files.

mod corpus;
mod embeddings;
mod features;
mod preprocess;
mod record;
mod synth;
mod vocab;

pub use corpus::{load_corpus, parse_corpus, save_corpus, write_corpus};
pub use embeddings::load_embeddings;
pub use features::{augment_features, FeatureTable, FEATURE_WIDTH};
pub use preprocess::{
    is_course_token, merge_course_tokens, normalize_course_numbers, prepend_speaker_tokens, speaker_token, tokenize,
};
pub use record::{DialogueRecord, Utterance};
pub use synth::{generate_synthetic, overlap_baseline_scores, SYNTH_CANDIDATES};
pub use vocab::{Vocabulary, PAD, UNK};
