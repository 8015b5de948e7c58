//! Annotation files, word embeddings and visual feature providers.

mod dataset;
mod embedding;
mod features;

pub use dataset::{
    filter_trainable, load_dataset, parse_dataset, save_dataset, to_json, BBox, Discarded, OcrToken, QaExample,
};
pub use embedding::{char_ngrams, fixture_words, fnv1a, EmbeddingTable, OovHashing, FIXTURE_DIM};
pub use features::{read_feature_file, write_feature_file, FeatureProvider, FeatureSource};
