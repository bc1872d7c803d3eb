//! Shared fixtures for the benchmarks.

use batchfix::synthgen::{generate_corpus, GeneratorConfig};
use batchfix::{Corpus, Dictionary, DictionaryMode};

/// Synthetic corpus and its static dictionary.
pub fn fixture(total_words: usize, vocabulary_size: usize, embedding_dim: usize, seed: u64) -> (Corpus, Dictionary) {
    let s = generate_corpus(&GeneratorConfig {
        total_words,
        vocabulary_size,
        embedding_dim,
        seed,
        ..GeneratorConfig::default()
    })
    .expect("valid generator config");
    let dict = Dictionary::from_words(&s.dictionary_words, DictionaryMode::Static);
    (s.corpus, dict)
}

/// Predictions that are not in the dictionary, in corpus order.
pub fn flagged_predictions(corpus: &Corpus, dict: &Dictionary) -> Vec<String> {
    corpus
        .instances()
        .iter()
        .filter(|w| !dict.contains(&w.prediction))
        .map(|w| w.prediction.clone())
        .collect()
}
