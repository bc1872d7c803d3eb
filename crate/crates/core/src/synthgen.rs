//! Synthetic, fully annotated corpora with an OCR-like error model.
//!
//! Words are drawn from a Zipfian distribution over a syllable-built
//! vocabulary. A fixed share of instances is corrupted; corruptions are either
//! a word's fixed "consistent" misreading or fresh random character edits.
//! Every word owns a centroid in feature space and instances scatter around
//! it with Gaussian noise; instances carrying a consistent misreading sit
//! around a shifted copy of the centroid.
//!
//! All randomness comes from ChaCha8 streams keyed by the configured seed, so
//! output is bit-identical across runs and platforms.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingMatrix, WordInstance};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator config: {0}")]
    Invalid(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    Latin,
    Devanagari,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocabulary_size: usize,
    pub total_words: usize,
    /// 0 gives uniform word frequencies.
    pub zipf_exponent: f64,
    pub target_word_accuracy: f64,
    pub consistent_error_fraction: f64,
    pub embedding_dim: usize,
    pub embedding_noise_sigma: f64,
    /// Length of the consistent-error centroid shift, as a multiple of the
    /// noise sigma. Its direction is random per word.
    pub consistent_shift: f64,
    pub oov_fraction: f64,
    pub script: Script,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            vocabulary_size: 1000,
            total_words: 10_000,
            zipf_exponent: 1.0,
            target_word_accuracy: 0.64,
            consistent_error_fraction: 0.5,
            embedding_dim: 128,
            embedding_noise_sigma: 0.25,
            consistent_shift: 0.5,
            oov_fraction: 0.05,
            script: Script::Latin,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: &str| Err(GeneratorError::Invalid(m.to_owned()));
        if self.vocabulary_size < 2 {
            return bad("vocabulary_size must be at least 2");
        }
        if self.total_words == 0 {
            return bad("total_words must be positive");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be non-negative");
        }
        if !(self.target_word_accuracy > 0.0 && self.target_word_accuracy <= 1.0) {
            return bad("target_word_accuracy must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.consistent_error_fraction) {
            return bad("consistent_error_fraction must be in [0, 1]");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if !(self.embedding_noise_sigma > 0.0 && self.embedding_noise_sigma.is_finite()) {
            return bad("embedding_noise_sigma must be positive");
        }
        if !(self.consistent_shift >= 0.0 && self.consistent_shift.is_finite()) {
            return bad("consistent_shift must be non-negative");
        }
        if !(0.0..1.0).contains(&self.oov_fraction) {
            return bad("oov_fraction must be in [0, 1)");
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        match key {
            "vocabulary_size" => self.vocabulary_size = num(key, value)?,
            "total_words" => self.total_words = num(key, value)?,
            "zipf_exponent" => self.zipf_exponent = num(key, value)?,
            "target_word_accuracy" => self.target_word_accuracy = num(key, value)?,
            "consistent_error_fraction" => self.consistent_error_fraction = num(key, value)?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "embedding_noise_sigma" => self.embedding_noise_sigma = num(key, value)?,
            "consistent_shift" => self.consistent_shift = num(key, value)?,
            "oov_fraction" => self.oov_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "script" => {
                self.script = match value {
                    "latin" => Script::Latin,
                    "devanagari" => Script::Devanagari,
                    other => return Err(format!("unknown script {other:?}")),
                }
            }
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Reads `key=value` lines over the defaults; `#` starts a comment line.
    pub fn from_kv(text: &str) -> Result<Self, GeneratorError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| GeneratorError::Parse {
                line: n + 1,
                reason: "expected key=value".into(),
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|reason| GeneratorError::Parse { line: n + 1, reason })?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    Consistent,
    Random,
}

/// Character confusions plus the memoized per-word consistent misreadings.
#[derive(Debug, Clone)]
pub struct ConfusionTable {
    substitutions: HashMap<char, Vec<(char, f64)>>,
    alphabet: Vec<char>,
    consistent: HashMap<String, String>,
    /// Probability of each further edit after the first.
    extra_edit: f64,
    deletion: f64,
    insertion: f64,
}

impl ConfusionTable {
    pub fn new(substitutions: HashMap<char, Vec<(char, f64)>>, alphabet: Vec<char>) -> Self {
        Self {
            substitutions,
            alphabet,
            consistent: HashMap::new(),
            extra_edit: 0.3,
            deletion: 0.15,
            insertion: 0.15,
        }
    }

    pub fn for_script(script: Script) -> Self {
        let pairs: &[(char, &str)] = match script {
            Script::Latin => &[
                ('a', "oeu"),
                ('b', "hd"),
                ('c', "eo"),
                ('d', "bo"),
                ('e', "co"),
                ('f', "t"),
                ('g', "qy"),
                ('h', "bn"),
                ('i', "lj"),
                ('k', "h"),
                ('l', "it"),
                ('m', "n"),
                ('n', "mhu"),
                ('o', "ac"),
                ('p', "q"),
                ('r', "n"),
                ('s', "z"),
                ('t', "fl"),
                ('u', "vn"),
                ('v', "uy"),
            ],
            Script::Devanagari => &[
                ('क', "फ"),
                ('ख', "रव"),
                ('घ', "ध"),
                ('ध', "घ"),
                ('म', "भय"),
                ('भ', "म"),
                ('ल', "त"),
                ('न', "ज"),
                ('प', "षय"),
                ('ब', "व"),
                ('व', "ब"),
                ('ि', "ी"),
                ('ी', "ि"),
                ('े', "ै"),
                ('ो', "ौ"),
            ],
        };
        let substitutions = pairs
            .iter()
            .map(|&(c, to)| (c, to.chars().map(|t| (t, 1.0)).collect()))
            .collect();
        let (consonants, vowels) = inventory(script);
        let mut alphabet: Vec<char> = consonants
            .iter()
            .chain(vowels.iter())
            .flat_map(|s| s.chars())
            .collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        Self::new(substitutions, alphabet)
    }

    pub fn consistent_of(&self, word: &str) -> Option<&str> {
        self.consistent.get(word).map(String::as_str)
    }

    fn substitute<R: Rng>(&self, c: char, rng: &mut R) -> char {
        if let Some(options) = self.substitutions.get(&c) {
            let weights: Vec<f64> = options.iter().map(|o| o.1).collect();
            if let Ok(w) = WeightedIndex::new(&weights) {
                return options[w.sample(rng)].0;
            }
        }
        loop {
            let r = self.alphabet[rng.random_range(0..self.alphabet.len())];
            if r != c || self.alphabet.len() == 1 {
                return r;
            }
        }
    }

    fn random_edit<R: Rng>(&self, word: &str, rng: &mut R) -> String {
        loop {
            let mut chars: Vec<char> = word.chars().collect();
            let mut edits = 1;
            while edits < 3 && rng.random::<f64>() < self.extra_edit {
                edits += 1;
            }
            for _ in 0..edits {
                let roll: f64 = rng.random();
                if chars.is_empty() || roll >= self.deletion + self.insertion {
                    if chars.is_empty() {
                        chars.push(self.alphabet[rng.random_range(0..self.alphabet.len())]);
                    } else {
                        let p = rng.random_range(0..chars.len());
                        chars[p] = self.substitute(chars[p], rng);
                    }
                } else if roll < self.deletion {
                    let p = rng.random_range(0..chars.len());
                    chars.remove(p);
                } else {
                    let p = rng.random_range(0..=chars.len());
                    chars.insert(p, self.alphabet[rng.random_range(0..self.alphabet.len())]);
                }
            }
            let out: String = chars.into_iter().collect();
            if out != word {
                return out;
            }
        }
    }
}

/// Misreads `word`. Consistent mode returns the word's fixed misreading,
/// creating it on first use; random mode applies fresh edits. The result
/// always differs from `word`.
pub fn corrupt_word<R: Rng>(word: &str, table: &mut ConfusionTable, mode: CorruptionMode, rng: &mut R) -> String {
    match mode {
        CorruptionMode::Random => table.random_edit(word, rng),
        CorruptionMode::Consistent => {
            if let Some(c) = table.consistent.get(word) {
                return c.clone();
            }
            let c = table.random_edit(word, rng);
            table.consistent.insert(word.to_owned(), c.clone());
            c
        }
    }
}

fn inventory(script: Script) -> (&'static [&'static str], &'static [&'static str]) {
    match script {
        Script::Latin => (
            &["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v"],
            &["a", "e", "i", "o", "u"],
        ),
        Script::Devanagari => (
            &[
                "क", "ख", "ग", "घ", "च", "ज", "ट", "ड", "त", "द", "न", "प", "ब", "भ", "म", "य", "र", "ल", "व", "स",
                "ह",
            ],
            &["", "ा", "ि", "ी", "ु", "े", "ो"],
        ),
    }
}

fn build_vocabulary<R: Rng>(script: Script, size: usize, rng: &mut R) -> Vec<String> {
    let (consonants, vowels) = inventory(script);
    let mut seen = HashSet::with_capacity(size);
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let syllables = 1 + rng.random_range(0..3) + usize::from(words.len() > 200 && rng.random_bool(0.5));
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(consonants[rng.random_range(0..consonants.len())]);
            w.push_str(vowels[rng.random_range(0..vowels.len())]);
        }
        if script == Script::Latin && rng.random_bool(0.3) {
            w.push_str(consonants[rng.random_range(0..consonants.len())]);
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect()
}

/// A synthetic world: vocabulary, dictionary, feature centroids and error
/// model. Corpora drawn from the same generator share all of these.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    vocabulary: Vec<String>,
    in_dictionary: Vec<bool>,
    frequencies: WeightedIndex<f64>,
    centroids: Vec<Vec<f64>>,
    shifts: Vec<Vec<f64>>,
    table: ConfusionTable,
    rng: ChaCha8Rng,
}

/// A drawn corpus plus the word list its dictionary should be built from.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub dictionary_words: Vec<String>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self, GeneratorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocabulary = build_vocabulary(config.script, config.vocabulary_size, &mut rng);
        let withheld = (config.oov_fraction * config.vocabulary_size as f64).floor() as usize;
        let mut in_dictionary = vec![true; vocabulary.len()];
        for i in sample(&mut rng, vocabulary.len(), withheld) {
            in_dictionary[i] = false;
        }
        let weights: Vec<f64> = (1..=vocabulary.len())
            .map(|rank| 1.0 / (rank as f64).powf(config.zipf_exponent))
            .collect();
        let frequencies = WeightedIndex::new(&weights).expect("positive weights");
        let dim = config.embedding_dim;
        let centroids = (0..vocabulary.len()).map(|_| gaussian_vec(&mut rng, dim, 1.0)).collect();
        let shift_len = config.consistent_shift * config.embedding_noise_sigma;
        let shifts = (0..vocabulary.len())
            .map(|_| {
                let v = gaussian_vec(&mut rng, dim, 1.0);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * shift_len / norm).collect()
            })
            .collect();
        Ok(Self {
            table: ConfusionTable::for_script(config.script),
            config,
            vocabulary,
            in_dictionary,
            frequencies,
            centroids,
            shifts,
            rng,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn table(&self) -> &ConfusionTable {
        &self.table
    }

    pub fn dictionary_words(&self) -> Vec<String> {
        self.vocabulary
            .iter()
            .zip(&self.in_dictionary)
            .filter(|(_, &keep)| keep)
            .map(|(w, _)| w.clone())
            .collect()
    }

    pub fn centroid(&self, word: usize) -> &[f64] {
        &self.centroids[word]
    }

    /// Draws `n` instances with ids `{id_prefix}{index}`. Exactly
    /// `round((1 - accuracy) * n)` of them are misread.
    pub fn draw(&mut self, n: usize, id_prefix: &str) -> Corpus {
        let dim = self.config.embedding_dim;
        let sigma = self.config.embedding_noise_sigma;
        let errors = ((1.0 - self.config.target_word_accuracy) * n as f64).round() as usize;
        let mut misread = vec![false; n];
        for i in sample(&mut self.rng, n, errors.min(n)) {
            misread[i] = true;
        }
        let mut instances = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for (i, &wrong) in misread.iter().enumerate() {
            let w = self.frequencies.sample(&mut self.rng);
            let truth = self.vocabulary[w].clone();
            let mut shifted = false;
            let prediction = if wrong {
                let mode = if self.rng.random::<f64>() < self.config.consistent_error_fraction {
                    shifted = true;
                    CorruptionMode::Consistent
                } else {
                    CorruptionMode::Random
                };
                corrupt_word(&truth, &mut self.table, mode, &mut self.rng)
            } else {
                truth.clone()
            };
            let noise = gaussian_vec(&mut self.rng, dim, sigma);
            for d in 0..dim {
                let mut v = self.centroids[w][d] + noise[d];
                if shifted {
                    v += self.shifts[w][d];
                }
                data.push(v as f32);
            }
            instances.push(WordInstance {
                id: format!("{id_prefix}{i:06}"),
                book_id: format!("book{:03}", i / 20_000),
                page_id: ((i / 200) % 100) as u64,
                prediction,
                ground_truth: Some(truth),
                image_ref: None,
                embedding_row: i,
            });
        }
        let mut corpus = Corpus::new(instances)
            .expect("generated ids are unique")
            .with_embeddings(EmbeddingMatrix::new(dim, data).expect("finite features"))
            .expect("one row per instance");
        corpus.metadata = self.metadata();
        corpus
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        [
            (
                "language",
                match c.script {
                    Script::Latin => "latin-synthetic",
                    Script::Devanagari => "devanagari-synthetic",
                }
                .to_owned(),
            ),
            ("generator", "batchfix-synthgen/chacha8".to_owned()),
            ("seed", c.seed.to_string()),
            ("vocabulary_size", c.vocabulary_size.to_string()),
            ("target_word_accuracy", c.target_word_accuracy.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

/// Draws `config.total_words` instances from a fresh generator.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<SyntheticCorpus, GeneratorError> {
    let mut g = Generator::new(config.clone())?;
    let corpus = g.draw(config.total_words, "w");
    Ok(SyntheticCorpus {
        corpus,
        dictionary_words: g.dictionary_words(),
    })
}
