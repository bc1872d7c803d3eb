//! Dictionary-based error detection, correction proposals, and the four-way
//! agreement taxonomy between the recognizer and the detector.

mod bktree;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use bktree::BkTree;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid UTF-8")]
    Utf8 { path: PathBuf, line: usize },
    #[error("{path}:{line}: bad frequency column {value:?}")]
    Frequency {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("cannot add {0:?} to a static dictionary")]
    StaticMode(String),
    #[error("cannot add an empty word")]
    EmptyWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryMode {
    Static,
    Growing,
}

impl std::fmt::Display for DictionaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DictionaryMode::Static => "static",
            DictionaryMode::Growing => "growing",
        })
    }
}

impl std::str::FromStr for DictionaryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(DictionaryMode::Static),
            "growing" => Ok(DictionaryMode::Growing),
            other => Err(format!("unknown dictionary mode {other:?}")),
        }
    }
}

/// Size of the drop-down of correction proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestParams {
    pub max_distance: usize,
    pub top_k: usize,
}

impl Default for SuggestParams {
    fn default() -> Self {
        Self {
            max_distance: 2,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub word: String,
    pub distance: usize,
    pub rank: usize,
}

/// Vocabulary with exact membership and a fuzzy edit-distance index.
///
/// A `Growing` dictionary accepts new words through [`Dictionary::add_word`];
/// a `Static` one never changes after construction.
#[derive(Debug, Clone)]
pub struct Dictionary {
    mode: DictionaryMode,
    words: Vec<String>,
    chars: Vec<Vec<char>>,
    frequency: Vec<u64>,
    index: HashMap<String, usize>,
    tree: BkTree,
}

impl Dictionary {
    pub fn new(mode: DictionaryMode) -> Self {
        Self {
            mode,
            words: Vec::new(),
            chars: Vec::new(),
            frequency: Vec::new(),
            index: HashMap::new(),
            tree: BkTree::default(),
        }
    }

    pub fn from_words<I, S>(words: I, mode: DictionaryMode) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut dict = Self::new(mode);
        for w in words {
            dict.insert(w.as_ref().trim(), 0);
        }
        dict
    }

    /// Builds from `(word, frequency)` pairs; repeated words sum their counts.
    pub fn from_counts<I, S>(words: I, mode: DictionaryMode) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut dict = Self::new(mode);
        for (w, c) in words {
            dict.insert(w.as_ref().trim(), c);
        }
        dict
    }

    fn insert(&mut self, word: &str, count: u64) -> bool {
        if word.is_empty() {
            return false;
        }
        if let Some(&i) = self.index.get(word) {
            self.frequency[i] += count;
            return false;
        }
        let id = self.words.len();
        self.words.push(word.to_owned());
        self.chars.push(word.chars().collect());
        self.frequency.push(count);
        self.index.insert(word.to_owned(), id);
        self.tree.insert(id, &self.chars);
        true
    }

    pub fn mode(&self) -> DictionaryMode {
        self.mode
    }

    /// Same vocabulary under a different mode.
    pub fn with_mode(&self, mode: DictionaryMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn frequency(&self, word: &str) -> u64 {
        self.index.get(word).map_or(0, |&i| self.frequency[i])
    }

    /// Words in insertion order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Adds a word to a growing dictionary. Returns whether it was new.
    pub fn add_word(&mut self, word: &str) -> Result<bool, LexiconError> {
        if self.mode == DictionaryMode::Static {
            return Err(LexiconError::StaticMode(word.to_owned()));
        }
        if word.is_empty() {
            return Err(LexiconError::EmptyWord);
        }
        Ok(self.insert(word, 0))
    }

    /// Dictionary words within `max_distance` of `query`, ordered by distance,
    /// then frequency (descending), then the word itself; at most `top_k`.
    pub fn suggest(&self, query: &str, max_distance: usize, top_k: usize) -> Vec<Suggestion> {
        let q: Vec<char> = query.chars().collect();
        let mut hits = self.tree.find(&q, max_distance, &self.chars);
        hits.sort_by(|&(a, da), &(b, db)| {
            da.cmp(&db)
                .then_with(|| self.frequency[b].cmp(&self.frequency[a]))
                .then_with(|| self.words[a].cmp(&self.words[b]))
        });
        hits.into_iter()
            .take(top_k)
            .enumerate()
            .map(|(i, (w, d))| Suggestion {
                word: self.words[w].clone(),
                distance: d,
                rank: i + 1,
            })
            .collect()
    }

    pub fn suggest_with(&self, query: &str, params: SuggestParams) -> Vec<Suggestion> {
        self.suggest(query, params.max_distance, params.top_k)
    }

    /// Rank of `target` among the suggestions for `query`, if offered.
    pub fn suggestion_rank(&self, query: &str, target: &str, params: SuggestParams) -> Option<usize> {
        if !self.contains(target) {
            return None;
        }
        self.suggest_with(query, params)
            .into_iter()
            .find(|s| s.word == target)
            .map(|s| s.rank)
    }
}

/// Reads word lists (one word per line, optional `\t<count>` column,
/// `#` comment lines) into a dictionary.
pub fn build_dictionary<P: AsRef<Path>>(
    paths: &[P],
    mode: DictionaryMode,
) -> Result<Dictionary, LexiconError> {
    let mut dict = Dictionary::new(mode);
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (n, raw) in bytes.split(|&b| b == b'\n').enumerate() {
            let line = std::str::from_utf8(raw).map_err(|_| LexiconError::Utf8 {
                path: path.to_path_buf(),
                line: n + 1,
            })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, count) = match line.split_once('\t') {
                Some((w, c)) => {
                    let c = c.trim().parse::<u64>().map_err(|_| LexiconError::Frequency {
                        path: path.to_path_buf(),
                        line: n + 1,
                        value: c.to_owned(),
                    })?;
                    (w.trim(), c)
                }
                None => (line, 0),
            };
            dict.insert(word, count);
        }
    }
    Ok(dict)
}

/// Writes the vocabulary as a word list (with frequencies when any are set).
pub fn write_word_list(dict: &Dictionary, path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (w, &f) in dict.words.iter().zip(&dict.frequency) {
        if f > 0 {
            writeln!(out, "{w}\t{f}")?;
        } else {
            writeln!(out, "{w}")?;
        }
    }
    out.flush()
}

/// Per-instance error flags: an instance is flagged when its prediction is
/// not in the dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionFlags(pub Vec<bool>);

impl DetectionFlags {
    pub fn is_flagged(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }
}

pub fn detect(corpus: &Corpus, dict: &Dictionary) -> DetectionFlags {
    DetectionFlags(
        corpus
            .instances()
            .iter()
            .map(|w| !dict.contains(&w.prediction))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Flagged, but the prediction was right (out-of-vocabulary truth).
    Efp,
    /// Flagged and wrong: the correction target.
    Etp,
    /// Not flagged, yet wrong: a dictionary word in the wrong place.
    Rfn,
    Tn,
}

impl Category {
    pub fn of(flagged: bool, correct: bool) -> Self {
        match (flagged, correct) {
            (true, true) => Category::Efp,
            (true, false) => Category::Etp,
            (false, false) => Category::Rfn,
            (false, true) => Category::Tn,
        }
    }
}

/// Instance positions split by category. Instances without ground truth are
/// listed in `unlabeled` and belong to none of the four sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Categories {
    pub efp: Vec<usize>,
    pub etp: Vec<usize>,
    pub rfn: Vec<usize>,
    pub tn: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl Categories {
    pub fn labeled_count(&self) -> usize {
        self.efp.len() + self.etp.len() + self.rfn.len() + self.tn.len()
    }
}

pub fn categorize(corpus: &Corpus, flags: &DetectionFlags) -> Categories {
    let mut out = Categories::default();
    for (i, inst) in corpus.instances().iter().enumerate() {
        let Some(correct) = inst.is_correct() else {
            out.unlabeled.push(i);
            continue;
        };
        let bucket = match Category::of(flags.is_flagged(i), correct) {
            Category::Efp => &mut out.efp,
            Category::Etp => &mut out.etp,
            Category::Rfn => &mut out.rfn,
            Category::Tn => &mut out.tn,
        };
        bucket.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::distance::edit_distance;
    use crate::corpus::WordInstance;
    use proptest::prelude::*;

    fn corpus(pairs: &[(&str, Option<&str>)]) -> Corpus {
        Corpus::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, (p, g))| WordInstance {
                    id: format!("w{i}"),
                    book_id: "b".into(),
                    page_id: 0,
                    prediction: (*p).into(),
                    ground_truth: g.map(Into::into),
                    image_ref: None,
                    embedding_row: i,
                })
                .collect(),
        )
        .unwrap()
    }

    fn brute_force(dict: &Dictionary, q: &str, max_d: usize, k: usize) -> Vec<(String, usize)> {
        let mut all: Vec<(String, usize, u64)> = dict
            .words()
            .map(|w| (w.to_owned(), edit_distance(q, w), dict.frequency(w)))
            .filter(|(_, d, _)| *d <= max_d)
            .collect();
        all.sort_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
        all.into_iter().take(k).map(|(w, d, _)| (w, d)).collect()
    }

    #[test]
    fn union_of_word_lists() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        std::fs::write(&a, "the\ncat\n").unwrap();
        std::fs::write(&b, "# comment\ncat\n\n  dog  \n").unwrap();
        let d = build_dictionary(&[&a, &b], DictionaryMode::Static).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.contains("the") && d.contains("cat") && d.contains("dog"));
    }

    #[test]
    fn empty_list_flags_everything() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, "").unwrap();
        let d = build_dictionary(&[&a], DictionaryMode::Static).unwrap();
        assert!(d.is_empty());
        let c = corpus(&[("the", None), ("x", None)]);
        assert_eq!(detect(&c, &d).0, vec![true, true]);
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, b"ok\n\xff\xfe\n").unwrap();
        match build_dictionary(&[&a], DictionaryMode::Static) {
            Err(LexiconError::Utf8 { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frequency_column() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, "food\t3\nfool\t9\n").unwrap();
        let d = build_dictionary(&[&a], DictionaryMode::Static).unwrap();
        assert_eq!(d.frequency("fool"), 9);
        let s = d.suggest("foox", 1, 5);
        assert_eq!(s[0].word, "fool");
        assert_eq!(s[1].word, "food");
    }

    #[test]
    fn devanagari_membership() {
        let d = Dictionary::from_words(["कमल"], DictionaryMode::Static);
        assert!(d.contains("कमल"));
        assert!(!d.contains("कमला"));
    }

    #[test]
    fn growing_adds_once() {
        let mut d = Dictionary::from_words(["Capital"], DictionaryMode::Growing);
        assert!(d.add_word("Capulet").unwrap());
        assert!(!d.add_word("Capulet").unwrap());
        assert_eq!(d.len(), 2);
        let s = d.suggest("Capulet", 2, 5);
        assert_eq!(s[0].word, "Capulet");
        assert_eq!(s[0].distance, 0);
        assert_eq!(s[0].rank, 1);
    }

    #[test]
    fn static_rejects_add() {
        let mut d = Dictionary::from_words(["a"], DictionaryMode::Static);
        assert!(matches!(d.add_word("b"), Err(LexiconError::StaticMode(_))));
        assert_eq!(d.len(), 1);
        assert!(!d.contains("b"));
    }

    #[test]
    fn suggest_examples() {
        let d = Dictionary::from_words(["food", "fool", "flood"], DictionaryMode::Static);
        let s = d.suggest("fool", 1, 5);
        assert_eq!(
            s,
            vec![
                Suggestion { word: "fool".into(), distance: 0, rank: 1 },
                Suggestion { word: "food".into(), distance: 1, rank: 2 },
            ]
        );
        let d2 = Dictionary::from_words(["the", "cat"], DictionaryMode::Static);
        assert!(d2.suggest("zzzz", 1, 5).is_empty());
        assert_eq!(d2.suggest("cat", 0, 5).len(), 1);
        assert!(d2.suggest("cats", 0, 5).is_empty());
    }

    #[test]
    fn detect_and_categorize() {
        let d = Dictionary::from_words(["the", "cat"], DictionaryMode::Static);
        let c = corpus(&[("the", Some("the")), ("thc", Some("the")), ("cat", Some("cat"))]);
        assert_eq!(detect(&c, &d).0, vec![false, true, false]);
        assert!(detect(&Corpus::default(), &d).0.is_empty());

        let c = corpus(&[
            ("the", Some("the")),
            ("Capulet", Some("Capulet")),
            ("thc", Some("the")),
            ("cat", Some("the")),
            ("cat", None),
        ]);
        let flags = detect(&c, &d);
        assert!(flags.is_flagged(1));
        let cats = categorize(&c, &flags);
        assert_eq!(cats.tn, vec![0]);
        assert_eq!(cats.efp, vec![1]);
        assert_eq!(cats.etp, vec![2]);
        assert_eq!(cats.rfn, vec![3]);
        assert_eq!(cats.unlabeled, vec![4]);
        assert_eq!(cats.labeled_count(), 4);
    }

    proptest! {
        #[test]
        fn suggest_matches_scan(
            words in proptest::collection::vec("[a-e]{1,6}", 0..200),
            freqs in proptest::collection::vec(0u64..4, 200),
            q in "[a-e]{0,7}",
            max_d in 0usize..4,
            k in 1usize..8,
        ) {
            let d = Dictionary::from_counts(words.iter().zip(freqs.iter().copied()), DictionaryMode::Static);
            let got: Vec<_> = d.suggest(&q, max_d, k).into_iter().map(|s| (s.word, s.distance)).collect();
            prop_assert_eq!(got, brute_force(&d, &q, max_d, k));
        }

        #[test]
        fn growing_never_adds_flags(
            base in proptest::collection::vec("[a-c]{1,3}", 0..10),
            adds in proptest::collection::vec("[a-c]{1,3}", 0..10),
            preds in proptest::collection::vec("[a-c]{1,3}", 1..30),
        ) {
            let pairs: Vec<(&str, Option<&str>)> = preds.iter().map(|p| (p.as_str(), None)).collect();
            let c = corpus(&pairs);
            let mut d = Dictionary::from_words(&base, DictionaryMode::Growing);
            let before = detect(&c, &d);
            for w in &adds {
                d.add_word(w).unwrap();
            }
            let after = detect(&c, &d);
            for i in 0..c.len() {
                prop_assert!(!after.is_flagged(i) || before.is_flagged(i));
            }
        }
    }
}
