//! Batch correction of clusters: majority propagation, a simulated human
//! editor driven by ground truth, and an interactive session state machine.

mod auto;
mod oracle;
mod session;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusRecord};
use crate::lexicon::{Dictionary, LexiconError, SuggestParams};

pub use auto::{auto_correct, verification_pass};
pub use oracle::oracle_correct;
pub use session::{ClusterStatus, SessionError, SessionState};

#[derive(Debug, thiserror::Error)]
pub enum CorrectionError {
    #[error("instance {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Verify,
    Select,
    Type,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Cluster(usize),
    Member(String),
}

/// One editorial action. For `Verify` the label is the prediction being confirmed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub scope: Scope,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion_rank: Option<usize>,
}

impl Action {
    pub fn verify(scope: Scope, label: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Verify,
            scope,
            label: label.into(),
            suggestion_rank: None,
        }
    }

    pub fn select(scope: Scope, label: impl Into<String>, rank: usize) -> Self {
        Self {
            kind: ActionKind::Select,
            scope,
            label: label.into(),
            suggestion_rank: Some(rank),
        }
    }

    pub fn type_in(scope: Scope, label: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Type,
            scope,
            label: label.into(),
            suggestion_rank: None,
        }
    }
}

/// Ordered actions with running tallies of each kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionLog {
    actions: Vec<Action>,
    pub v_t: usize,
    pub v_d: usize,
    pub v_v: usize,
}

impl ActionLog {
    pub fn push(&mut self, action: Action) {
        match action.kind {
            ActionKind::Type => self.v_t += 1,
            ActionKind::Select => self.v_d += 1,
            ActionKind::Verify => self.v_v += 1,
        }
        self.actions.push(action);
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn extend(&mut self, other: ActionLog) {
        for a in other.actions {
            self.push(a);
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut tally = ActionLog::default();
        for a in &self.actions {
            tally.push(a.clone());
            serde_json::to_writer(&mut out, &LogRecord::new(a, &tally))?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> std::io::Result<ActionLog> {
        let mut log = ActionLog::default();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line)?;
            log.push(rec.into_action());
        }
        Ok(log)
    }
}

/// Wire form of a logged action, with tallies as of that action.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: ActionKind,
    pub scope: Scope,
    pub label: String,
    pub rank: Option<usize>,
    pub v_t: usize,
    pub v_d: usize,
    pub v_v: usize,
}

impl LogRecord {
    pub fn new(action: &Action, tally: &ActionLog) -> Self {
        Self {
            kind: action.kind,
            scope: action.scope.clone(),
            label: action.label.clone(),
            rank: action.suggestion_rank,
            v_t: tally.v_t,
            v_d: tally.v_d,
            v_v: tally.v_v,
        }
    }

    pub fn into_action(self) -> Action {
        Action {
            kind: self.kind,
            scope: self.scope,
            label: self.label,
            suggestion_rank: self.rank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Untouched,
    Propagated,
    HumanTyped,
    HumanSelected,
    HumanVerified,
}

impl Source {
    pub fn from_kind(kind: ActionKind) -> Self {
        match kind {
            ActionKind::Verify => Source::HumanVerified,
            ActionKind::Select => Source::HumanSelected,
            ActionKind::Type => Source::HumanTyped,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Untouched => "untouched",
            Source::Propagated => "propagated",
            Source::HumanTyped => "human_typed",
            Source::HumanSelected => "human_selected",
            Source::HumanVerified => "human_verified",
        }
    }
}

/// Final label and provenance for every instance in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionResult {
    pub labels: Vec<String>,
    pub sources: Vec<Source>,
    pub log: ActionLog,
    /// Positions (in the clustering) of the clusters sent for correction.
    pub processed_clusters: Vec<usize>,
}

impl CorrectionResult {
    pub fn untouched(corpus: &Corpus) -> Self {
        Self {
            labels: corpus.instances().iter().map(|w| w.prediction.clone()).collect(),
            sources: vec![Source::Untouched; corpus.len()],
            log: ActionLog::default(),
            processed_clusters: Vec::new(),
        }
    }

    /// Corpus-format export: prediction replaced by the final label plus a `source` field.
    pub fn write_corpus<W: Write>(&self, corpus: &Corpus, out: W) -> std::io::Result<()> {
        crate::corpus::write_records(
            out,
            corpus.instances().iter().enumerate().map(|(i, w)| CorpusRecord {
                prediction: self.labels[i].clone(),
                source: Some(self.sources[i].as_str().to_owned()),
                ..CorpusRecord::from(w)
            }),
        )
    }
}

/// Knobs shared by the simulated correction modes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    pub suggest: SuggestParams,
    /// Charge one member-scope verification per member in the human-aided
    /// mode, on top of the cluster action.
    pub inspect_members: bool,
}

/// Fraction of `positions` whose final label equals the ground truth.
pub fn accuracy(result: &CorrectionResult, corpus: &Corpus, positions: &[usize]) -> Result<f64, CorrectionError> {
    if positions.is_empty() {
        return Err(CorrectionError::EmptyEvaluation);
    }
    let mut hits = 0usize;
    for &p in positions {
        let w = &corpus.instances()[p];
        let gt = w
            .ground_truth
            .as_deref()
            .ok_or_else(|| CorrectionError::MissingGroundTruth(w.id.clone()))?;
        if result.labels[p] == gt {
            hits += 1;
        }
    }
    Ok(hits as f64 / positions.len() as f64)
}

/// Accuracy over every instance of the corpus.
pub fn corpus_accuracy(result: &CorrectionResult, corpus: &Corpus) -> Result<f64, CorrectionError> {
    let all: Vec<usize> = (0..corpus.len()).collect();
    accuracy(result, corpus, &all)
}

/// Occurrence count of each prediction string in the corpus.
pub(crate) fn prediction_counts(corpus: &Corpus) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for w in corpus.instances() {
        *m.entry(w.prediction.as_str()).or_insert(0) += 1;
    }
    m
}

/// Most frequent string among `values`; ties prefer dictionary words, then
/// the string more frequent in `global`, then the lexicographically smaller.
pub(crate) fn modal<'a>(
    values: impl Iterator<Item = &'a str>,
    dict: &Dictionary,
    global: &HashMap<&str, usize>,
) -> Option<&'a str> {
    let mut counts: HashMap<&'a str, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|&(a, ca), &(b, cb)| {
            ca.cmp(&cb)
                .then_with(|| dict.contains(a).cmp(&dict.contains(b)))
                .then_with(|| {
                    let ga = global.get(a).copied().unwrap_or(0);
                    let gb = global.get(b).copied().unwrap_or(0);
                    ga.cmp(&gb)
                })
                .then_with(|| b.cmp(a))
        })
        .map(|(v, _)| v)
}

/// Clusters holding at least one flagged member.
pub(crate) fn clusters_with_errors(clustering: &crate::clustering::Clustering, flags: &[bool]) -> Vec<usize> {
    clustering
        .clusters
        .iter()
        .enumerate()
        .filter(|(_, ms)| ms.iter().any(|&m| flags[m]))
        .map(|(c, _)| c)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::DictionaryMode;

    #[test]
    fn log_tallies_and_round_trip() {
        let mut log = ActionLog::default();
        log.push(Action::type_in(Scope::Cluster(0), "maple"));
        log.push(Action::select(Scope::Member("w3".into()), "the", 2));
        log.push(Action::verify(Scope::Cluster(1), "cat"));
        log.push(Action::verify(Scope::Cluster(2), "dog"));
        assert_eq!((log.v_t, log.v_d, log.v_v), (1, 1, 2));
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.contains(r#""v_t":1,"v_d":1,"v_v":2"#), "{last}");
        assert!(text.lines().next().unwrap().contains(r#""scope":{"cluster":0}"#));
        assert_eq!(ActionLog::read_jsonl(&buf[..]).unwrap(), log);
    }

    #[test]
    fn modal_tie_breaks() {
        let dict = Dictionary::from_words(["the"], DictionaryMode::Static);
        let global = HashMap::new();
        assert_eq!(modal(["thc", "the"].into_iter(), &dict, &global), Some("the"));
        assert_eq!(modal(["thc", "thc", "the"].into_iter(), &dict, &global), Some("thc"));
        let global: HashMap<&str, usize> = [("zz", 5), ("aa", 1)].into_iter().collect();
        assert_eq!(modal(["aa", "zz"].into_iter(), &dict, &global), Some("zz"));
        assert_eq!(modal(["bb", "aa"].into_iter(), &dict, &HashMap::new()), Some("aa"));
        assert_eq!(modal(std::iter::empty(), &dict, &global), None);
    }
}
