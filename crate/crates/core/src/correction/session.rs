use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    clusters_with_errors, modal, prediction_counts, Action, ActionKind, ActionLog, CorrectionResult, Scope,
    Source,
};
use crate::clustering::Clustering;
use crate::corpus::Corpus;
use crate::lexicon::{detect, Dictionary, DictionaryMode, Suggestion, SuggestParams};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("unknown member {0:?}")]
    UnknownMember(String),
    #[error("{0} is already resolved")]
    AlreadyResolved(String),
    #[error("invalid action: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    Pending,
    Resolved,
}

/// Interactive human-aided correction over a fixed clustering.
///
/// Only clusters with a flagged member are queued; their positions in the
/// clustering are the cluster ids. Member overrides must precede the
/// cluster-scope action that resolves the rest of the cluster.
#[derive(Debug, Clone)]
pub struct SessionState {
    corpus: Arc<Corpus>,
    clustering: Arc<Clustering>,
    dict: Dictionary,
    params: SuggestParams,
    queued: HashMap<usize, ClusterStatus>,
    member_cluster: HashMap<String, (usize, usize)>,
    modal: HashMap<usize, String>,
    labels: Vec<Option<String>>,
    sources: Vec<Source>,
    log: ActionLog,
}

impl SessionState {
    pub fn new(corpus: Arc<Corpus>, clustering: Arc<Clustering>, dict: Dictionary, params: SuggestParams) -> Self {
        let flags = detect(&corpus, &dict);
        let global = prediction_counts(&corpus);
        let mut queued = HashMap::new();
        let mut member_cluster = HashMap::new();
        let mut modal_by_cluster = HashMap::new();
        for c in clusters_with_errors(&clustering, &flags.0) {
            let members = &clustering.clusters[c];
            queued.insert(c, ClusterStatus::Pending);
            for &m in members {
                member_cluster.insert(corpus.instances()[m].id.clone(), (c, m));
            }
            let rep = modal(
                members.iter().map(|&m| corpus.instances()[m].prediction.as_str()),
                &dict,
                &global,
            )
            .expect("clusters are non-empty")
            .to_owned();
            modal_by_cluster.insert(c, rep);
        }
        let n = corpus.len();
        Self {
            corpus,
            clustering,
            dict,
            params,
            queued,
            member_cluster,
            modal: modal_by_cluster,
            labels: vec![None; n],
            sources: vec![Source::Untouched; n],
            log: ActionLog::default(),
        }
    }

    /// Rebuilds a session by applying `actions` in order.
    pub fn replay<'a>(
        corpus: Arc<Corpus>,
        clustering: Arc<Clustering>,
        dict: Dictionary,
        params: SuggestParams,
        actions: impl IntoIterator<Item = &'a Action>,
    ) -> Result<Self, SessionError> {
        let mut s = Self::new(corpus, clustering, dict, params);
        for a in actions {
            s.apply(a)?;
        }
        Ok(s)
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn params(&self) -> SuggestParams {
        self.params
    }

    pub fn log(&self) -> &ActionLog {
        &self.log
    }

    /// Queued cluster ids with their status, in cluster order.
    pub fn clusters(&self) -> Vec<(usize, ClusterStatus)> {
        let mut v: Vec<_> = self.queued.iter().map(|(&c, &s)| (c, s)).collect();
        v.sort_unstable_by_key(|&(c, _)| c);
        v
    }

    pub fn status(&self, cluster: usize) -> Result<ClusterStatus, SessionError> {
        self.queued
            .get(&cluster)
            .copied()
            .ok_or(SessionError::UnknownCluster(cluster))
    }

    pub fn members(&self, cluster: usize) -> Result<&[usize], SessionError> {
        self.status(cluster)?;
        Ok(&self.clustering.clusters[cluster])
    }

    pub fn modal_prediction(&self, cluster: usize) -> Result<&str, SessionError> {
        self.status(cluster)?;
        Ok(&self.modal[&cluster])
    }

    pub fn flagged_count(&self, cluster: usize) -> Result<usize, SessionError> {
        Ok(self
            .members(cluster)?
            .iter()
            .filter(|&&m| !self.dict.contains(&self.corpus.instances()[m].prediction))
            .count())
    }

    pub fn final_label(&self, position: usize) -> Option<&str> {
        self.labels[position].as_deref()
    }

    pub fn suggest(&self, query: &str) -> Vec<Suggestion> {
        self.dict.suggest_with(query, self.params)
    }

    pub fn is_complete(&self) -> bool {
        self.queued.values().all(|&s| s == ClusterStatus::Resolved)
    }

    /// Final labels so far; unresolved members keep their prediction.
    pub fn result(&self) -> CorrectionResult {
        let mut r = CorrectionResult::untouched(&self.corpus);
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(l) = label {
                r.labels[i] = l.clone();
                r.sources[i] = self.sources[i];
            }
        }
        r.log = self.log.clone();
        r.processed_clusters = self.clusters().into_iter().map(|(c, _)| c).collect();
        r
    }

    /// Validates `action` against the current state and returns it in the
    /// form that would be logged (a blank verify label is filled in).
    pub fn check(&self, action: &Action) -> Result<Action, SessionError> {
        let query = match &action.scope {
            Scope::Cluster(c) => {
                if self.status(*c)? == ClusterStatus::Resolved {
                    return Err(SessionError::AlreadyResolved(format!("cluster {c}")));
                }
                self.modal[c].clone()
            }
            Scope::Member(id) => {
                let &(c, pos) = self
                    .member_cluster
                    .get(id)
                    .ok_or_else(|| SessionError::UnknownMember(id.clone()))?;
                if self.queued[&c] == ClusterStatus::Resolved || self.labels[pos].is_some() {
                    return Err(SessionError::AlreadyResolved(format!("member {id}")));
                }
                self.corpus.instances()[pos].prediction.clone()
            }
        };
        let mut normalized = action.clone();
        match action.kind {
            ActionKind::Verify => {
                if action.label.is_empty() {
                    normalized.label = query;
                } else if action.label != query {
                    return Err(SessionError::Invalid(format!(
                        "verify label {:?} is not the prediction {query:?}",
                        action.label
                    )));
                }
                normalized.suggestion_rank = None;
            }
            ActionKind::Select => {
                let rank = action
                    .suggestion_rank
                    .ok_or_else(|| SessionError::Invalid("select needs a suggestion_rank".into()))?;
                let offered = self.suggest(&query);
                match offered.get(rank.wrapping_sub(1)) {
                    Some(s) if s.word == action.label => {}
                    Some(s) => {
                        return Err(SessionError::Invalid(format!(
                            "rank {rank} offers {:?}, not {:?}",
                            s.word, action.label
                        )))
                    }
                    None => return Err(SessionError::Invalid(format!("no suggestion at rank {rank}"))),
                }
            }
            ActionKind::Type => {
                if action.label.trim().is_empty() {
                    return Err(SessionError::Invalid("typed label is empty".into()));
                }
                normalized.suggestion_rank = None;
            }
        }
        Ok(normalized)
    }

    /// Applies one action. On error the state is unchanged.
    pub fn apply(&mut self, action: &Action) -> Result<(), SessionError> {
        let action = self.check(action)?;
        if action.kind == ActionKind::Type && self.dict.mode() == DictionaryMode::Growing {
            self.dict
                .add_word(&action.label)
                .map_err(|e| SessionError::Invalid(e.to_string()))?;
        }
        let source = Source::from_kind(action.kind);
        match &action.scope {
            Scope::Cluster(c) => {
                for &m in &self.clustering.clusters[*c] {
                    if self.labels[m].is_none() {
                        self.labels[m] = Some(action.label.clone());
                        self.sources[m] = source;
                    }
                }
                self.queued.insert(*c, ClusterStatus::Resolved);
            }
            Scope::Member(id) => {
                let (c, pos) = self.member_cluster[id];
                self.labels[pos] = Some(action.label.clone());
                self.sources[pos] = source;
                if self.clustering.clusters[c].iter().all(|&m| self.labels[m].is_some()) {
                    self.queued.insert(c, ClusterStatus::Resolved);
                }
            }
        }
        self.log.push(action);
        Ok(())
    }
}
