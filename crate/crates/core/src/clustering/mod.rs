//! Grouping of word instances by image features and by prediction text.
//!
//! Every clusterer returns a [`Clustering`] in canonical form: members sorted
//! ascending inside each cluster and clusters ordered by their first member.
//! Canonical form makes equality of partitions a plain `==`.

pub mod distance;
mod kmeans;
mod lsh;
mod mst;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

pub use distance::{edit_distance, normalized_distance};
pub use kmeans::{kmeans, kmeans_traced, KmeansRun};
pub use lsh::{lsh_buckets, LshHasher};
pub use mst::{mst_cluster, mst_cluster_via_tree, refine_clusters};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("k = {k} out of range for {n} points")]
    KOutOfRange { k: usize, n: usize },
    #[error("corpus has no embedding matrix")]
    NoEmbeddings,
    #[error("index {0} is outside the embedding matrix")]
    IndexOutOfRange(usize),
    #[error("lsh needs at least one bit per band and one band (got r={r}, b={b})")]
    LshShape { r: usize, b: usize },
    #[error("lsh bits per band must be at most 64 (got {0})")]
    LshBandTooWide(usize),
    #[error("instance {0} has no ground truth")]
    MissingGroundTruth(usize),
    #[error("clustering is empty")]
    Empty,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown instance id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs for all clusterers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// `None` means the number of distinct predictions among clustered instances.
    pub k: Option<usize>,
    pub kmeans_max_iter: usize,
    pub kmeans_seed: u64,
    /// Cut threshold on normalized edit distance.
    pub mst_threshold: f64,
    /// Raw edit distance joining members of a sub-cluster.
    pub refine_threshold: usize,
    pub lsh_bits_per_band: usize,
    pub lsh_bands: usize,
    pub lsh_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: None,
            kmeans_max_iter: 25,
            kmeans_seed: 0,
            mst_threshold: 0.4,
            refine_threshold: 2,
            lsh_bits_per_band: 8,
            lsh_bands: 16,
            lsh_seed: 0,
        }
    }
}

/// A partition of instance positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
    pub method_tag: String,
    pub params: ClusterConfig,
}

impl Clustering {
    pub fn new(clusters: Vec<Vec<usize>>, method_tag: impl Into<String>, params: ClusterConfig) -> Self {
        Self {
            clusters: canonical(clusters),
            method_tag: method_tag.into(),
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn member_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Cluster position of every member.
    pub fn assignment(&self) -> HashMap<usize, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(c, ms)| ms.iter().map(move |&m| (m, c)))
            .collect()
    }

    /// Whether the clusters are disjoint, non-empty and cover `universe` exactly.
    pub fn is_partition_of(&self, universe: &[usize]) -> bool {
        let mut seen: Vec<usize> = self.clusters.iter().flatten().copied().collect();
        if self.clusters.iter().any(Vec::is_empty) {
            return false;
        }
        seen.sort_unstable();
        let mut expected = universe.to_vec();
        expected.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1]) && seen == expected
    }

    /// Whether every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Clustering) -> bool {
        let owner = coarser.assignment();
        self.clusters.iter().all(|c| {
            let first = owner.get(&c[0]);
            first.is_some() && c.iter().all(|m| owner.get(m) == first)
        })
    }

    pub fn write_jsonl<W: Write>(&self, corpus: &Corpus, mut out: W) -> std::io::Result<()> {
        for (cid, members) in self.clusters.iter().enumerate() {
            let rec = ClusterRecord {
                cluster_id: cid,
                members: members
                    .iter()
                    .map(|&m| corpus.instances()[m].id.clone())
                    .collect(),
                method_tag: self.method_tag.clone(),
                params: self.params.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(corpus: &Corpus, reader: R) -> Result<Clustering, ClusterError> {
        let pos: HashMap<&str, usize> = corpus
            .instances()
            .iter()
            .enumerate()
            .map(|(i, w)| (w.id.as_str(), i))
            .collect();
        let mut clusters = BTreeMap::new();
        let mut tag = None;
        let mut params = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClusterRecord =
                serde_json::from_str(&line).map_err(|e| ClusterError::Malformed {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
            let members = rec
                .members
                .iter()
                .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| ClusterError::UnknownId(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            if members.is_empty() {
                return Err(ClusterError::Malformed {
                    line: n + 1,
                    reason: "empty cluster".into(),
                });
            }
            clusters.insert(rec.cluster_id, members);
            tag.get_or_insert(rec.method_tag);
            params.get_or_insert(rec.params);
        }
        Ok(Clustering::new(
            clusters.into_values().collect(),
            tag.unwrap_or_default(),
            params.unwrap_or_default(),
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRecord {
    cluster_id: usize,
    members: Vec<String>,
    method_tag: String,
    params: ClusterConfig,
}

pub(crate) fn canonical(mut clusters: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    clusters.retain(|c| !c.is_empty());
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_unstable_by_key(|c| c[0]);
    clusters
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Groups `0..n` by root, mapping local positions through `labels`.
    pub fn groups(&mut self, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &label) in labels.iter().enumerate() {
            by_root.entry(self.find(i)).or_default().push(label);
        }
        by_root.into_values().collect()
    }
}

/// Fraction of clustered instances that carry their cluster's majority ground truth.
pub fn purity(clustering: &Clustering, corpus: &Corpus) -> Result<f64, ClusterError> {
    let total = clustering.member_count();
    if total == 0 {
        return Err(ClusterError::Empty);
    }
    let mut majority_sum = 0usize;
    for cluster in &clustering.clusters {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for &m in cluster {
            let gt = corpus.instances()[m]
                .ground_truth
                .as_deref()
                .ok_or(ClusterError::MissingGroundTruth(m))?;
            *counts.entry(gt).or_default() += 1;
        }
        majority_sum += counts.values().copied().max().unwrap_or(0);
    }
    Ok(majority_sum as f64 / total as f64)
}
