use std::collections::HashMap;

use rayon::prelude::*;

use super::distance::{bounded_levenshtein, normalized_chars};
use super::{Clustering, ClusterConfig, UnionFind};

/// Distinct strings of a group, with the local positions holding each.
struct Distinct {
    chars: Vec<Vec<char>>,
    holders: Vec<Vec<usize>>,
}

impl Distinct {
    /// Sorted by (length, text) so a length bound can end inner loops early.
    fn of<'a>(texts: impl Iterator<Item = &'a str>) -> Self {
        let mut seen: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, t) in texts.enumerate() {
            seen.entry(t).or_default().push(i);
        }
        let mut entries: Vec<(Vec<char>, Vec<usize>)> = seen
            .into_iter()
            .map(|(t, h)| (t.chars().collect(), h))
            .collect();
        entries.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        let (chars, holders) = entries.into_iter().unzip();
        Self { chars, holders }
    }

    /// Components of the graph where `limit(la, lb)` gives the largest raw
    /// distance that still joins strings of lengths `la <= lb`.
    fn components<F>(&self, limit: F) -> UnionFind
    where
        F: Fn(usize, usize) -> Option<usize> + Sync,
    {
        let n = self.chars.len();
        let edges: Vec<(usize, usize)> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let a = &self.chars[i];
                let mut out = Vec::new();
                for j in i + 1..n {
                    let b = &self.chars[j];
                    let Some(lim) = limit(a.len(), b.len()) else {
                        continue;
                    };
                    if b.len() - a.len() > lim {
                        // lengths only grow from here
                        break;
                    }
                    if bounded_levenshtein(a, b, lim).is_some() {
                        out.push((i, j));
                    }
                }
                out.into_iter()
            })
            .collect();
        let mut uf = UnionFind::new(n);
        for (a, b) in edges {
            uf.union(a, b);
        }
        uf
    }

    fn expand(&self, mut uf: UnionFind, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
        for (u, holders) in self.holders.iter().enumerate() {
            by_root
                .entry(uf.find(u))
                .or_default()
                .extend(holders.iter().map(|&h| labels[h]));
        }
        by_root.into_values().collect()
    }
}

/// Largest raw distance `d` with `d / max(la, lb) <= threshold`.
fn normalized_limit(threshold: f64) -> impl Fn(usize, usize) -> Option<usize> + Sync {
    move |la, lb| {
        let longest = la.max(lb);
        if longest == 0 {
            return Some(0);
        }
        let mut d = (threshold * longest as f64).floor().max(0.0) as usize;
        d = d.min(longest);
        while d < longest && ((d + 1) as f64 / longest as f64) <= threshold {
            d += 1;
        }
        while d > 0 && (d as f64 / longest as f64) > threshold {
            d -= 1;
        }
        Some(d)
    }
}

/// Single-linkage clustering of predictions: connected components of the graph
/// joining every pair whose normalized edit distance is at most `threshold`.
/// This is the forest left after cutting the over-threshold edges of a
/// minimum spanning tree.
pub fn mst_cluster(items: &[(usize, &str)], threshold: f64) -> Clustering {
    let labels: Vec<usize> = items.iter().map(|(i, _)| *i).collect();
    let distinct = Distinct::of(items.iter().map(|(_, s)| *s));
    let uf = distinct.components(normalized_limit(threshold));
    let clusters = distinct.expand(uf, &labels);
    Clustering::new(
        clusters,
        "mst",
        ClusterConfig {
            mst_threshold: threshold,
            ..ClusterConfig::default()
        },
    )
}

/// Literal route: Prim's tree over all distinct strings, then drop edges
/// heavier than `threshold`. Quadratic in memory; meant for cross-checks.
pub fn mst_cluster_via_tree(items: &[(usize, &str)], threshold: f64) -> Clustering {
    let labels: Vec<usize> = items.iter().map(|(i, _)| *i).collect();
    let distinct = Distinct::of(items.iter().map(|(_, s)| *s));
    let n = distinct.chars.len();
    let mut uf = UnionFind::new(n);
    if n > 0 {
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        best[0] = 0.0;
        for _ in 0..n {
            let u = (0..n)
                .filter(|&v| !in_tree[v])
                .min_by(|&a, &b| best[a].total_cmp(&best[b]))
                .expect("vertex left");
            in_tree[u] = true;
            if parent[u] != usize::MAX && best[u] <= threshold {
                uf.union(u, parent[u]);
            }
            for v in 0..n {
                if !in_tree[v] {
                    let w = normalized_chars(&distinct.chars[u], &distinct.chars[v]);
                    if w < best[v] {
                        best[v] = w;
                        parent[v] = u;
                    }
                }
            }
        }
    }
    let clusters = distinct.expand(uf, &labels);
    Clustering::new(
        clusters,
        "mst",
        ClusterConfig {
            mst_threshold: threshold,
            ..ClusterConfig::default()
        },
    )
}

/// Splits every base cluster into components joined by raw edit distance
/// `<= refine_threshold` between member predictions. Never merges across
/// base clusters.
pub fn refine_clusters(base: &Clustering, predictions: &[String], refine_threshold: usize) -> Clustering {
    let clusters: Vec<Vec<usize>> = base
        .clusters
        .par_iter()
        .flat_map_iter(|members| {
            if members.len() == 1 {
                return vec![members.clone()].into_iter();
            }
            let distinct = Distinct::of(members.iter().map(|&m| predictions[m].as_str()));
            let uf = distinct.components(|_, _| Some(refine_threshold));
            distinct.expand(uf, members).into_iter()
        })
        .collect();
    Clustering::new(
        clusters,
        format!("{}+mst", base.method_tag),
        ClusterConfig {
            refine_threshold,
            ..base.params.clone()
        },
    )
}
