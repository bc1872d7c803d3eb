use std::collections::HashMap;

use super::{
    clusters_with_errors, modal, prediction_counts, Action, CorrectionConfig, CorrectionError,
    CorrectionResult, Scope, Source,
};
use crate::clustering::Clustering;
use crate::corpus::Corpus;
use crate::lexicon::{detect, Dictionary, DictionaryMode};

/// Simulates a human editor who knows the ground truth.
///
/// Clusters with at least one flagged member are handled largest first (ties
/// by cluster position). Each gets one cluster-scope action for its majority
/// truth: verify when the modal prediction already is that word, select when
/// the word is among the suggestions for the modal prediction, otherwise type
/// it. Members whose truth differs are then fixed one by one. Typed words join
/// a growing dictionary immediately.
pub fn oracle_correct(
    clustering: &Clustering,
    corpus: &Corpus,
    dict: &mut Dictionary,
    config: &CorrectionConfig,
) -> Result<CorrectionResult, CorrectionError> {
    let flags = detect(corpus, dict);
    let global = prediction_counts(corpus);
    let mut result = CorrectionResult::untouched(corpus);
    let mut order = clusters_with_errors(clustering, &flags.0);
    order.sort_by(|&a, &b| {
        clustering.clusters[b]
            .len()
            .cmp(&clustering.clusters[a].len())
            .then(a.cmp(&b))
    });

    for &c in &order {
        let members = &clustering.clusters[c];
        let mut truths = Vec::with_capacity(members.len());
        for &m in members {
            let w = &corpus.instances()[m];
            truths.push(
                w.ground_truth
                    .as_deref()
                    .ok_or_else(|| CorrectionError::MissingGroundTruth(w.id.clone()))?,
            );
        }
        let majority = majority_truth(&truths, dict).to_owned();
        let rep = modal(
            members.iter().map(|&m| corpus.instances()[m].prediction.as_str()),
            dict,
            &global,
        )
        .expect("clusters are non-empty")
        .to_owned();

        let cluster_action = if rep == majority {
            Action::verify(Scope::Cluster(c), rep.as_str())
        } else if let Some(rank) = dict.suggestion_rank(&rep, &majority, config.suggest) {
            Action::select(Scope::Cluster(c), majority.as_str(), rank)
        } else {
            if dict.mode() == DictionaryMode::Growing {
                dict.add_word(&majority)?;
            }
            Action::type_in(Scope::Cluster(c), majority.as_str())
        };
        let cluster_source = Source::from_kind(cluster_action.kind);
        result.log.push(cluster_action);

        for (&m, &gt) in members.iter().zip(&truths) {
            let w = &corpus.instances()[m];
            let scope = Scope::Member(w.id.clone());
            if config.inspect_members {
                result.log.push(Action::verify(scope.clone(), majority.as_str()));
            }
            if gt == majority {
                result.labels[m] = majority.clone();
                result.sources[m] = cluster_source;
                continue;
            }
            let action = match dict.suggestion_rank(&w.prediction, gt, config.suggest) {
                Some(rank) => Action::select(scope, gt, rank),
                None => {
                    if dict.mode() == DictionaryMode::Growing {
                        dict.add_word(gt)?;
                    }
                    Action::type_in(scope, gt)
                }
            };
            result.labels[m] = gt.to_owned();
            result.sources[m] = Source::from_kind(action.kind);
            result.log.push(action);
        }
    }
    result.processed_clusters = order;
    Ok(result)
}

/// Most common truth; ties prefer dictionary words, then the smaller string.
fn majority_truth<'a>(truths: &[&'a str], dict: &Dictionary) -> &'a str {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in truths {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|&(a, ca), &(b, cb)| {
            ca.cmp(&cb)
                .then_with(|| dict.contains(a).cmp(&dict.contains(b)))
                .then_with(|| b.cmp(a))
        })
        .map(|(t, _)| t)
        .expect("clusters are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterConfig;
    use crate::correction::ActionKind;
    use crate::corpus::WordInstance;

    fn corpus(pairs: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, (p, g))| WordInstance {
                    id: format!("w{i}"),
                    book_id: "b".into(),
                    page_id: 0,
                    prediction: (*p).into(),
                    ground_truth: Some((*g).into()),
                    image_ref: None,
                    embedding_row: i,
                })
                .collect(),
        )
        .unwrap()
    }

    fn kinds(r: &CorrectionResult) -> Vec<ActionKind> {
        r.log.actions().iter().map(|a| a.kind).collect()
    }

    #[test]
    fn one_typing_covers_pure_cluster() {
        let c = corpus(&[("कमत", "कमल"); 5]);
        let mut dict = Dictionary::from_words(["घर"], DictionaryMode::Static);
        let cl = Clustering::new(vec![(0..5).collect()], "t", ClusterConfig::default());
        let r = oracle_correct(&cl, &c, &mut dict, &CorrectionConfig::default()).unwrap();
        assert_eq!(kinds(&r), vec![ActionKind::Type]);
        assert_eq!(r.log.v_t, 1);
        assert!(r.labels.iter().all(|l| l == "कमल"));
        assert!(r.sources.iter().all(|&s| s == Source::HumanTyped));
    }

    #[test]
    fn growing_turns_second_typing_into_selection() {
        let c = corpus(&[
            ("कमत", "कमल"),
            ("कमत", "कमल"),
            ("कमत", "कमल"),
            ("कपल", "कमल"),
            ("कपल", "कमल"),
        ]);
        let cl = Clustering::new(vec![vec![0, 1, 2], vec![3, 4]], "t", ClusterConfig::default());
        let mut growing = Dictionary::from_words(["घर"], DictionaryMode::Growing);
        let r = oracle_correct(&cl, &c, &mut growing, &CorrectionConfig::default()).unwrap();
        assert_eq!(kinds(&r), vec![ActionKind::Type, ActionKind::Select]);
        assert!(growing.contains("कमल"));

        let mut fixed = Dictionary::from_words(["घर"], DictionaryMode::Static);
        let r = oracle_correct(&cl, &c, &mut fixed, &CorrectionConfig::default()).unwrap();
        assert_eq!(kinds(&r), vec![ActionKind::Type, ActionKind::Type]);
    }

    #[test]
    fn impure_cluster_gets_member_fix() {
        let c = corpus(&[("a", "a"), ("a", "a"), ("a", "b")]);
        let mut dict = Dictionary::from_words(["zzzz"], DictionaryMode::Static);
        let cl = Clustering::new(vec![vec![0, 1, 2]], "t", ClusterConfig::default());
        let r = oracle_correct(&cl, &c, &mut dict, &CorrectionConfig::default()).unwrap();
        assert_eq!(r.log.len(), 2);
        assert_eq!(kinds(&r), vec![ActionKind::Verify, ActionKind::Type]);
        assert_eq!(r.labels, vec!["a", "a", "b"]);
        assert_eq!(r.log.actions()[1].scope, Scope::Member("w2".into()));
    }

    #[test]
    fn inspection_policy_charges_members() {
        let c = corpus(&[("a", "a"), ("a", "a"), ("a", "b")]);
        let mut dict = Dictionary::new(DictionaryMode::Static);
        let cl = Clustering::new(vec![vec![0, 1, 2]], "t", ClusterConfig::default());
        let cfg = CorrectionConfig {
            inspect_members: true,
            ..CorrectionConfig::default()
        };
        let r = oracle_correct(&cl, &c, &mut dict, &cfg).unwrap();
        assert_eq!((r.log.v_v, r.log.v_t), (4, 1));
    }

    #[test]
    fn larger_clusters_first() {
        let c = corpus(&[("x1", "x"), ("y1", "y"), ("y1", "y")]);
        let mut dict = Dictionary::new(DictionaryMode::Static);
        let cl = Clustering::new(vec![vec![0], vec![1, 2]], "t", ClusterConfig::default());
        let r = oracle_correct(&cl, &c, &mut dict, &CorrectionConfig::default()).unwrap();
        assert_eq!(r.processed_clusters, vec![1, 0]);
        assert_eq!(r.log.actions()[0].scope, Scope::Cluster(1));
    }
}
