use super::{
    clusters_with_errors, modal, prediction_counts, Action, ActionLog, CorrectionConfig, CorrectionError,
    CorrectionResult, Scope, Source,
};
use crate::clustering::Clustering;
use crate::corpus::Corpus;
use crate::lexicon::{detect, Dictionary, DictionaryMode};

/// Propagates each error-bearing cluster's most frequent prediction to all of
/// its members. Clusters without a flagged member are left alone.
pub fn auto_correct(clustering: &Clustering, corpus: &Corpus, dict: &Dictionary) -> CorrectionResult {
    let flags = detect(corpus, dict);
    let global = prediction_counts(corpus);
    let mut result = CorrectionResult::untouched(corpus);
    let processed = clusters_with_errors(clustering, &flags.0);
    for &c in &processed {
        let members = &clustering.clusters[c];
        let rep = modal(
            members.iter().map(|&m| corpus.instances()[m].prediction.as_str()),
            dict,
            &global,
        )
        .expect("clusters are non-empty")
        .to_owned();
        for &m in members {
            result.labels[m] = rep.clone();
            result.sources[m] = Source::Propagated;
        }
    }
    result.processed_clusters = processed;
    result
}

/// The editor's follow-up to automatic propagation: every propagated label is
/// verified against the image, and wrong ones are fixed by selecting the truth
/// from the suggestions for the original prediction, or by typing it.
pub fn verification_pass(
    result: &CorrectionResult,
    corpus: &Corpus,
    dict: &mut Dictionary,
    config: &CorrectionConfig,
) -> Result<ActionLog, CorrectionError> {
    let mut log = ActionLog::default();
    for (i, inst) in corpus.instances().iter().enumerate() {
        if result.sources[i] != Source::Propagated {
            continue;
        }
        let gt = inst
            .ground_truth
            .as_deref()
            .ok_or_else(|| CorrectionError::MissingGroundTruth(inst.id.clone()))?;
        let scope = Scope::Member(inst.id.clone());
        log.push(Action::verify(scope.clone(), result.labels[i].clone()));
        if result.labels[i] == gt {
            continue;
        }
        match dict.suggestion_rank(&inst.prediction, gt, config.suggest) {
            Some(rank) => log.push(Action::select(scope, gt, rank)),
            None => {
                if dict.mode() == DictionaryMode::Growing {
                    dict.add_word(gt)?;
                }
                log.push(Action::type_in(scope, gt));
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterConfig;
    use crate::corpus::WordInstance;
    use crate::lexicon::DictionaryMode;

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

    fn one_cluster(n: usize) -> Clustering {
        Clustering::new(vec![(0..n).collect()], "t", ClusterConfig::default())
    }

    #[test]
    fn majority_right_fixes_cluster() {
        let c = corpus(&[("the", "the"), ("the", "the"), ("thc", "the")]);
        let dict = Dictionary::from_words(["the"], DictionaryMode::Static);
        let r = auto_correct(&one_cluster(3), &c, &dict);
        assert_eq!(r.labels, vec!["the"; 3]);
        assert!(r.sources.iter().all(|&s| s == Source::Propagated));
    }

    #[test]
    fn majority_wrong_propagates_error() {
        let c = corpus(&[("thc", "the"), ("thc", "the"), ("the", "the")]);
        let dict = Dictionary::from_words(["the"], DictionaryMode::Static);
        let r = auto_correct(&one_cluster(3), &c, &dict);
        assert_eq!(r.labels, vec!["thc"; 3]);
    }

    #[test]
    fn singleton_and_clean_clusters() {
        let c = corpus(&[("xyz", "xyz"), ("the", "the")]);
        let dict = Dictionary::from_words(["the"], DictionaryMode::Static);
        let cl = Clustering::new(vec![vec![0], vec![1]], "t", ClusterConfig::default());
        let r = auto_correct(&cl, &c, &dict);
        assert_eq!(r.labels, vec!["xyz", "the"]);
        assert_eq!(r.sources, vec![Source::Propagated, Source::Untouched]);
        assert_eq!(r.processed_clusters, vec![0]);
    }

    #[test]
    fn idempotent_on_own_output() {
        let c = corpus(&[("thc", "the"), ("the", "the"), ("the", "the"), ("cat", "cat"), ("cot", "cat")]);
        let dict = Dictionary::from_words(["the", "cat"], DictionaryMode::Static);
        let cl = Clustering::new(vec![vec![0, 1, 2], vec![3, 4]], "t", ClusterConfig::default());
        let r = auto_correct(&cl, &c, &dict);
        assert_eq!(r, auto_correct(&cl, &c, &dict));
        let again = auto_correct(&cl, &c.with_predictions(&r.labels), &dict);
        assert_eq!(again.labels, r.labels);
    }

    #[test]
    fn verification_counts() {
        let dict_words = ["the", "them"];
        let c = corpus(&[("the", "the"), ("the", "the"), ("thc", "the")]);
        let mut dict = Dictionary::from_words(dict_words, DictionaryMode::Static);
        let r = auto_correct(&one_cluster(3), &c, &dict);
        let log = verification_pass(&r, &c, &mut dict, &CorrectionConfig::default()).unwrap();
        assert_eq!((log.v_v, log.v_d, log.v_t), (3, 0, 0));

        // propagated "thc" is wrong for one member whose truth is suggestible
        let c = corpus(&[("thc", "thc"), ("thc", "thc"), ("the", "them")]);
        let r = auto_correct(&one_cluster(3), &c, &dict);
        assert_eq!(r.labels, vec!["thc"; 3]);
        let log = verification_pass(&r, &c, &mut dict, &CorrectionConfig::default()).unwrap();
        assert_eq!((log.v_v, log.v_d, log.v_t), (3, 1, 0));

        let empty = CorrectionResult::untouched(&c);
        assert!(verification_pass(&empty, &c, &mut dict, &CorrectionConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn verification_needs_ground_truth() {
        let mut inst = corpus(&[("thc", "the")]).instances().to_vec();
        inst[0].ground_truth = None;
        let c = Corpus::new(inst).unwrap();
        let mut dict = Dictionary::from_words(["the"], DictionaryMode::Static);
        let r = auto_correct(&one_cluster(1), &c, &dict);
        assert!(matches!(
            verification_pass(&r, &c, &mut dict, &CorrectionConfig::default()),
            Err(CorrectionError::MissingGroundTruth(_))
        ));
    }
}
