//! Post-correction accuracy on a fixed evaluation subset as the surrounding
//! collection grows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{execute, CorrectionMode, Method, PipelineConfig, PipelineError, Stage};
use crate::clustering::ClusterConfig;
use crate::correction::accuracy;
use crate::costing::{naive_selection_cost, naive_typing_cost, CostModel};
use crate::lexicon::{categorize, detect, Dictionary, DictionaryMode, SuggestParams};
use crate::synthgen::{Generator, GeneratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Filler word counts added around the evaluation subset; strictly ascending.
    pub sizes: Vec<usize>,
    pub eval_size: usize,
    pub generator: GeneratorConfig,
    /// Repetition `r` uses generator seed `generator.seed + r`.
    pub repetitions: usize,
    pub method: Method,
    pub cluster: ClusterConfig,
    pub costs: CostModel,
    pub suggest: SuggestParams,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 5000, 10_000, 25_000, 50_000],
            eval_size: 2000,
            generator: GeneratorConfig {
                vocabulary_size: 2000,
                embedding_dim: 16,
                consistent_error_fraction: 0.8,
                ..GeneratorConfig::default()
            },
            repetitions: 3,
            method: Method::KmeansMst,
            cluster: ClusterConfig::default(),
            costs: CostModel::default(),
            suggest: SuggestParams::default(),
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sizes.is_empty() {
            return Err("at least one collection size is required".into());
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err("collection sizes must be strictly ascending".into());
        }
        if self.eval_size == 0 {
            return Err("evaluation subset must be non-empty".into());
        }
        if self.repetitions == 0 {
            return Err("at least one repetition is required".into());
        }
        self.generator.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// Filler words around the evaluation subset.
    pub size: usize,
    pub repetition: usize,
    pub seed: u64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub naive_typing_seconds: f64,
    pub naive_selection_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    /// Ordered by repetition, then size.
    pub points: Vec<ScalingPoint>,
    /// Rank correlation between size and accuracy over all points; `None`
    /// when undefined (fewer than two sizes or constant accuracy).
    pub spearman: Option<f64>,
}

impl ScalingSeries {
    /// Mean post-correction accuracy per size, ascending by size.
    pub fn mean_accuracy(&self) -> Vec<(usize, f64)> {
        let mut sizes: Vec<usize> = self.points.iter().map(|p| p.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|s| {
                let accs: Vec<f64> = self.points.iter().filter(|p| p.size == s).map(|p| p.accuracy_after).collect();
                (s, accs.iter().sum::<f64>() / accs.len() as f64)
            })
            .collect()
    }

    /// Tab-separated, one line per point, with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "size\trepetition\tseed\taccuracy_before\taccuracy_after\tnaive_typing_seconds\tnaive_selection_seconds\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
                p.size,
                p.repetition,
                p.seed,
                p.accuracy_before,
                p.accuracy_after,
                p.naive_typing_seconds,
                p.naive_selection_seconds
            ));
        }
        out
    }
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

/// Runs the auto-mode pipeline once per (repetition, size).
///
/// Each repetition draws its evaluation subset once, then one filler stream
/// of the largest size from the same generator; size `s` uses the first `s`
/// filler words. Filler shares vocabulary, centroids and consistent
/// misreadings with the subset, so larger collections enlarge the clusters
/// that hold evaluation words.
pub fn scaling_experiment(config: &ScalingConfig) -> Result<ScalingSeries, PipelineError> {
    config.validate().map_err(|e| PipelineError::new(Stage::Load, e))?;
    let max = *config.sizes.last().expect("validated");
    let jobs: Vec<(usize, usize)> = (0..config.repetitions)
        .flat_map(|r| config.sizes.iter().map(move |&s| (r, s)))
        .collect();

    let worlds: Vec<_> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = config.generator.seed.wrapping_add(r as u64);
            let mut g = Generator::new(GeneratorConfig {
                seed,
                ..config.generator.clone()
            })
            .map_err(|e| PipelineError::new(Stage::Load, e))?;
            let eval = g.draw(config.eval_size, "e");
            let filler = g.draw(max, "f");
            let dict = Dictionary::from_words(g.dictionary_words(), DictionaryMode::Static);
            Ok((seed, eval, filler, dict))
        })
        .collect::<Result<_, PipelineError>>()?;

    let eval_positions: Vec<usize> = (0..config.eval_size).collect();
    let points = jobs
        .par_iter()
        .map(|&(r, size)| {
            let (seed, eval, filler, dict) = &worlds[r];
            let prefix: Vec<usize> = (0..size).collect();
            let corpus = eval
                .concat(&filler.subset(&prefix))
                .map_err(|e| PipelineError::new(Stage::Load, e))?;
            let pipeline = PipelineConfig {
                method: config.method,
                cluster: config.cluster.clone(),
                mode: CorrectionMode::Auto,
                costs: config.costs,
                seed: *seed,
                ..PipelineConfig::new("", vec![], "")
            };
            let out = execute(&corpus, dict, &pipeline)?;
            let acc = |labels: &crate::correction::CorrectionResult| accuracy(labels, &corpus, &eval_positions).map_err(|e| PipelineError::new(Stage::Cost, e));
            let before = acc(&crate::correction::CorrectionResult::untouched(&corpus))?;
            let after = acc(&out.result)?;

            let sub = corpus.subset(&eval_positions);
            let cats = categorize(&sub, &detect(&sub, dict));
            let typing = naive_typing_cost(&cats, &config.costs);
            let selection = naive_selection_cost(&cats, &sub, dict, &config.costs, config.suggest)
                .map_err(|e| PipelineError::new(Stage::Cost, e))?;
            log::info!("scaling rep {r} size {size}: accuracy {before:.4} -> {after:.4}");
            Ok(ScalingPoint {
                size,
                repetition: r,
                seed: *seed,
                accuracy_before: before,
                accuracy_after: after,
                naive_typing_seconds: typing,
                naive_selection_seconds: selection,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let xs: Vec<f64> = points.iter().map(|p| p.size as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy_after).collect();
    Ok(ScalingSeries {
        spearman: spearman(&xs, &ys),
        points,
    })
}
