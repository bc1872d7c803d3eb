//! End-to-end runs: detect, cluster, correct, cost, and write artifacts.

mod scaling;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, lsh_buckets, mst_cluster, refine_clusters, ClusterConfig, ClusterError, Clustering};
use crate::correction::{
    accuracy, auto_correct, oracle_correct, verification_pass, CorrectionConfig, CorrectionResult,
};
use crate::corpus::{load_corpus, load_embeddings, Corpus};
use crate::costing::{naive_selection_cost, naive_typing_cost, report, CostModel, CostReport};
use crate::lexicon::{build_dictionary, categorize, detect, Categories, DetectionFlags, Dictionary, DictionaryMode};

pub use scaling::{scaling_experiment, spearman, ScalingConfig, ScalingPoint, ScalingSeries};

/// Words per page assumed when relating word counts to page counts.
pub const WORDS_PER_PAGE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "kmeans")]
    Kmeans,
    #[serde(rename = "mst")]
    Mst,
    #[serde(rename = "lsh")]
    Lsh,
    #[serde(rename = "kmeans+mst")]
    KmeansMst,
    #[serde(rename = "lsh+mst")]
    LshMst,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Kmeans, Method::Mst, Method::Lsh, Method::KmeansMst, Method::LshMst];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Mst => "mst",
            Method::Lsh => "lsh",
            Method::KmeansMst => "kmeans+mst",
            Method::LshMst => "lsh+mst",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        !matches!(self, Method::Mst)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected kmeans, mst, lsh, kmeans+mst or lsh+mst)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    Auto,
    Oracle,
}

impl fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionMode::Auto => "auto",
            CorrectionMode::Oracle => "oracle",
        })
    }
}

impl FromStr for CorrectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(CorrectionMode::Auto),
            "oracle" => Ok(CorrectionMode::Oracle),
            other => Err(format!("unknown correction mode {other:?} (expected auto or oracle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// Embedding file; defaults to the corpus sidecar.
    pub embeddings: Option<PathBuf>,
    pub dictionaries: Vec<PathBuf>,
    pub method: Method,
    pub cluster: ClusterConfig,
    pub mode: CorrectionMode,
    pub dictionary_mode: DictionaryMode,
    pub correction: CorrectionConfig,
    pub costs: CostModel,
    #[serde(skip)]
    pub output_dir: PathBuf,
    /// Seeds k-means and LSH; overrides the seeds in `cluster`.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(corpus: impl Into<PathBuf>, dictionaries: Vec<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            embeddings: None,
            dictionaries,
            method: Method::KmeansMst,
            cluster: ClusterConfig::default(),
            mode: CorrectionMode::Oracle,
            dictionary_mode: DictionaryMode::Static,
            correction: CorrectionConfig::default(),
            costs: CostModel::default(),
            output_dir: output_dir.into(),
            seed: 0,
        }
    }

    /// The clustering knobs actually used, with the global seed applied.
    pub fn effective_cluster(&self) -> ClusterConfig {
        ClusterConfig {
            kmeans_seed: self.seed,
            lsh_seed: self.seed,
            ..self.cluster.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Detect,
    Cluster,
    Correct,
    Cost,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Detect => "detect",
            Stage::Cluster => "cluster",
            Stage::Correct => "correct",
            Stage::Cost => "cost",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}

fn at<E: Into<Box<dyn std::error::Error + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// Clusters every instance of the corpus with `method`.
pub fn cluster_corpus(corpus: &Corpus, method: Method, cfg: &ClusterConfig) -> Result<Clustering, ClusterError> {
    if corpus.is_empty() {
        return Err(ClusterError::Empty);
    }
    let all: Vec<usize> = (0..corpus.len()).collect();
    let base = match method {
        Method::Mst => {
            let items: Vec<(usize, &str)> = corpus
                .instances()
                .iter()
                .enumerate()
                .map(|(i, w)| (i, w.prediction.as_str()))
                .collect();
            let mut c = mst_cluster(&items, cfg.mst_threshold);
            c.params = cfg.clone();
            return Ok(c);
        }
        Method::Kmeans | Method::KmeansMst => {
            let matrix = corpus.embeddings().ok_or(ClusterError::NoEmbeddings)?;
            let k = cfg.k.unwrap_or_else(|| {
                let distinct: HashSet<&str> = corpus.instances().iter().map(|w| w.prediction.as_str()).collect();
                distinct.len()
            });
            kmeans(matrix, &all, k, cfg.kmeans_seed, cfg.kmeans_max_iter)?
        }
        Method::Lsh | Method::LshMst => {
            let matrix = corpus.embeddings().ok_or(ClusterError::NoEmbeddings)?;
            lsh_buckets(matrix, &all, cfg.lsh_bits_per_band, cfg.lsh_bands, cfg.lsh_seed)?
        }
    };
    let mut out = if matches!(method, Method::KmeansMst | Method::LshMst) {
        let predictions: Vec<String> = corpus.instances().iter().map(|w| w.prediction.clone()).collect();
        refine_clusters(&base, &predictions, cfg.refine_threshold)
    } else {
        base
    };
    out.params = cfg.clone();
    Ok(out)
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub flags: DetectionFlags,
    pub categories: Categories,
    pub clustering: Clustering,
    pub result: CorrectionResult,
    pub report: CostReport,
    /// Present when every instance is annotated.
    pub naive_selection_seconds: Option<f64>,
    pub accuracy_before: Option<f64>,
    pub accuracy_after: Option<f64>,
}

/// Runs detect, cluster, correct and cost on an in-memory corpus.
///
/// In auto mode the labels are the propagated ones and the action log is the
/// editor's verification pass over them (empty for unannotated corpora).
pub fn execute(corpus: &Corpus, dictionary: &Dictionary, config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let mut dict = dictionary.with_mode(config.dictionary_mode);
    let flags = detect(corpus, &dict);
    let categories = categorize(corpus, &flags);
    let annotated = corpus.is_fully_annotated();

    let cluster_cfg = config.effective_cluster();
    let clustering = cluster_corpus(corpus, config.method, &cluster_cfg).map_err(at(Stage::Cluster))?;
    log::info!(
        "{}: {} clusters over {} instances, {} flagged",
        clustering.method_tag,
        clustering.len(),
        corpus.len(),
        flags.count()
    );

    let result = match config.mode {
        CorrectionMode::Auto => {
            let mut r = auto_correct(&clustering, corpus, &dict);
            if annotated {
                r.log = verification_pass(&r, corpus, &mut dict, &config.correction).map_err(at(Stage::Correct))?;
            }
            r
        }
        CorrectionMode::Oracle => {
            oracle_correct(&clustering, corpus, &mut dict, &config.correction).map_err(at(Stage::Correct))?
        }
    };

    let baseline = naive_typing_cost(&categories, &config.costs);
    let tag = format!("{}/{}/{}", clustering.method_tag, config.mode, config.dictionary_mode);
    let cost = report(tag, &result.log, &config.costs, baseline);
    let (naive_selection_seconds, accuracy_before, accuracy_after) = if annotated && !corpus.is_empty() {
        let base_dict = dictionary.with_mode(config.dictionary_mode);
        let sel = naive_selection_cost(&categories, corpus, &base_dict, &config.costs, config.correction.suggest)
            .map_err(at(Stage::Cost))?;
        let all: Vec<usize> = (0..corpus.len()).collect();
        let before = accuracy(&CorrectionResult::untouched(corpus), corpus, &all).map_err(at(Stage::Cost))?;
        let after = accuracy(&result, corpus, &all).map_err(at(Stage::Cost))?;
        (Some(sel), Some(before), Some(after))
    } else {
        (None, None, None)
    };

    Ok(PipelineOutput {
        flags,
        categories,
        clustering,
        result,
        report: cost,
        naive_selection_seconds,
        accuracy_before,
        accuracy_after,
    })
}

/// Loads the inputs named by `config`, runs [`execute`] and writes the
/// artifacts into `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let mut corpus = load_corpus(&config.corpus).map_err(at(Stage::Load))?;
    if let Some(path) = &config.embeddings {
        let m = load_embeddings(path, corpus.len()).map_err(at(Stage::Load))?;
        corpus = corpus.with_embeddings(m).map_err(at(Stage::Load))?;
    }
    if config.method.needs_embeddings() && corpus.embeddings().is_none() {
        return Err(PipelineError::new(
            Stage::Load,
            format!("method {} needs an embedding matrix", config.method),
        ));
    }
    let dict = build_dictionary(&config.dictionaries, config.dictionary_mode).map_err(at(Stage::Load))?;
    let out = execute(&corpus, &dict, config)?;
    write_artifacts(&config.output_dir, &corpus, &out, config).map_err(at(Stage::Write))?;
    Ok(out)
}

pub const CLUSTERING_FILE: &str = "clustering.jsonl";
pub const CORRECTED_FILE: &str = "corrected.jsonl";
pub const ACTIONS_FILE: &str = "actions.jsonl";
pub const REPORT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    effective_cluster: ClusterConfig,
    corpus_metadata: &'a std::collections::BTreeMap<String, String>,
    instances: usize,
    words_per_page: usize,
    artifacts: [&'static str; 4],
}

fn create(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn write_artifacts(dir: &Path, corpus: &Corpus, out: &PipelineOutput, config: &PipelineConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    out.clustering.write_jsonl(corpus, create(dir, CLUSTERING_FILE)?)?;
    out.result.write_corpus(corpus, create(dir, CORRECTED_FILE)?)?;
    out.result.log.write_jsonl(create(dir, ACTIONS_FILE)?)?;

    let mut report = create(dir, REPORT_FILE)?;
    report.write_all(out.report.to_kv().as_bytes())?;
    let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.6}"));
    writeln!(report, "naive_selection_seconds={}", opt(out.naive_selection_seconds))?;
    writeln!(report, "clusters={}", out.clustering.len())?;
    writeln!(report, "processed_clusters={}", out.result.processed_clusters.len())?;
    writeln!(report, "flagged={}", out.flags.count())?;
    writeln!(
        report,
        "efp={} etp={} rfn={} tn={} unlabeled={}",
        out.categories.efp.len(),
        out.categories.etp.len(),
        out.categories.rfn.len(),
        out.categories.tn.len(),
        out.categories.unlabeled.len()
    )
    .map(|_| ())?;
    writeln!(report, "accuracy_before={}", opt(out.accuracy_before))?;
    writeln!(report, "accuracy_after={}", opt(out.accuracy_after))?;
    report.flush()?;

    let manifest = Manifest {
        tool: "batchfix",
        version: env!("CARGO_PKG_VERSION"),
        config,
        effective_cluster: config.effective_cluster(),
        corpus_metadata: &corpus.metadata,
        instances: corpus.len(),
        words_per_page: WORDS_PER_PAGE,
        artifacts: [CLUSTERING_FILE, CORRECTED_FILE, ACTIONS_FILE, REPORT_FILE],
    };
    let mut m = create(dir, MANIFEST_FILE)?;
    serde_json::to_writer_pretty(&mut m, &manifest)?;
    m.write_all(b"\n")?;
    m.flush()
}

/// Reads a pipeline config back from a manifest written by [`run_pipeline`].
pub fn config_from_manifest(path: &Path, output_dir: impl Into<PathBuf>) -> Result<PipelineConfig, PipelineError> {
    #[derive(Deserialize)]
    struct Stored {
        config: PipelineConfig,
    }
    let text = std::fs::read_to_string(path).map_err(at(Stage::Load))?;
    let stored: Stored = serde_json::from_str(&text).map_err(at(Stage::Load))?;
    Ok(PipelineConfig {
        output_dir: output_dir.into(),
        ..stored.config
    })
}
