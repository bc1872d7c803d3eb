//! Command-line commands.

use std::error::Error;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use batchfix::corpus::{load_corpus, load_embeddings, write_corpus};
use batchfix::costing::{naive_selection_cost, naive_typing_cost, render_table};
use batchfix::lexicon::{build_dictionary, categorize, detect, write_word_list};
use batchfix::pipeline::{
    cluster_corpus, config_from_manifest, execute, ScalingSeries, Stage, CLUSTERING_FILE, MANIFEST_FILE, REPORT_FILE,
};
use batchfix::synthgen::{generate_corpus, GeneratorConfig};
use batchfix::{
    run_pipeline, scaling_experiment, Category, ClusterConfig, Corpus, CorrectionConfig, CorrectionMode, CostModel,
    CostReport, Dictionary, DictionaryMode, Method, PipelineConfig, PipelineError, ScalingConfig, SuggestParams,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::review::{Review, ReviewConfig};
use crate::server::{serve, AppState};

pub const GEN_CORPUS: &str = "corpus.jsonl";
pub const GEN_DICTIONARY: &str = "dictionary.txt";
pub const DETECT_FILE: &str = "detection.jsonl";
pub const COST_TABLE_FILE: &str = "cost_table.txt";
pub const SIMULATE_FILE: &str = "simulate.tsv";
pub const SERIES_JSON: &str = "series.json";
pub const SERIES_TSV: &str = "series.tsv";
pub const SCALING_PLOT_FILE: &str = "scaling.tsv";

#[derive(Debug, Parser)]
#[command(name = "batchfix", version, about = "Batch correction of OCR word errors")]
pub struct Cli {
    /// Seed for the generator (gen, scale) or for clustering (cluster, correct, simulate).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Action costs in seconds as c_v,c_d,c_t.
    #[arg(long, global = true, value_name = "C_V,C_D,C_T")]
    pub costs: Option<String>,
    /// Accept costs that are not ordered c_v <= c_d <= c_t.
    #[arg(long, global = true)]
    pub allow_unordered_costs: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus, embeddings and dictionary.
    Gen(GenArgs),
    /// Flag out-of-dictionary predictions and count error categories.
    Detect(DetectArgs),
    /// Cluster every instance of a corpus.
    Cluster(ClusterArgs),
    /// Run the full pipeline and write its artifacts.
    Correct(CorrectArgs),
    /// Cost table over methods, correction modes and dictionary modes.
    Simulate(SimulateArgs),
    /// Accuracy on a fixed subset as the collection grows.
    Scale(ScaleArgs),
    /// Serve a review session over HTTP.
    Serve(ServeArgs),
    /// Tabulate pipeline reports and scaling series.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Generator settings file with one `key = value` per line.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub vocabulary_size: Option<usize>,
    #[arg(long)]
    pub total_words: Option<usize>,
    #[arg(long)]
    pub target_word_accuracy: Option<f64>,
    /// latin or devanagari.
    #[arg(long)]
    pub script: Option<String>,
    /// Any generator setting, e.g. `--set embedding_dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct DictArgs {
    /// Word lists: one word per line, optional tab-separated count.
    #[arg(long, alias = "dictionary", num_args = 1.., required = true)]
    pub dictionaries: Vec<PathBuf>,
    #[arg(long, default_value = "static")]
    pub dictionary_mode: DictionaryMode,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub dict: DictArgs,
    /// Writes per-instance flags and categories here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ClusterOpts {
    /// k-means cluster count; defaults to the number of distinct predictions.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub kmeans_max_iter: Option<usize>,
    /// Cut threshold on normalized edit distance.
    #[arg(long)]
    pub mst_threshold: Option<f64>,
    /// Edit distance joining members during refinement.
    #[arg(long)]
    pub refine_threshold: Option<usize>,
    #[arg(long)]
    pub lsh_bits_per_band: Option<usize>,
    #[arg(long)]
    pub lsh_bands: Option<usize>,
}

impl ClusterOpts {
    fn to_config(&self) -> ClusterConfig {
        let mut c = ClusterConfig::default();
        if self.k.is_some() {
            c.k = self.k;
        }
        if let Some(v) = self.kmeans_max_iter {
            c.kmeans_max_iter = v;
        }
        if let Some(v) = self.mst_threshold {
            c.mst_threshold = v;
        }
        if let Some(v) = self.refine_threshold {
            c.refine_threshold = v;
        }
        if let Some(v) = self.lsh_bits_per_band {
            c.lsh_bits_per_band = v;
        }
        if let Some(v) = self.lsh_bands {
            c.lsh_bands = v;
        }
        c
    }
}

#[derive(Debug, Args, Clone)]
pub struct CorrectionOpts {
    /// Suggestion edit-distance radius.
    #[arg(long, default_value_t = 2)]
    pub max_distance: usize,
    /// Suggestions offered per query.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Charge a verification per member on top of each cluster action.
    #[arg(long)]
    pub inspect_members: bool,
}

impl CorrectionOpts {
    fn to_config(&self) -> CorrectionConfig {
        CorrectionConfig {
            suggest: SuggestParams {
                max_distance: self.max_distance,
                top_k: self.top_k,
            },
            inspect_members: self.inspect_members,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Embedding matrix; defaults to the corpus sidecar.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "kmeans+mst")]
    pub method: Method,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long, required_unless_present = "from_manifest")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, alias = "dictionary", num_args = 1.., required_unless_present = "from_manifest")]
    pub dictionaries: Vec<PathBuf>,
    #[arg(long, default_value = "static")]
    pub dictionary_mode: DictionaryMode,
    #[arg(long, default_value = "kmeans+mst")]
    pub method: Method,
    /// auto (propagate the modal prediction) or oracle (simulated editor).
    #[arg(long, default_value = "oracle")]
    pub mode: CorrectionMode,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    #[command(flatten)]
    pub correction: CorrectionOpts,
    /// Rerun the configuration recorded in a pipeline manifest; other
    /// pipeline flags are ignored.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, alias = "dictionary", num_args = 1.., required = true)]
    pub dictionaries: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "kmeans,mst,lsh,kmeans+mst,lsh+mst")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "auto,oracle")]
    pub modes: Vec<CorrectionMode>,
    #[arg(long, value_delimiter = ',', default_value = "static,growing")]
    pub dictionary_modes: Vec<DictionaryMode>,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    #[command(flatten)]
    pub correction: CorrectionOpts,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Filler word counts, strictly ascending.
    #[arg(long, value_delimiter = ',', default_value = "1000,5000,10000,25000,50000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    pub eval_size: usize,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value = "kmeans+mst")]
    pub method: Method,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    /// Generator setting, e.g. `--set vocabulary_size=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Output directory of a pipeline run.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Session log directory; defaults to `<run-dir>/review`.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    #[arg(long)]
    pub dictionary_mode: Option<DictionaryMode>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Require this value in the `x-review-token` header.
    #[arg(long)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Pipeline output directories to tabulate.
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Scaling series written by `scale`.
    #[arg(long)]
    pub scaling: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> anyhow::Result<T>;
}

impl<T, E: Into<Box<dyn Error + Send + Sync>>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> anyhow::Result<T> {
        self.map_err(|e| PipelineError::new(stage, e).into())
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let costs = match &cli.costs {
        Some(s) => CostModel::parse(s, cli.allow_unordered_costs).stage(Stage::Load)?,
        None => CostModel::default(),
    };
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => gen(a, seed),
        Command::Detect(a) => detect_cmd(a, costs),
        Command::Cluster(a) => cluster_cmd(a, seed),
        Command::Correct(a) => correct(a, seed, costs),
        Command::Simulate(a) => simulate(a, seed, costs),
        Command::Scale(a) => scale(a, seed, costs),
        Command::Serve(a) => serve_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

/// Renders an error with its causes, skipping causes already in the message.
pub fn render_error(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !out.contains(&c) {
            out.push_str(": ");
            out.push_str(&c);
        }
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: C,
}

fn write_manifest(dir: &Path, command: &str, config: impl Serialize) -> anyhow::Result<()> {
    let m = Manifest {
        tool: "batchfix",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).stage(Stage::Write)
}

fn apply_overrides(cfg: &mut GeneratorConfig, overrides: &[String]) -> anyhow::Result<()> {
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
    }
    Ok(())
}

fn gen(a: GenArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            GeneratorConfig::from_kv(&text)?
        }
        None => GeneratorConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| match v {
        Some(v) => cfg.set(k, &v).map_err(anyhow::Error::msg),
        None => Ok(()),
    };
    set("vocabulary_size", a.vocabulary_size.map(|v| v.to_string()))?;
    set("total_words", a.total_words.map(|v| v.to_string()))?;
    set("target_word_accuracy", a.target_word_accuracy.map(|v| v.to_string()))?;
    set("script", a.script.clone())?;
    apply_overrides(&mut cfg, &a.overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let synth = (|| -> anyhow::Result<_> {
        cfg.validate()?;
        Ok(generate_corpus(&cfg)?)
    })()
    .stage(Stage::Load)?;

    create_dir(&a.out_dir)?;
    write_corpus(&synth.corpus, &a.out_dir.join(GEN_CORPUS)).stage(Stage::Write)?;
    let dict = Dictionary::from_words(&synth.dictionary_words, DictionaryMode::Static);
    write_word_list(&dict, &a.out_dir.join(GEN_DICTIONARY)).stage(Stage::Write)?;
    write_manifest(&a.out_dir, "gen", &cfg).stage(Stage::Write)?;
    println!(
        "generated {} words ({} dictionary words) in {}",
        synth.corpus.len(),
        dict.len(),
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    id: &'a str,
    prediction: &'a str,
    flagged: bool,
    category: Option<Category>,
}

fn detect_cmd(a: DetectArgs, costs: CostModel) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.corpus).stage(Stage::Load)?;
    let dict = build_dictionary(&a.dict.dictionaries, a.dict.dictionary_mode).stage(Stage::Load)?;
    let flags = detect(&corpus, &dict);
    let cats = categorize(&corpus, &flags);

    println!("instances={}", corpus.len());
    println!("flagged={}", flags.count());
    println!(
        "efp={} etp={} rfn={} tn={} unlabeled={}",
        cats.efp.len(),
        cats.etp.len(),
        cats.rfn.len(),
        cats.tn.len(),
        cats.unlabeled.len()
    );
    if corpus.is_fully_annotated() && !corpus.is_empty() {
        let sel = naive_selection_cost(&cats, &corpus, &dict, &costs, SuggestParams::default()).stage(Stage::Cost)?;
        println!("naive_typing_seconds={}", naive_typing_cost(&cats, &costs));
        println!("naive_selection_seconds={sel}");
    }

    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        let mut category = vec![None; corpus.len()];
        for (set, c) in [
            (&cats.efp, Category::Efp),
            (&cats.etp, Category::Etp),
            (&cats.rfn, Category::Rfn),
            (&cats.tn, Category::Tn),
        ] {
            for &i in set {
                category[i] = Some(c);
            }
        }
        let write = || -> std::io::Result<()> {
            let mut out = BufWriter::new(File::create(dir.join(DETECT_FILE))?);
            for (i, w) in corpus.instances().iter().enumerate() {
                let rec = DetectionRecord {
                    id: &w.id,
                    prediction: &w.prediction,
                    flagged: flags.is_flagged(i),
                    category: category[i],
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        };
        write().stage(Stage::Write)?;
        #[derive(Serialize)]
        struct DetectManifest<'a> {
            corpus: &'a Path,
            dictionaries: &'a [PathBuf],
            dictionary_mode: DictionaryMode,
            costs: CostModel,
        }
        write_manifest(
            dir,
            "detect",
            DetectManifest {
                corpus: &a.corpus,
                dictionaries: &a.dict.dictionaries,
                dictionary_mode: a.dict.dictionary_mode,
                costs,
            },
        )
        .stage(Stage::Write)?;
    }
    Ok(())
}

fn load_with_embeddings(corpus: &Path, embeddings: Option<&Path>, methods: &[Method]) -> anyhow::Result<Corpus> {
    let mut c = load_corpus(corpus).stage(Stage::Load)?;
    if let Some(path) = embeddings {
        let m = load_embeddings(path, c.len()).stage(Stage::Load)?;
        c = c.with_embeddings(m).stage(Stage::Load)?;
    }
    if let Some(m) = methods.iter().find(|m| m.needs_embeddings()) {
        if c.embeddings().is_none() {
            return Err(PipelineError::new(Stage::Load, format!("method {m} needs an embedding matrix")).into());
        }
    }
    Ok(c)
}

fn cluster_cmd(a: ClusterArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let corpus = load_with_embeddings(&a.corpus, a.embeddings.as_deref(), &[a.method])?;
    let mut cfg = a.cluster.to_config();
    let seed = seed.unwrap_or(0);
    cfg.kmeans_seed = seed;
    cfg.lsh_seed = seed;
    let clustering = cluster_corpus(&corpus, a.method, &cfg).stage(Stage::Cluster)?;
    create_dir(&a.out_dir)?;
    let file = File::create(a.out_dir.join(CLUSTERING_FILE)).stage(Stage::Write)?;
    clustering.write_jsonl(&corpus, BufWriter::new(file)).stage(Stage::Write)?;
    #[derive(Serialize)]
    struct ClusterManifest<'a> {
        corpus: &'a Path,
        embeddings: Option<&'a Path>,
        method: Method,
        cluster: &'a ClusterConfig,
        seed: u64,
    }
    write_manifest(
        &a.out_dir,
        "cluster",
        ClusterManifest {
            corpus: &a.corpus,
            embeddings: a.embeddings.as_deref(),
            method: a.method,
            cluster: &cfg,
            seed,
        },
    )
    .stage(Stage::Write)?;
    println!(
        "{}: {} clusters over {} instances",
        clustering.method_tag,
        clustering.len(),
        corpus.len()
    );
    Ok(())
}

fn correct(a: CorrectArgs, seed: Option<u64>, costs: CostModel) -> anyhow::Result<()> {
    let config = match &a.from_manifest {
        Some(m) => {
            let mut c = config_from_manifest(m, &a.output_dir)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }
        None => PipelineConfig {
            embeddings: a.embeddings.clone(),
            dictionary_mode: a.dictionary_mode,
            method: a.method,
            mode: a.mode,
            cluster: a.cluster.to_config(),
            correction: a.correction.to_config(),
            costs,
            seed: seed.unwrap_or(0),
            ..PipelineConfig::new(
                a.corpus.clone().expect("required by clap"),
                a.dictionaries.clone(),
                &a.output_dir,
            )
        },
    };
    run_pipeline(&config)?;
    let report = std::fs::read_to_string(config.output_dir.join(REPORT_FILE)).stage(Stage::Write)?;
    print!("{report}");
    Ok(())
}

fn simulate(a: SimulateArgs, seed: Option<u64>, costs: CostModel) -> anyhow::Result<()> {
    let corpus = load_with_embeddings(&a.corpus, a.embeddings.as_deref(), &a.methods)?;
    let dict = build_dictionary(&a.dictionaries, DictionaryMode::Static).stage(Stage::Load)?;
    let base = PipelineConfig {
        cluster: a.cluster.to_config(),
        correction: a.correction.to_config(),
        costs,
        seed: seed.unwrap_or(0),
        ..PipelineConfig::new(&a.corpus, a.dictionaries.clone(), "")
    };

    let mut cells = Vec::new();
    let mut tsv = String::from("method\tmode\tdictionary_mode\tabsolute_seconds\trelative_to_typing\taccuracy_after\n");
    for &method in &a.methods {
        for &mode in &a.modes {
            for &dictionary_mode in &a.dictionary_modes {
                let config = PipelineConfig {
                    method,
                    mode,
                    dictionary_mode,
                    ..base.clone()
                };
                let out = execute(&corpus, &dict, &config)?;
                let r = &out.report;
                let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.6}"));
                tsv.push_str(&format!(
                    "{method}\t{mode}\t{dictionary_mode}\t{}\t{}\t{}\n",
                    r.absolute_seconds,
                    fmt(r.relative_to_typing),
                    fmt(out.accuracy_after)
                ));
                if let Some(rel) = r.relative_to_typing {
                    cells.push((method.to_string(), format!("{mode}/{dictionary_mode}"), rel));
                }
            }
        }
    }
    let table = render_table(&cells);
    print!("{table}");
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        std::fs::write(dir.join(COST_TABLE_FILE), &table).stage(Stage::Write)?;
        std::fs::write(dir.join(SIMULATE_FILE), &tsv).stage(Stage::Write)?;
        #[derive(Serialize)]
        struct SimulateManifest<'a> {
            base: &'a PipelineConfig,
            methods: &'a [Method],
            modes: &'a [CorrectionMode],
            dictionary_modes: &'a [DictionaryMode],
        }
        write_manifest(
            dir,
            "simulate",
            SimulateManifest {
                base: &base,
                methods: &a.methods,
                modes: &a.modes,
                dictionary_modes: &a.dictionary_modes,
            },
        )
        .stage(Stage::Write)?;
    }
    Ok(())
}

fn scale(a: ScaleArgs, seed: Option<u64>, costs: CostModel) -> anyhow::Result<()> {
    let mut config = ScalingConfig {
        sizes: a.sizes.clone(),
        eval_size: a.eval_size,
        repetitions: a.repetitions,
        method: a.method,
        cluster: a.cluster.to_config(),
        costs,
        ..ScalingConfig::default()
    };
    apply_overrides(&mut config.generator, &a.overrides).stage(Stage::Load)?;
    if let Some(s) = seed {
        config.generator.seed = s;
    }
    let series = scaling_experiment(&config)?;
    println!("size\tmean_accuracy_after");
    for (size, acc) in series.mean_accuracy() {
        println!("{size}\t{acc:.6}");
    }
    match series.spearman {
        Some(rho) => println!("spearman={rho:.6}"),
        None => println!("spearman=undefined"),
    }
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        std::fs::write(dir.join(SERIES_TSV), series.to_tsv()).stage(Stage::Write)?;
        let json = serde_json::to_string_pretty(&series).stage(Stage::Write)?;
        std::fs::write(dir.join(SERIES_JSON), json + "\n").stage(Stage::Write)?;
        write_manifest(dir, "scale", &config).stage(Stage::Write)?;
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> anyhow::Result<()> {
    let review = Review::open(&ReviewConfig {
        run_dir: a.run_dir.clone(),
        state_dir: a.state_dir.clone(),
        dictionary_mode: a.dictionary_mode,
    })
    .stage(Stage::Load)?;
    let state_dir = review.state_dir().to_path_buf();
    let state = AppState::new(review, a.token.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("serve stage: binding {}", a.bind))?;
        println!(
            "reviewing {} on http://{} (session log in {})",
            a.run_dir.display(),
            listener.local_addr()?,
            state_dir.display()
        );
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, state, shutdown).await
    })
}

/// Per-size summary of a scaling series: mean, min and max accuracy.
pub fn scaling_plot(series: &ScalingSeries) -> String {
    let mut out = String::from("size\tmean_accuracy_after\tmin_accuracy_after\tmax_accuracy_after\tmean_accuracy_before\trepetitions\n");
    for (size, mean) in series.mean_accuracy() {
        let pts: Vec<_> = series.points.iter().filter(|p| p.size == size).collect();
        let min = pts.iter().map(|p| p.accuracy_after).fold(f64::INFINITY, f64::min);
        let max = pts.iter().map(|p| p.accuracy_after).fold(f64::NEG_INFINITY, f64::max);
        let before = pts.iter().map(|p| p.accuracy_before).sum::<f64>() / pts.len() as f64;
        out.push_str(&format!(
            "{size}\t{mean:.6}\t{min:.6}\t{max:.6}\t{before:.6}\t{}\n",
            pts.len()
        ));
    }
    out
}

/// Cost-table cells from pipeline reports tagged `method/mode/dictionary`.
pub fn table_cells(reports: &[CostReport]) -> anyhow::Result<Vec<(String, String, f64)>> {
    let mut cells = Vec::new();
    for r in reports {
        let (method, column) = r
            .method_tag
            .split_once('/')
            .with_context(|| format!("method tag {:?} has no mode", r.method_tag))?;
        match r.relative_to_typing {
            Some(rel) => cells.push((method.to_owned(), column.to_owned(), rel)),
            None => log::warn!("{}: relative cost undefined, left out of the table", r.method_tag),
        }
    }
    Ok(cells)
}

fn report_cmd(a: ReportArgs) -> anyhow::Result<()> {
    if a.runs.is_empty() && a.scaling.is_none() {
        bail!("report needs --runs and/or --scaling");
    }
    let mut table = None;
    if !a.runs.is_empty() {
        let reports = a
            .runs
            .iter()
            .map(|dir| {
                let path = dir.join(REPORT_FILE);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                CostReport::from_kv(&text).with_context(|| format!("{} is not a cost report", path.display()))
            })
            .collect::<anyhow::Result<Vec<_>>>()
            .stage(Stage::Load)?;
        let t = render_table(&table_cells(&reports).stage(Stage::Load)?);
        print!("{t}");
        table = Some(t);
    }
    let mut plot = None;
    if let Some(path) = &a.scaling {
        let series = (|| -> anyhow::Result<ScalingSeries> {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        })()
        .stage(Stage::Load)?;
        let p = scaling_plot(&series);
        print!("{p}");
        match series.spearman {
            Some(rho) => println!("spearman={rho:.6}"),
            None => println!("spearman=undefined"),
        }
        plot = Some(p);
    }
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        if let Some(t) = &table {
            std::fs::write(dir.join(COST_TABLE_FILE), t).stage(Stage::Write)?;
        }
        if let Some(p) = &plot {
            std::fs::write(dir.join(SCALING_PLOT_FILE), p).stage(Stage::Write)?;
        }
        #[derive(Serialize)]
        struct ReportManifest<'a> {
            runs: &'a [PathBuf],
            scaling: Option<&'a Path>,
        }
        write_manifest(
            dir,
            "report",
            ReportManifest {
                runs: &a.runs,
                scaling: a.scaling.as_deref(),
            },
        )
        .stage(Stage::Write)?;
    }
    Ok(())
}
