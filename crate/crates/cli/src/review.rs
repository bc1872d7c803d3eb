//! A review session loaded from pipeline artifacts, with a durable action log.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use batchfix::correction::{Action, ActionKind, ActionLog, ClusterStatus, LogRecord, SessionError, SessionState};
use batchfix::costing::{naive_typing_cost, report};
use batchfix::lexicon::{build_dictionary, categorize, detect};
use batchfix::pipeline::{config_from_manifest, CLUSTERING_FILE, MANIFEST_FILE};
use batchfix::{Clustering, CostModel, CostReport, DictionaryMode, Suggestion};
use serde::{Deserialize, Serialize};

/// Acknowledged actions, one JSON record per line.
pub const SESSION_LOG: &str = "actions.jsonl";
/// Corrected corpus written on shutdown.
pub const SESSION_EXPORT: &str = "corrected.jsonl";
/// Snapshot written on shutdown.
pub const SESSION_SNAPSHOT: &str = "session.json";

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    /// Directory written by the pipeline (manifest and clustering).
    pub run_dir: PathBuf,
    /// Where the session log lives; defaults to `<run_dir>/review`.
    pub state_dir: Option<PathBuf>,
    /// Overrides the dictionary mode recorded in the manifest.
    pub dictionary_mode: Option<DictionaryMode>,
}

impl ReviewConfig {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
            state_dir: None,
            dictionary_mode: None,
        }
    }

    pub fn state_dir(&self) -> PathBuf {
        self.state_dir.clone().unwrap_or_else(|| self.run_dir.join("review"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("session log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub clusters_pending: usize,
    pub clusters_resolved: usize,
    /// Instances in queued clusters.
    pub members: usize,
    pub cost: CostReport,
    pub dictionary_mode: DictionaryMode,
    pub dictionary_size: usize,
    pub method_tag: String,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub status: ClusterStatus,
    pub size: usize,
    pub modal_prediction: String,
    pub flagged_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberView {
    pub id: String,
    pub prediction: String,
    pub final_label: Option<String>,
    pub flagged: bool,
    pub image_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDetail {
    #[serde(flatten)]
    pub summary: ClusterSummary,
    pub suggestions: Vec<Suggestion>,
    pub members: Vec<MemberView>,
}

#[derive(Debug)]
pub struct Review {
    session: SessionState,
    costs: CostModel,
    baseline: f64,
    corpus_dir: PathBuf,
    state_dir: PathBuf,
    log: File,
}

impl Review {
    /// Loads the session and replays any existing log in the state directory.
    pub fn open(config: &ReviewConfig) -> anyhow::Result<Self> {
        let manifest = config.run_dir.join(MANIFEST_FILE);
        let pipeline = config_from_manifest(&manifest, &config.run_dir)?;
        let corpus = batchfix::corpus::load_corpus(&pipeline.corpus)
            .with_context(|| format!("loading {}", pipeline.corpus.display()))?;
        let clustering_path = config.run_dir.join(CLUSTERING_FILE);
        let file = File::open(&clustering_path).with_context(|| format!("opening {}", clustering_path.display()))?;
        let clustering = Clustering::read_jsonl(&corpus, BufReader::new(file))
            .with_context(|| format!("reading {}", clustering_path.display()))?;
        if !clustering.is_partition_of(&(0..corpus.len()).collect::<Vec<_>>()) {
            bail!("{} does not partition the corpus", clustering_path.display());
        }
        let mode = config.dictionary_mode.unwrap_or(pipeline.dictionary_mode);
        let dict = build_dictionary(&pipeline.dictionaries, mode)?;
        let baseline = naive_typing_cost(&categorize(&corpus, &detect(&corpus, &dict)), &pipeline.costs);
        let corpus_dir = pipeline.corpus.parent().map(Path::to_path_buf).unwrap_or_default();

        let mut session = SessionState::new(
            Arc::new(corpus),
            Arc::new(clustering),
            dict,
            pipeline.correction.suggest,
        );
        let state_dir = config.state_dir();
        std::fs::create_dir_all(&state_dir).with_context(|| format!("creating {}", state_dir.display()))?;
        let log_path = state_dir.join(SESSION_LOG);
        replay_log(&mut session, &log_path)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .with_context(|| format!("opening {}", log_path.display()))?;
        Ok(Self {
            session,
            costs: pipeline.costs,
            baseline,
            corpus_dir,
            state_dir,
            log,
        })
    }

    pub fn session(&self) -> &SessionState {
        &self.session
    }

    pub fn state_dir(&self) -> &Path {
        &self.state_dir
    }

    pub fn cost(&self) -> CostReport {
        let tag = format!(
            "{}/review/{}",
            self.session.clustering().method_tag,
            self.session.dictionary().mode()
        );
        report(tag, self.session.log(), &self.costs, self.baseline)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let clusters = self.session.clusters();
        let resolved = clusters.iter().filter(|(_, s)| *s == ClusterStatus::Resolved).count();
        let members = clusters
            .iter()
            .map(|&(c, _)| self.session.clustering().clusters[c].len())
            .sum();
        SessionSnapshot {
            clusters_pending: clusters.len() - resolved,
            clusters_resolved: resolved,
            members,
            cost: self.cost(),
            dictionary_mode: self.session.dictionary().mode(),
            dictionary_size: self.session.dictionary().len(),
            method_tag: self.session.clustering().method_tag.clone(),
            complete: self.session.is_complete(),
        }
    }

    pub fn summary(&self, id: usize) -> Result<ClusterSummary, SessionError> {
        Ok(ClusterSummary {
            id,
            status: self.session.status(id)?,
            size: self.session.members(id)?.len(),
            modal_prediction: self.session.modal_prediction(id)?.to_owned(),
            flagged_count: self.session.flagged_count(id)?,
        })
    }

    /// Queued clusters, optionally filtered by status; largest first unless `by_id`.
    pub fn summaries(&self, status: Option<ClusterStatus>, by_id: bool) -> Vec<ClusterSummary> {
        let mut out: Vec<ClusterSummary> = self
            .session
            .clusters()
            .into_iter()
            .filter(|(_, s)| status.is_none_or(|want| *s == want))
            .map(|(c, _)| self.summary(c).expect("queued cluster"))
            .collect();
        if !by_id {
            out.sort_by(|a, b| b.size.cmp(&a.size).then(a.id.cmp(&b.id)));
        }
        out
    }

    pub fn detail(&self, id: usize) -> Result<ClusterDetail, SessionError> {
        let summary = self.summary(id)?;
        let corpus = self.session.corpus();
        let dict = self.session.dictionary();
        let members = self
            .session
            .members(id)?
            .iter()
            .map(|&m| {
                let w = &corpus.instances()[m];
                MemberView {
                    id: w.id.clone(),
                    prediction: w.prediction.clone(),
                    final_label: self.session.final_label(m).map(str::to_owned),
                    flagged: !dict.contains(&w.prediction),
                    image_url: w.image_ref.as_ref().map(|_| format!("/api/images/{}", w.id)),
                }
            })
            .collect();
        Ok(ClusterDetail {
            suggestions: self.session.suggest(&summary.modal_prediction),
            summary,
            members,
        })
    }

    pub fn suggest(&self, query: &str, k: Option<usize>) -> Vec<Suggestion> {
        let mut params = self.session.params();
        if let Some(k) = k {
            params.top_k = k;
        }
        self.session.dictionary().suggest_with(query, params)
    }

    /// Validates the action, appends it to the log and syncs the log to disk,
    /// then applies it. Returns the action as logged.
    pub fn submit(&mut self, action: &Action) -> Result<Action, SubmitError> {
        let normalized = self.session.check(action)?;
        let prior = self.session.log();
        let mut tally = ActionLog::default();
        tally.v_t = prior.v_t;
        tally.v_d = prior.v_d;
        tally.v_v = prior.v_v;
        tally.push(normalized.clone());
        let mut line = serde_json::to_vec(&LogRecord::new(&normalized, &tally)).map_err(std::io::Error::from)?;
        line.push(b'\n');

        let before = self.log.metadata()?.len();
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        if let Err(e) = self.session.apply(&normalized) {
            self.log.set_len(before)?;
            self.log.sync_data()?;
            return Err(e.into());
        }
        Ok(normalized)
    }

    /// Corrected corpus in the corpus file format, with a `source` field.
    pub fn export(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.session
            .result()
            .write_corpus(self.session.corpus(), &mut out)
            .expect("writing to memory");
        out
    }

    /// Image file of a member, if it has one.
    pub fn image_path(&self, member_id: &str) -> Option<PathBuf> {
        let corpus = self.session.corpus();
        let pos = corpus.position(member_id)?;
        let image = Path::new(corpus.instances()[pos].image_ref.as_ref()?);
        Some(if image.is_absolute() {
            image.to_path_buf()
        } else {
            self.corpus_dir.join(image)
        })
    }

    /// Writes the corrected corpus and a snapshot next to the log.
    pub fn persist(&self) -> anyhow::Result<()> {
        self.log.sync_all()?;
        std::fs::write(self.state_dir.join(SESSION_EXPORT), self.export())?;
        let snapshot = serde_json::to_vec_pretty(&self.snapshot())?;
        std::fs::write(self.state_dir.join(SESSION_SNAPSHOT), snapshot)?;
        Ok(())
    }
}

/// Applies every complete record of the log at `path`. A trailing partial
/// line (an unacknowledged write cut short) is truncated away.
fn replay_log(session: &mut SessionState, path: &Path) -> anyhow::Result<()> {
    let Ok(bytes) = std::fs::read(path) else {
        return Ok(());
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of an incomplete record",
            path.display(),
            bytes.len() - complete
        );
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
        f.sync_all()?;
    }
    let text = std::str::from_utf8(&bytes[..complete]).with_context(|| format!("{} is not UTF-8", path.display()))?;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}: corrupt record", path.display(), n + 1))?;
        let action = rec.into_action();
        session
            .apply(&action)
            .with_context(|| format!("{} line {}: cannot replay", path.display(), n + 1))?;
    }
    log::info!("replayed {} actions from {}", session.log().len(), path.display());
    Ok(())
}

/// Wire body of an action request.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRequest {
    pub kind: ActionKind,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub suggestion_rank: Option<usize>,
}
