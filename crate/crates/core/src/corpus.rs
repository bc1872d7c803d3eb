//! Corpus data model and its on-disk formats.
//!
//! A corpus file holds one JSON object per line with the fields `id`, `book`,
//! `page`, `prediction`, `ground_truth` and `image`. Embeddings live in a
//! binary sidecar (`<corpus path>.bfem`) whose rows follow line order:
//!
//! ```text
//! magic "BFEM" | version u32 = 1 | dim u32 | count u64 | count*dim f32   (all little-endian)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"BFEM";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate instance id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("bad embedding magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding format version {0}")]
    Version(u32),
    #[error("embedding count {found} does not match expected {expected}")]
    CountMismatch { expected: usize, found: usize },
    #[error("embedding payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("embedding payload has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("non-finite embedding value in row {row}")]
    NonFinite { row: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("embedding data length {len} is not count*dim for dim {dim}")]
    Shape { len: usize, dim: usize },
    #[error("instance {index} references embedding row {row}, expected {index}")]
    Misaligned { index: usize, row: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One segmented word image and what the recognizer said about it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordInstance {
    pub id: String,
    pub book_id: String,
    pub page_id: u64,
    pub prediction: String,
    pub ground_truth: Option<String>,
    pub image_ref: Option<String>,
    pub embedding_row: usize,
}

impl WordInstance {
    /// `Some(true)` when the prediction matches the annotation.
    pub fn is_correct(&self) -> Option<bool> {
        self.ground_truth.as_deref().map(|gt| gt == self.prediction)
    }
}

/// Row-major `count x dim` matrix of image features.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(CorpusError::Shape {
                len: data.len(),
                dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite { row: pos / dim });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Builds a matrix holding the given rows of `self`, in order.
    pub fn select_rows(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        EmbeddingMatrix {
            dim: self.dim,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_count: usize) -> Result<Self, CorpusError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != EMBEDDING_MAGIC {
                return Err(CorpusError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(CorpusError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != EMBEDDING_MAGIC {
            return Err(CorpusError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != EMBEDDING_VERSION {
            return Err(CorpusError::Version(version));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        if count != expected_count {
            return Err(CorpusError::CountMismatch {
                expected: expected_count,
                found: count,
            });
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or(CorpusError::Truncated {
                expected: usize::MAX,
                found: payload.len(),
            })?;
        if payload.len() < expected {
            return Err(CorpusError::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(CorpusError::TrailingBytes(payload.len() - expected));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, data)
    }
}

/// An ordered collection of word instances, optionally with image features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    instances: Vec<WordInstance>,
    embeddings: Option<EmbeddingMatrix>,
    pub metadata: BTreeMap<String, String>,
}

impl Corpus {
    /// Builds a corpus, renumbering `embedding_row` to list position.
    pub fn new(mut instances: Vec<WordInstance>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(instances.len());
        for (i, inst) in instances.iter_mut().enumerate() {
            if !seen.insert(inst.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    id: inst.id.clone(),
                    line: i + 1,
                });
            }
            inst.embedding_row = i;
        }
        Ok(Self {
            instances,
            embeddings: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_embeddings(mut self, embeddings: EmbeddingMatrix) -> Result<Self, CorpusError> {
        if embeddings.count() != self.instances.len() {
            return Err(CorpusError::CountMismatch {
                expected: self.instances.len(),
                found: embeddings.count(),
            });
        }
        self.embeddings = Some(embeddings);
        Ok(self)
    }

    pub fn instances(&self) -> &[WordInstance] {
        &self.instances
    }

    pub fn embeddings(&self) -> Option<&EmbeddingMatrix> {
        self.embeddings.as_ref()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_fully_annotated(&self) -> bool {
        self.instances.iter().all(|i| i.ground_truth.is_some())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    /// Same instances (and embeddings) with predictions replaced.
    pub fn with_predictions(&self, labels: &[String]) -> Corpus {
        let mut out = self.clone();
        for (inst, label) in out.instances.iter_mut().zip(labels) {
            inst.prediction = label.clone();
        }
        out
    }

    /// Sub-corpus of the given positions; ids and embeddings carried over.
    pub fn subset(&self, positions: &[usize]) -> Corpus {
        let instances = positions
            .iter()
            .enumerate()
            .map(|(new_row, &p)| WordInstance {
                embedding_row: new_row,
                ..self.instances[p].clone()
            })
            .collect();
        Corpus {
            instances,
            embeddings: self.embeddings.as_ref().map(|m| m.select_rows(positions)),
            metadata: self.metadata.clone(),
        }
    }

    /// Concatenates two corpora; ids must stay unique.
    pub fn concat(&self, other: &Corpus) -> Result<Corpus, CorpusError> {
        let mut instances = self.instances.clone();
        instances.extend(other.instances.iter().cloned());
        let out = Corpus::new(instances)?;
        match (&self.embeddings, &other.embeddings) {
            (Some(a), Some(b)) if a.dim == b.dim => {
                let mut data = a.data.clone();
                data.extend_from_slice(&b.data);
                out.with_embeddings(EmbeddingMatrix::new(a.dim, data)?)
            }
            _ => Ok(out),
        }
    }

    pub fn check_alignment(&self) -> Result<(), CorpusError> {
        for (index, inst) in self.instances.iter().enumerate() {
            if inst.embedding_row != index {
                return Err(CorpusError::Misaligned {
                    index,
                    row: inst.embedding_row,
                });
            }
        }
        Ok(())
    }
}

/// The per-line wire shape of a corpus record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub book: String,
    pub page: u64,
    pub prediction: String,
    pub ground_truth: Option<String>,
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl From<&WordInstance> for CorpusRecord {
    fn from(w: &WordInstance) -> Self {
        CorpusRecord {
            id: w.id.clone(),
            book: w.book_id.clone(),
            page: w.page_id,
            prediction: w.prediction.clone(),
            ground_truth: w.ground_truth.clone(),
            image: w.image_ref.clone(),
            source: None,
        }
    }
}

/// Path of the embedding sidecar belonging to a corpus file.
pub fn embedding_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bfem");
    PathBuf::from(s)
}

fn metadata_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
        if let Some(gt) = &rec.ground_truth {
            if gt.trim().is_empty() {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    reason: "ground_truth must be non-empty or null".into(),
                });
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: rec.id,
                line: line_no,
            });
        }
        let embedding_row = instances.len();
        instances.push(WordInstance {
            id: rec.id,
            book_id: rec.book,
            page_id: rec.page,
            prediction: rec.prediction,
            ground_truth: rec.ground_truth,
            image_ref: rec.image,
            embedding_row,
        });
    }
    Ok(Corpus {
        instances,
        embeddings: None,
        metadata: BTreeMap::new(),
    })
}

/// Loads a corpus file, attaching its embedding and metadata sidecars when present.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut corpus = parse_corpus(BufReader::new(file))?;
    let emb = embedding_sidecar(path);
    if emb.exists() {
        let matrix = load_embeddings(&emb, corpus.len())?;
        corpus = corpus.with_embeddings(matrix)?;
    }
    let meta = metadata_sidecar(path);
    if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(io_err(&meta))?;
        corpus.metadata = serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
            line: 0,
            reason: format!("metadata: {e}"),
        })?;
    }
    Ok(corpus)
}

pub fn load_embeddings(path: &Path, expected_count: usize) -> Result<EmbeddingMatrix, CorpusError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    EmbeddingMatrix::from_bytes(&bytes, expected_count)
}

pub fn write_records<W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = CorpusRecord>,
) -> io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes a corpus file plus sidecars. Stale sidecars from a previous write are removed.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_records(
        BufWriter::new(file),
        corpus.instances.iter().map(CorpusRecord::from),
    )
    .map_err(io_err(path))?;

    let emb = embedding_sidecar(path);
    match &corpus.embeddings {
        Some(m) => std::fs::write(&emb, m.to_bytes()).map_err(io_err(&emb))?,
        None if emb.exists() => std::fs::remove_file(&emb).map_err(io_err(&emb))?,
        None => {}
    }
    let meta = metadata_sidecar(path);
    if corpus.metadata.is_empty() {
        if meta.exists() {
            std::fs::remove_file(&meta).map_err(io_err(&meta))?;
        }
    } else {
        let text = serde_json::to_string_pretty(&corpus.metadata).expect("string map");
        std::fs::write(&meta, text).map_err(io_err(&meta))?;
    }
    Ok(())
}
