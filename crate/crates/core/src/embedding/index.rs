//! Knowledge documents and the immutable lock-embedding index.

use std::collections::HashSet;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::EmbeddingMatrix;
use crate::error::{Error, Result};

/// One manifest entry. Unknown JSON keys are ignored on input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDocument {
    pub doc_id: String,
    pub category: String,
    pub defect_type: String,
    pub page: u64,
    pub summary: String,
    pub lock_row: usize,
}

/// Parses a JSON Lines manifest. Blank lines are skipped.
pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Vec<KnowledgeDocument>> {
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: KnowledgeDocument = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<KnowledgeDocument>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(std::io::BufReader::new(file))
}

pub fn write_manifest(docs: &[KnowledgeDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents serialize"));
        out.push('\n');
    }
    out
}

/// Frozen store of unit-norm lock embeddings, one per document.
///
/// Row `i` of [`KnowledgeIndex::locks`] belongs to `documents()[i]`. There is no
/// mutating API; share it freely across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeIndex {
    documents: Vec<KnowledgeDocument>,
    locks: EmbeddingMatrix,
}

pub const BUNDLE_LOCKS: &str = "locks.adsk";
pub const BUNDLE_DOCUMENTS: &str = "documents.jsonl";

impl KnowledgeIndex {
    /// Validates `documents` against `embeddings` and gathers normalized lock rows
    /// in document order.
    pub fn build(documents: Vec<KnowledgeDocument>, embeddings: &EmbeddingMatrix) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        let mut rows = Vec::with_capacity(documents.len() * embeddings.dim());
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate doc_id {:?}", doc.doc_id)));
            }
            if doc.lock_row >= embeddings.count() {
                return Err(Error::Manifest(format!(
                    "doc_id {:?} references lock_row {} but the embedding file has {} rows",
                    doc.doc_id,
                    doc.lock_row,
                    embeddings.count()
                )));
            }
            let row = super::matrix::normalize_row(embeddings.row(doc.lock_row)).map_err(|_| {
                Error::Data(format!(
                    "doc_id {:?}: lock row {} is a zero vector",
                    doc.doc_id, doc.lock_row
                ))
            })?;
            rows.extend(row);
        }
        let locks = EmbeddingMatrix::new(embeddings.dim(), rows)?;
        Ok(Self { documents, locks })
    }

    pub fn documents(&self) -> &[KnowledgeDocument] {
        &self.documents
    }

    pub fn locks(&self) -> &EmbeddingMatrix {
        &self.locks
    }

    pub fn dim(&self) -> usize {
        self.locks.dim()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Writes `locks.adsk` and `documents.jsonl` into `dir`, with each document's
    /// `lock_row` rewritten to its position in the bundle.
    pub fn save_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.locks.save(dir.join(BUNDLE_LOCKS))?;
        let docs: Vec<KnowledgeDocument> = self
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| KnowledgeDocument {
                lock_row: i,
                ..d.clone()
            })
            .collect();
        let path = dir.join(BUNDLE_DOCUMENTS);
        fs::write(&path, write_manifest(&docs)).map_err(|e| Error::io(&path, e))
    }

    pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (docs_path, locks_path): (PathBuf, PathBuf) =
            (dir.join(BUNDLE_DOCUMENTS), dir.join(BUNDLE_LOCKS));
        let locks = EmbeddingMatrix::load(locks_path)?;
        KnowledgeIndex::build(read_manifest(docs_path)?, &locks)
    }
}

/// Reads a manifest file and builds a frozen index over `embeddings`.
pub fn build_index(manifest: impl AsRef<Path>, embeddings: &EmbeddingMatrix) -> Result<KnowledgeIndex> {
    KnowledgeIndex::build(read_manifest(manifest)?, embeddings)
}
