//! On-disk index format.
//!
//! ```text
//! line 1   JSON header: format, version, analyzer, fingerprint, BM25 params,
//!          body length and SHA-256
//! rest     JSON body: documents and per-field postings
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Bm25, FieldIndex, IndexError, InvertedIndex};
use crate::analysis::AnalyzerConfig;
use crate::corpus::Document;

const FORMAT: &str = "bioqa-index";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    fingerprint: String,
    analyzer: AnalyzerConfig,
    k1: f64,
    b: f64,
    body_bytes: usize,
    body_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Body {
    documents: Vec<Document>,
    title: FieldIndex,
    #[serde(rename = "abstract")]
    abstract_: FieldIndex,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl InvertedIndex {
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let body = serde_json::to_vec(&Body {
            documents: self.docs.clone(),
            title: self.title.clone(),
            abstract_: self.abstract_.clone(),
        })
        .map_err(|e| IndexError::Format(e.to_string()))?;
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            fingerprint: self.analyzer.fingerprint(),
            analyzer: self.analyzer.clone(),
            k1: self.bm25.k1,
            b: self.bm25.b,
            body_bytes: body.len(),
            body_sha256: hex::encode(Sha256::digest(&body)),
        };
        let mut out = serde_json::to_vec(&header).map_err(|e| IndexError::Format(e.to_string()))?;
        out.push(b'\n');
        out.extend_from_slice(&body);
        std::fs::write(path, out).map_err(io(path))
    }

    /// Loads an index and checks it was built with `expected`.
    pub fn load(path: &Path, expected: &AnalyzerConfig) -> Result<InvertedIndex, IndexError> {
        let index = Self::load_unchecked(path)?;
        let (want, found) = (expected.fingerprint(), index.analyzer.fingerprint());
        if want != found {
            return Err(IndexError::FingerprintMismatch { expected: want, found });
        }
        Ok(index)
    }

    /// Loads an index with whatever analyzer it records.
    pub fn load_unchecked(path: &Path) -> Result<InvertedIndex, IndexError> {
        let bytes = std::fs::read(path).map_err(io(path))?;
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| IndexError::Format("missing header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..split]).map_err(|e| IndexError::Format(format!("header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(IndexError::Format(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if header.analyzer.fingerprint() != header.fingerprint {
            return Err(IndexError::Format("header fingerprint does not match its analyzer".into()));
        }
        let body = &bytes[split + 1..];
        if body.len() != header.body_bytes {
            return Err(IndexError::Format(format!(
                "truncated body: {} of {} bytes",
                body.len(),
                header.body_bytes
            )));
        }
        if hex::encode(Sha256::digest(body)) != header.body_sha256 {
            return Err(IndexError::Format("body checksum mismatch".into()));
        }
        let body: Body = serde_json::from_slice(body).map_err(|e| IndexError::Format(format!("body: {e}")))?;
        let n = body.documents.len();
        if body.title.lengths.len() != n || body.abstract_.lengths.len() != n {
            return Err(IndexError::Format("field length tables disagree with document count".into()));
        }
        let mut ordinals = HashMap::with_capacity(n);
        for (i, d) in body.documents.iter().enumerate() {
            if ordinals.insert(d.doc_id.clone(), i as u32).is_some() {
                return Err(IndexError::DuplicateId(d.doc_id.clone()));
            }
        }
        Ok(InvertedIndex {
            analyzer: header.analyzer,
            bm25: Bm25 {
                k1: header.k1,
                b: header.b,
            },
            docs: body.documents,
            ordinals,
            title: body.title,
            abstract_: body.abstract_,
        })
    }
}
