//! Fielded inverted index over titles and abstracts with BM25 ranking.
//!
//! A leaf (term or phrase) matches a document if it matches in any listed
//! field; its contribution is the maximum over fields of `boost × BM25`.
//! A document matches when the boolean query is satisfied, and its score is
//! the sum of the contributions of all leaves it matches. Leaves that analyze
//! to nothing (stopwords only) are neutral: they neither restrict nor score.

pub mod bm25;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalyzerConfig, Token};
use crate::corpus::{CorpusError, Document, DocumentLookup, Section};
use crate::query::{FieldSpec, QueryAst};
use crate::Score;

pub use bm25::Bm25;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("result size must be at least 1")]
    ZeroSize,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid index file: {0}")]
    Format(String),
    #[error("analyzer fingerprint mismatch: index built with {found}, configured {expected}")]
    FingerprintMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
    pub positions: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct FieldIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    lengths: Vec<u32>,
    total_length: u64,
}

impl FieldIndex {
    fn add(&mut self, doc: u32, tokens: Vec<Token>) {
        self.lengths.push(tokens.len() as u32);
        self.total_length += tokens.len() as u64;
        let mut by_term: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for token in tokens {
            by_term.entry(token.term).or_default().push(token.position);
        }
        for (term, positions) in by_term {
            self.postings.entry(term).or_default().push(Posting {
                doc,
                tf: positions.len() as u32,
                positions,
            });
        }
    }

    fn avg_length(&self) -> Score {
        if self.lengths.is_empty() {
            0.0
        } else {
            self.total_length as Score / self.lengths.len() as Score
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: Score,
}

/// Orders hits by score descending, then doc id ascending.
pub fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    analyzer: AnalyzerConfig,
    bm25: Bm25<Score>,
    docs: Vec<Document>,
    ordinals: HashMap<String, u32>,
    title: FieldIndex,
    abstract_: FieldIndex,
}

/// Incremental single-writer construction.
pub struct IndexBuilder {
    index: InvertedIndex,
}

impl IndexBuilder {
    pub fn new(analyzer: AnalyzerConfig) -> Self {
        Self {
            index: InvertedIndex {
                analyzer,
                bm25: Bm25::default(),
                docs: Vec::new(),
                ordinals: HashMap::new(),
                title: FieldIndex::default(),
                abstract_: FieldIndex::default(),
            },
        }
    }

    pub fn add(&mut self, doc: Document) -> Result<(), IndexError> {
        let idx = &mut self.index;
        if idx.ordinals.contains_key(&doc.doc_id) {
            return Err(IndexError::DuplicateId(doc.doc_id));
        }
        let ordinal = idx.docs.len() as u32;
        idx.title.add(ordinal, idx.analyzer.analyze(&doc.title));
        idx.abstract_.add(ordinal, idx.analyzer.analyze(&doc.abstract_text));
        idx.ordinals.insert(doc.doc_id.clone(), ordinal);
        idx.docs.push(doc);
        Ok(())
    }

    pub fn finish(self) -> InvertedIndex {
        self.index
    }
}

pub fn build_index(docs: impl IntoIterator<Item = Document>, config: AnalyzerConfig) -> Result<InvertedIndex, IndexError> {
    let mut builder = IndexBuilder::new(config);
    for doc in docs {
        builder.add(doc)?;
    }
    Ok(builder.finish())
}

/// Builds from a fallible document stream such as a corpus reader.
pub fn build_index_from_stream(
    docs: impl IntoIterator<Item = Result<Document, CorpusError>>,
    config: AnalyzerConfig,
) -> Result<InvertedIndex, IndexError> {
    let mut builder = IndexBuilder::new(config);
    for doc in docs {
        builder.add(doc?)?;
    }
    Ok(builder.finish())
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldStats {
    pub field: Section,
    pub distinct_terms: usize,
    pub total_tokens: u64,
    pub avg_length: Score,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexStats {
    pub documents: usize,
    pub analyzer_fingerprint: String,
    pub stemmer: String,
    pub stopwords: usize,
    pub fields: Vec<FieldStats>,
}

/// Per-leaf match map; `None` marks a neutral leaf.
type LeafMatches = Option<HashMap<u32, Score>>;

impl InvertedIndex {
    pub fn analyzer(&self) -> &AnalyzerConfig {
        &self.analyzer
    }

    pub fn bm25(&self) -> Bm25<Score> {
        self.bm25
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    fn field(&self, section: Section) -> &FieldIndex {
        match section {
            Section::Title => &self.title,
            Section::Abstract => &self.abstract_,
        }
    }

    pub fn postings(&self, section: Section, term: &str) -> &[Posting] {
        self.field(section).postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self, section: Section, term: &str) -> usize {
        self.postings(section, term).len()
    }

    pub fn field_length(&self, section: Section, doc_id: &str) -> Option<u32> {
        let ord = *self.ordinals.get(doc_id)?;
        Some(self.field(section).lengths[ord as usize])
    }

    pub fn avg_field_length(&self, section: Section) -> Score {
        self.field(section).avg_length()
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            documents: self.docs.len(),
            analyzer_fingerprint: self.analyzer.fingerprint(),
            stemmer: self.analyzer.stemmer.as_str().to_string(),
            stopwords: self.analyzer.stopwords.len(),
            fields: Section::ALL
                .iter()
                .map(|&s| {
                    let f = self.field(s);
                    FieldStats {
                        field: s,
                        distinct_terms: f.postings.len(),
                        total_tokens: f.total_length,
                        avg_length: f.avg_length(),
                    }
                })
                .collect(),
        }
    }

    /// Runs a boolean query over the given fields and returns at most `size`
    /// hits ordered by score, ties broken by doc id.
    pub fn search(&self, ast: &QueryAst, fields: &[FieldSpec], size: usize) -> Result<Vec<SearchHit>, IndexError> {
        if size == 0 {
            return Err(IndexError::ZeroSize);
        }
        let fields: Vec<(Section, Score)> = fields
            .iter()
            .map(|f| {
                Section::parse(&f.field)
                    .filter(|_| f.field != "sections.0")
                    .map(|s| (s, f.boost))
                    .ok_or_else(|| IndexError::UnknownField(f.field.clone()))
            })
            .collect::<Result<_, _>>()?;
        let leaves: Vec<LeafMatches> = ast.leaves().into_iter().map(|leaf| self.eval_leaf(leaf, &fields)).collect();
        let mut cursor = 0;
        let matched = match eval_bool(ast, &leaves, &mut cursor) {
            Some(set) => set,
            None => return Ok(Vec::new()),
        };
        let mut hits: Vec<SearchHit> = matched
            .into_iter()
            .map(|doc| {
                let score = leaves
                    .iter()
                    .filter_map(|l| l.as_ref().and_then(|m| m.get(&doc)))
                    .sum::<Score>();
                SearchHit {
                    doc_id: self.docs[doc as usize].doc_id.clone(),
                    score,
                }
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(size);
        Ok(hits)
    }

    fn eval_leaf(&self, leaf: &QueryAst, fields: &[(Section, Score)]) -> LeafMatches {
        let text = match leaf {
            QueryAst::Term(t) => t.clone(),
            QueryAst::Phrase(words) => words.join(" "),
            _ => unreachable!("leaves() yields terms and phrases"),
        };
        let tokens = self.analyzer.analyze(&text);
        let first = tokens.first()?.position;
        let terms: Vec<(&str, u32)> = tokens.iter().map(|t| (t.term.as_str(), t.position - first)).collect();
        let mut best: HashMap<u32, Score> = HashMap::new();
        for &(section, boost) in fields {
            for (doc, score) in self.field_scores(section, &terms) {
                let boosted = boost * score;
                best.entry(doc).and_modify(|s| *s = s.max(boosted)).or_insert(boosted);
            }
        }
        Some(best)
    }

    /// Raw BM25 scores of a term (one entry) or phrase (several entries with
    /// relative positions) in one field.
    fn field_scores(&self, section: Section, terms: &[(&str, u32)]) -> Vec<(u32, Score)> {
        let field = self.field(section);
        let lists: Vec<&[Posting]> = terms.iter().map(|(t, _)| self.postings(section, t)).collect();
        if lists.iter().any(|l| l.is_empty()) {
            return Vec::new();
        }
        let n = self.docs.len();
        let idf: Score = lists.iter().map(|l| self.bm25.idf(n, l.len())).sum();
        let avg = field.avg_length();
        let mut out = Vec::new();
        for posting in lists[0] {
            let freq = if terms.len() == 1 {
                posting.tf
            } else {
                let others: Option<Vec<&Posting>> = lists[1..]
                    .iter()
                    .map(|l| l.binary_search_by_key(&posting.doc, |p| p.doc).ok().map(|i| &l[i]))
                    .collect();
                let Some(others) = others else { continue };
                posting
                    .positions
                    .iter()
                    .filter(|&&start| {
                        others
                            .iter()
                            .zip(&terms[1..])
                            .all(|(p, (_, off))| p.positions.binary_search(&(start + off)).is_ok())
                    })
                    .count() as u32
            };
            if freq == 0 {
                continue;
            }
            let len = field.lengths[posting.doc as usize] as Score;
            out.push((posting.doc, self.bm25.score(idf, freq as Score, len, avg)));
        }
        out
    }
}

/// Boolean evaluation; `None` means every leaf underneath was neutral.
fn eval_bool(ast: &QueryAst, leaves: &[LeafMatches], cursor: &mut usize) -> Option<BTreeSet<u32>> {
    match ast {
        QueryAst::Term(_) | QueryAst::Phrase(_) => {
            let leaf = &leaves[*cursor];
            *cursor += 1;
            leaf.as_ref().map(|m| m.keys().copied().collect())
        }
        QueryAst::And(children) => {
            let mut acc: Option<BTreeSet<u32>> = None;
            for child in children {
                if let Some(set) = eval_bool(child, leaves, cursor) {
                    acc = Some(match acc {
                        None => set,
                        Some(prev) => prev.intersection(&set).copied().collect(),
                    });
                }
            }
            acc
        }
        QueryAst::Or(children) => {
            let mut acc: Option<BTreeSet<u32>> = None;
            for child in children {
                if let Some(set) = eval_bool(child, leaves, cursor) {
                    acc.get_or_insert_with(BTreeSet::new).extend(set);
                }
            }
            acc
        }
    }
}

impl DocumentLookup for InvertedIndex {
    fn document(&self, doc_id: &str) -> Option<&Document> {
        self.ordinals.get(doc_id).map(|&o| &self.docs[o as usize])
    }
}

/// Searches several indices (e.g. a baseline and a recent snapshot) and
/// merges by score; a document found in more than one keeps its best hit.
pub fn search_all(
    indices: &[&InvertedIndex],
    ast: &QueryAst,
    fields: &[FieldSpec],
    size: usize,
) -> Result<Vec<SearchHit>, IndexError> {
    let mut merged: Vec<SearchHit> = Vec::new();
    for index in indices {
        merged.extend(index.search(ast, fields, size)?);
    }
    sort_hits(&mut merged);
    let mut seen = BTreeSet::new();
    merged.retain(|h| seen.insert(h.doc_id.clone()));
    merged.truncate(size);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{parse_query_string, DefaultOperator};

    fn toy() -> InvertedIndex {
        build_index(
            vec![
                Document::new("1", "Aspirin", "Aspirin reduces fever and aspirin reduces pain."),
                Document::new("2", "Heart attack prevention", "Low dose aspirin after a heart attack."),
                Document::new("3", "Ibuprofen", "Ibuprofen and the heart."),
            ],
            AnalyzerConfig::english(),
        )
        .unwrap()
    }

    fn fields() -> Vec<FieldSpec> {
        vec![FieldSpec::new("title", 1.0), FieldSpec::new("abstract", 1.0)]
    }

    fn ids(hits: &[SearchHit]) -> Vec<&str> {
        hits.iter().map(|h| h.doc_id.as_str()).collect()
    }

    #[test]
    fn single_document_postings() {
        let idx = build_index(vec![Document::new("a", "aspirin", "")], AnalyzerConfig::english()).unwrap();
        assert_eq!(
            idx.postings(Section::Title, "aspirin"),
            &[Posting {
                doc: 0,
                tf: 1,
                positions: vec![0]
            }]
        );
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = build_index(vec![], AnalyzerConfig::english()).unwrap();
        let ast = parse_query_string("aspirin", DefaultOperator::And).unwrap();
        assert!(idx.search(&ast, &fields(), 10).unwrap().is_empty());
    }

    #[test]
    fn hand_counted_statistics() {
        let idx = toy();
        // abstracts: [aspirin reduc fever aspirin reduc pain] [low dose aspirin after heart attack] [ibuprofen heart]
        assert_eq!(idx.doc_freq(Section::Abstract, "aspirin"), 2);
        assert_eq!(idx.doc_freq(Section::Abstract, "heart"), 2);
        assert_eq!(idx.doc_freq(Section::Title, "heart"), 1);
        assert_eq!(idx.postings(Section::Abstract, "aspirin")[0].tf, 2);
        assert_eq!(idx.field_length(Section::Abstract, "1"), Some(6));
        assert_eq!(idx.field_length(Section::Abstract, "2"), Some(6));
        assert_eq!(idx.field_length(Section::Abstract, "3"), Some(2));
        assert!((idx.avg_field_length(Section::Abstract) - 14.0 / 3.0).abs() < 1e-12);
        assert!((idx.avg_field_length(Section::Title) - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_term_and_unknown_field() {
        let idx = toy();
        let ast = parse_query_string("zebrafish", DefaultOperator::And).unwrap();
        assert!(idx.search(&ast, &fields(), 10).unwrap().is_empty());
        let err = idx.search(&ast, &[FieldSpec::new("body", 1.0)], 10).unwrap_err();
        assert!(matches!(err, IndexError::UnknownField(f) if f == "body"));
    }

    #[test]
    fn phrase_requires_adjacency() {
        let idx = toy();
        let hits = idx
            .search(&parse_query_string("\"heart attack\"", DefaultOperator::And).unwrap(), &fields(), 10)
            .unwrap();
        assert_eq!(ids(&hits), vec!["2"]);
        let hits = idx
            .search(&parse_query_string("\"attack heart\"", DefaultOperator::And).unwrap(), &fields(), 10)
            .unwrap();
        assert!(hits.is_empty());
    }

    #[test]
    fn stopword_leaves_are_neutral() {
        let idx = toy();
        let with = idx
            .search(&parse_query_string("ibuprofen the", DefaultOperator::And).unwrap(), &fields(), 10)
            .unwrap();
        let without = idx
            .search(&parse_query_string("ibuprofen", DefaultOperator::And).unwrap(), &fields(), 10)
            .unwrap();
        assert_eq!(with, without);
        let only = idx
            .search(&parse_query_string("the", DefaultOperator::And).unwrap(), &fields(), 10)
            .unwrap();
        assert!(only.is_empty());
    }

    #[test]
    fn title_boost_wins_over_equal_abstract_match() {
        let idx = build_index(
            vec![
                Document::new("A", "kinase", "unrelated words here"),
                Document::new("B", "unrelated words here", "kinase"),
                Document::new("C", "filler", "filler"),
            ],
            AnalyzerConfig::english(),
        )
        .unwrap();
        let ast = parse_query_string("kinase", DefaultOperator::And).unwrap();
        let boosted = [FieldSpec::new("title", 10.0), FieldSpec::new("abstract", 1.0)];
        assert_eq!(ids(&idx.search(&ast, &boosted, 10).unwrap()), vec!["A", "B"]);
    }

    #[test]
    fn size_truncates_and_ties_break_on_id() {
        let docs = (0..5).map(|i| Document::new(format!("d{i}"), "same words", "")).collect::<Vec<_>>();
        let idx = build_index(docs, AnalyzerConfig::english()).unwrap();
        let ast = parse_query_string("words", DefaultOperator::And).unwrap();
        assert_eq!(ids(&idx.search(&ast, &fields(), 3).unwrap()), vec!["d0", "d1", "d2"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = build_index(vec![Document::new("x", "a", ""), Document::new("x", "b", "")], AnalyzerConfig::english());
        assert!(matches!(err, Err(IndexError::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn merged_search_dedups() {
        let a = toy();
        let b = build_index(vec![Document::new("9", "Aspirin trial", "")], AnalyzerConfig::english()).unwrap();
        let ast = parse_query_string("aspirin", DefaultOperator::And).unwrap();
        let hits = search_all(&[&a, &b, &a], &ast, &fields(), 50).unwrap();
        let mut seen = ids(&hits);
        assert_eq!(seen.len(), 3);
        seen.sort();
        assert_eq!(seen, vec!["1", "2", "9"]);
    }
}
