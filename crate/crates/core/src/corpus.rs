//! Domain types and ingestion for corpora, question files and feedback files.
//!
//! Interchange files follow the challenge layout: a top-level object with a
//! `"questions"` array. Snippet offsets are Unicode code points, end-exclusive.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Prefix used for document URLs in run files.
pub const PUBMED_URL_PREFIX: &str = "http://www.ncbi.nlm.nih.gov/pubmed/";

pub const FACTOID_CAP: usize = 5;
pub const LIST_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid JSON in {path}: {message}")]
    Json { path: String, message: String },
    #[error("question #{index}: {message}")]
    InvalidQuestion { index: usize, message: String },
    #[error("unknown question type {0:?}")]
    UnknownType(String),
    #[error("feedback for question {id}: {message}")]
    InvalidFeedback { id: String, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A corpus record: a title and an abstract indexed as separate fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
        }
    }

    pub fn section(&self, section: Section) -> &str {
        match section {
            Section::Title => &self.title,
            Section::Abstract => &self.abstract_text,
        }
    }
}

/// Anything that can resolve a document id to its text.
pub trait DocumentLookup: Sync {
    fn document(&self, doc_id: &str) -> Option<&Document>;
}

impl DocumentLookup for HashMap<String, Document> {
    fn document(&self, doc_id: &str) -> Option<&Document> {
        self.get(doc_id)
    }
}

impl<T: DocumentLookup> DocumentLookup for [T] {
    fn document(&self, doc_id: &str) -> Option<&Document> {
        self.iter().find_map(|l| l.document(doc_id))
    }
}

impl<T: DocumentLookup> DocumentLookup for Vec<T> {
    fn document(&self, doc_id: &str) -> Option<&Document> {
        self.as_slice().document(doc_id)
    }
}

impl<T: DocumentLookup + ?Sized> DocumentLookup for &T {
    fn document(&self, doc_id: &str) -> Option<&Document> {
        (**self).document(doc_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Title,
    Abstract,
}

impl Section {
    pub const ALL: [Section; 2] = [Section::Title, Section::Abstract];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Title => "title",
            Section::Abstract => "abstract",
        }
    }

    pub fn parse(s: &str) -> Option<Section> {
        match s {
            "title" => Some(Section::Title),
            // Older challenge files name the abstract "sections.0".
            "abstract" | "sections.0" => Some(Section::Abstract),
            _ => None,
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Number of code points in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Code-point slice `[begin, end)` of `s`, or `None` when out of range.
pub fn char_slice(s: &str, begin: usize, end: usize) -> Option<&str> {
    if begin > end {
        return None;
    }
    let mut start_byte = None;
    let mut count = 0;
    for (byte, _) in s.char_indices() {
        if count == begin {
            start_byte = Some(byte);
        }
        if count == end {
            return start_byte.map(|b| &s[b..byte]);
        }
        count += 1;
    }
    if count == begin {
        start_byte = Some(s.len());
    }
    if count == end {
        return start_byte.map(|b| &s[b..]);
    }
    None
}

pub fn doc_url(doc_id: &str) -> String {
    format!("{PUBMED_URL_PREFIX}{doc_id}")
}

/// Accepts either a bare id or a PubMed URL and returns the id.
pub fn doc_id_from_url(value: &str) -> String {
    let trimmed = value.trim().trim_end_matches('/');
    for prefix in [
        PUBMED_URL_PREFIX,
        "https://www.ncbi.nlm.nih.gov/pubmed/",
        "http://pubmed.ncbi.nlm.nih.gov/",
        "https://pubmed.ncbi.nlm.nih.gov/",
    ] {
        if let Some(rest) = trimmed.strip_prefix(prefix) {
            return rest.to_string();
        }
    }
    trimmed.to_string()
}

/// A verbatim span of a document section.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Snippet {
    pub doc_id: String,
    pub section: Section,
    pub begin: usize,
    pub end: usize,
    pub text: String,
}

impl Snippet {
    /// Builds a snippet by slicing the section text; `None` if the range is
    /// empty or out of bounds.
    pub fn from_document(doc: &Document, section: Section, begin: usize, end: usize) -> Option<Snippet> {
        if begin >= end {
            return None;
        }
        let text = char_slice(doc.section(section), begin, end)?;
        Some(Snippet {
            doc_id: doc.doc_id.clone(),
            section,
            begin,
            end,
            text: text.to_string(),
        })
    }

    /// Checks the slice invariant against the source document.
    pub fn check_against(&self, doc: &Document) -> Result<(), String> {
        let section_text = doc.section(self.section);
        let len = char_len(section_text);
        if self.begin >= self.end {
            return Err(format!("snippet range [{}, {}) is empty", self.begin, self.end));
        }
        if self.end > len {
            return Err(format!(
                "snippet end {} exceeds {} length {} of document {}",
                self.end, self.section, len, self.doc_id
            ));
        }
        match char_slice(section_text, self.begin, self.end) {
            Some(s) if s == self.text => Ok(()),
            _ => Err(format!(
                "snippet text does not match {} [{}, {}) of document {}",
                self.section, self.begin, self.end, self.doc_id
            )),
        }
    }

    pub fn key(&self) -> (&str, Section, usize, usize) {
        (&self.doc_id, self.section, self.begin, self.end)
    }

    /// True when both spans share at least one character of the same section.
    pub fn overlaps(&self, other: &Snippet) -> bool {
        self.doc_id == other.doc_id
            && self.section == other.section
            && self.begin < other.end
            && other.begin < self.end
    }
}

#[derive(Serialize, Deserialize)]
struct WireSnippet {
    document: String,
    text: String,
    #[serde(rename = "offsetInBeginSection")]
    begin: usize,
    #[serde(rename = "offsetInEndSection")]
    end: usize,
    #[serde(rename = "beginSection")]
    begin_section: String,
    #[serde(rename = "endSection")]
    end_section: String,
}

impl Serialize for Snippet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WireSnippet {
            document: doc_url(&self.doc_id),
            text: self.text.clone(),
            begin: self.begin,
            end: self.end,
            begin_section: self.section.as_str().to_string(),
            end_section: self.section.as_str().to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Snippet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = WireSnippet::deserialize(deserializer)?;
        let section = Section::parse(&wire.begin_section)
            .ok_or_else(|| D::Error::custom(format!("unknown section {:?}", wire.begin_section)))?;
        if Section::parse(&wire.end_section) != Some(section) {
            return Err(D::Error::custom("snippets spanning two sections are not supported"));
        }
        Ok(Snippet {
            doc_id: doc_id_from_url(&wire.document),
            section,
            begin: wire.begin,
            end: wire.end,
            text: wire.text,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Yesno,
    Factoid,
    List,
    Summary,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Yesno => "yesno",
            QuestionType::Factoid => "factoid",
            QuestionType::List => "list",
            QuestionType::Summary => "summary",
        }
    }

    pub fn parse(s: &str) -> Result<QuestionType, CorpusError> {
        match s {
            "yesno" => Ok(QuestionType::Yesno),
            "factoid" => Ok(QuestionType::Factoid),
            "list" => Ok(QuestionType::List),
            "summary" => Ok(QuestionType::Summary),
            other => Err(CorpusError::UnknownType(other.to_string())),
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structured answer. Factoid and list answers are ranked entities, each a
/// list of synonyms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExactAnswer {
    YesNo(String),
    Factoid(Vec<Vec<String>>),
    List(Vec<Vec<String>>),
}

impl ExactAnswer {
    pub fn qtype(&self) -> QuestionType {
        match self {
            ExactAnswer::YesNo(_) => QuestionType::Yesno,
            ExactAnswer::Factoid(_) => QuestionType::Factoid,
            ExactAnswer::List(_) => QuestionType::List,
        }
    }

    pub fn entities(&self) -> &[Vec<String>] {
        match self {
            ExactAnswer::YesNo(_) => &[],
            ExactAnswer::Factoid(e) | ExactAnswer::List(e) => e,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            ExactAnswer::YesNo(s) => Value::String(s.clone()),
            ExactAnswer::Factoid(e) | ExactAnswer::List(e) => {
                serde_json::to_value(e).expect("string lists always serialize")
            }
        }
    }

    /// Interprets a JSON value for the given question type. Factoid and list
    /// values may be flat string arrays or arrays of synonym arrays.
    pub fn from_json(qtype: QuestionType, value: &Value) -> Result<ExactAnswer, String> {
        match qtype {
            QuestionType::Yesno => match value {
                Value::String(s) => Ok(ExactAnswer::YesNo(s.trim().to_lowercase())),
                _ => Err("yesno exact_answer must be a string".into()),
            },
            QuestionType::Factoid => entity_lists(value).map(ExactAnswer::Factoid),
            QuestionType::List => entity_lists(value).map(ExactAnswer::List),
            QuestionType::Summary => Err("summary questions carry no exact_answer".into()),
        }
    }

    /// Violations of the answer's own invariants.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ExactAnswer::YesNo(s) => {
                if s != "yes" && s != "no" {
                    out.push(format!("yesno answer {s:?} is not \"yes\" or \"no\""));
                }
            }
            ExactAnswer::Factoid(e) | ExactAnswer::List(e) => {
                let (name, cap) = if matches!(self, ExactAnswer::Factoid(_)) {
                    ("factoid", FACTOID_CAP)
                } else {
                    ("list", LIST_CAP)
                };
                if e.len() > cap {
                    out.push(format!("{name} cap {cap} exceeded ({} entities)", e.len()));
                }
                if e.iter().any(|syn| syn.is_empty()) {
                    out.push(format!("{name} answer contains an empty synonym list"));
                }
                if e.iter().flatten().any(|s| s.trim().is_empty()) {
                    out.push(format!("{name} answer contains an empty string"));
                }
            }
        }
        out
    }
}

fn entity_lists(value: &Value) -> Result<Vec<Vec<String>>, String> {
    let items = match value {
        Value::Array(items) => items,
        Value::String(s) => return Ok(vec![vec![s.clone()]]),
        _ => return Err("exact_answer must be an array".into()),
    };
    items
        .iter()
        .map(|item| match item {
            Value::String(s) => Ok(vec![s.clone()]),
            Value::Array(syns) => syns
                .iter()
                .map(|s| s.as_str().map(str::to_string).ok_or_else(|| "synonyms must be strings".to_string()))
                .collect(),
            _ => Err("exact_answer entries must be strings or string arrays".into()),
        })
        .collect()
}

/// A challenge question with optional gold annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub body: String,
    pub qtype: QuestionType,
    pub gold_documents: Option<Vec<String>>,
    pub gold_snippets: Option<Vec<Snippet>>,
    pub gold_exact: Option<ExactAnswer>,
    pub gold_ideal: Option<String>,
    /// Synergy rounds mark questions that should be answered.
    pub answer_ready: Option<bool>,
}

impl Question {
    pub fn new(id: impl Into<String>, body: impl Into<String>, qtype: QuestionType) -> Self {
        Self {
            id: id.into(),
            body: body.into(),
            qtype,
            gold_documents: None,
            gold_snippets: None,
            gold_exact: None,
            gold_ideal: None,
            answer_ready: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireQuestion {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    body: Option<String>,
    #[serde(rename = "type", default)]
    qtype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    documents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    snippets: Option<Vec<Snippet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact_answer: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ideal_answer: Option<Value>,
    #[serde(rename = "answerReady", default, skip_serializing_if = "Option::is_none")]
    answer_ready: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct WireQuestions<T> {
    questions: Vec<T>,
}

fn question_from_wire(index: usize, wire: WireQuestion) -> Result<Question, CorpusError> {
    let invalid = |message: String| CorpusError::InvalidQuestion { index, message };
    let id = wire.id.filter(|s| !s.is_empty()).ok_or_else(|| invalid("missing id".into()))?;
    let body = wire.body.ok_or_else(|| invalid(format!("question {id}: missing body")))?;
    let type_str = wire.qtype.ok_or_else(|| invalid(format!("question {id}: missing type")))?;
    let qtype = QuestionType::parse(&type_str)?;
    let gold_exact = match wire.exact_answer {
        None | Some(Value::Null) => None,
        Some(v) if qtype == QuestionType::Summary => {
            log::debug!("ignoring exact_answer {v} on summary question {id}");
            None
        }
        Some(v) => Some(ExactAnswer::from_json(qtype, &v).map_err(|m| invalid(format!("question {id}: {m}")))?),
    };
    let gold_ideal = match wire.ideal_answer {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(Value::Array(items)) => items.first().and_then(|v| v.as_str()).map(str::to_string),
        Some(_) => return Err(invalid(format!("question {id}: ideal_answer must be a string"))),
    };
    Ok(Question {
        gold_documents: wire
            .documents
            .map(|docs| docs.iter().map(|d| doc_id_from_url(d)).collect()),
        gold_snippets: wire.snippets,
        gold_exact,
        gold_ideal,
        answer_ready: wire.answer_ready,
        id,
        body,
        qtype,
    })
}

/// Parses a questions document from a string.
pub fn parse_questions(text: &str, origin: &str) -> Result<Vec<Question>, CorpusError> {
    let wire: WireQuestions<WireQuestion> = serde_json::from_str(text).map_err(|e| CorpusError::Json {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(wire.questions.len());
    for (index, w) in wire.questions.into_iter().enumerate() {
        let q = question_from_wire(index, w)?;
        if !seen.insert(q.id.clone()) {
            return Err(CorpusError::InvalidQuestion {
                index,
                message: format!("duplicate question id {:?}", q.id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_questions(&text, &path.display().to_string())
}

/// Serializes questions (including gold fields) in the challenge layout.
pub fn questions_to_json(questions: &[Question]) -> String {
    let wire = WireQuestions {
        questions: questions
            .iter()
            .map(|q| WireQuestion {
                id: Some(q.id.clone()),
                body: Some(q.body.clone()),
                qtype: Some(q.qtype.as_str().to_string()),
                documents: q
                    .gold_documents
                    .as_ref()
                    .map(|d| d.iter().map(|id| doc_url(id)).collect()),
                snippets: q.gold_snippets.clone(),
                exact_answer: q.gold_exact.as_ref().map(ExactAnswer::to_json),
                ideal_answer: q.gold_ideal.clone().map(Value::String),
                answer_ready: q.answer_ready,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&wire).expect("questions always serialize")
}

/// Streams documents from a line-delimited corpus file.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line_no = self.line_no;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(CorpusError::MalformedLine {
                        line: line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = match serde_json::from_str(&line) {
                Ok(d) => d,
                Err(e) => {
                    return Some(Err(CorpusError::MalformedLine {
                        line: line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if doc.doc_id.is_empty() {
                return Some(Err(CorpusError::MalformedLine {
                    line: line_no,
                    message: "empty id".into(),
                }));
            }
            if doc.title.is_empty() && doc.abstract_text.is_empty() {
                return Some(Err(CorpusError::MalformedLine {
                    line: line_no,
                    message: format!("document {} has neither title nor abstract", doc.doc_id),
                }));
            }
            if !self.seen.insert(doc.doc_id.clone()) {
                return Some(Err(CorpusError::DuplicateId(doc.doc_id)));
            }
            return Some(Ok(doc));
        }
    }
}

pub fn open_corpus(path: &Path) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(CorpusReader::new(BufReader::new(file)))
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    open_corpus(path)?.collect()
}

/// Expert feedback for one question from a previous Synergy round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackRecord {
    pub question_id: String,
    pub relevant_documents: BTreeSet<String>,
    pub irrelevant_documents: BTreeSet<String>,
    pub relevant_snippets: Vec<Snippet>,
    pub irrelevant_snippets: Vec<Snippet>,
}

#[derive(Serialize, Deserialize)]
struct WireFeedback {
    id: String,
    #[serde(default)]
    relevant_documents: Vec<String>,
    #[serde(default)]
    irrelevant_documents: Vec<String>,
    #[serde(default)]
    relevant_snippets: Vec<Snippet>,
    #[serde(default)]
    irrelevant_snippets: Vec<Snippet>,
}

pub fn parse_feedback(text: &str, origin: &str) -> Result<HashMap<String, FeedbackRecord>, CorpusError> {
    let wire: WireQuestions<WireFeedback> = serde_json::from_str(text).map_err(|e| CorpusError::Json {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut out = HashMap::new();
    for w in wire.questions {
        let record = FeedbackRecord {
            relevant_documents: w.relevant_documents.iter().map(|d| doc_id_from_url(d)).collect(),
            irrelevant_documents: w.irrelevant_documents.iter().map(|d| doc_id_from_url(d)).collect(),
            relevant_snippets: w.relevant_snippets,
            irrelevant_snippets: w.irrelevant_snippets,
            question_id: w.id.clone(),
        };
        if let Some(both) = record.relevant_documents.intersection(&record.irrelevant_documents).next() {
            return Err(CorpusError::InvalidFeedback {
                id: w.id,
                message: format!("document {both} is marked both relevant and irrelevant"),
            });
        }
        if out.insert(w.id.clone(), record).is_some() {
            return Err(CorpusError::InvalidFeedback {
                id: w.id,
                message: "duplicate feedback entry".into(),
            });
        }
    }
    Ok(out)
}

pub fn load_feedback(path: &Path) -> Result<HashMap<String, FeedbackRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_feedback(&text, &path.display().to_string())
}

pub fn feedback_to_json(records: &[FeedbackRecord]) -> String {
    let wire = WireQuestions {
        questions: records
            .iter()
            .map(|r| WireFeedback {
                id: r.question_id.clone(),
                relevant_documents: r.relevant_documents.iter().map(|d| doc_url(d)).collect(),
                irrelevant_documents: r.irrelevant_documents.iter().map(|d| doc_url(d)).collect(),
                relevant_snippets: r.relevant_snippets.clone(),
                irrelevant_snippets: r.irrelevant_snippets.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&wire).expect("feedback always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str) -> Vec<Result<Document, CorpusError>> {
        CorpusReader::new(Cursor::new(text.to_string())).collect()
    }

    #[test]
    fn corpus_line_maps_fields() {
        let docs = read("{\"id\":\"123\",\"title\":\"T\",\"abstract\":\"A\"}\n");
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].as_ref().unwrap(), &Document::new("123", "T", "A"));
    }

    #[test]
    fn empty_corpus_is_empty() {
        assert!(read("").is_empty());
    }

    #[test]
    fn duplicate_id_is_reported() {
        let docs = read("{\"id\":\"9\",\"title\":\"a\"}\n{\"id\":\"9\",\"title\":\"b\"}\n");
        assert!(docs[0].is_ok());
        match &docs[1] {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let docs = read("{\"id\":\"1\",\"title\":\"a\"}\n\nnot json\n");
        match &docs[1] {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(*line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn question_types_and_gold() {
        let text = r#"{"questions":[
            {"id":"a","body":"Is it?","type":"yesno","exact_answer":"yes"},
            {"id":"b","body":"Describe.","type":"summary"}
        ]}"#;
        let qs = parse_questions(text, "inline").unwrap();
        assert_eq!(qs[0].qtype, QuestionType::Yesno);
        assert_eq!(qs[0].gold_exact, Some(ExactAnswer::YesNo("yes".into())));
        assert_eq!(qs[1].qtype, QuestionType::Summary);
        assert_eq!(qs[1].gold_exact, None);
    }

    #[test]
    fn unknown_question_type() {
        let text = r#"{"questions":[{"id":"a","body":"?","type":"opinion"}]}"#;
        assert!(matches!(parse_questions(text, "x"), Err(CorpusError::UnknownType(t)) if t == "opinion"));
    }

    #[test]
    fn missing_id_or_body() {
        let text = r#"{"questions":[{"body":"?","type":"list"}]}"#;
        assert!(matches!(parse_questions(text, "x"), Err(CorpusError::InvalidQuestion { index: 0, .. })));
        let text = r#"{"questions":[{"id":"q","type":"list"}]}"#;
        assert!(parse_questions(text, "x").is_err());
    }

    #[test]
    fn flat_factoid_answer_becomes_synonym_lists() {
        let v: Value = serde_json::json!(["BRCA1", ["TP53", "p53"]]);
        let a = ExactAnswer::from_json(QuestionType::Factoid, &v).unwrap();
        assert_eq!(
            a,
            ExactAnswer::Factoid(vec![vec!["BRCA1".into()], vec!["TP53".into(), "p53".into()]])
        );
    }

    #[test]
    fn char_slices_use_code_points() {
        let s = "αβγ abc";
        assert_eq!(char_slice(s, 0, 2), Some("αβ"));
        assert_eq!(char_slice(s, 4, 7), Some("abc"));
        assert_eq!(char_slice(s, 7, 7), Some(""));
        assert_eq!(char_slice(s, 5, 8), None);
    }

    #[test]
    fn snippet_wire_format() {
        let doc = Document::new("42", "Title here", "Body text.");
        let snip = Snippet::from_document(&doc, Section::Abstract, 0, 4).unwrap();
        let json = serde_json::to_value(&snip).unwrap();
        assert_eq!(json["document"], "http://www.ncbi.nlm.nih.gov/pubmed/42");
        assert_eq!(json["offsetInBeginSection"], 0);
        assert_eq!(json["offsetInEndSection"], 4);
        assert_eq!(json["beginSection"], "abstract");
        let back: Snippet = serde_json::from_value(json).unwrap();
        assert_eq!(back, snip);
    }

    #[test]
    fn feedback_sets_must_be_disjoint() {
        let text = r#"{"questions":[{"id":"q","relevant_documents":["1"],"irrelevant_documents":["http://www.ncbi.nlm.nih.gov/pubmed/1"]}]}"#;
        assert!(matches!(parse_feedback(text, "f"), Err(CorpusError::InvalidFeedback { .. })));
    }
}
