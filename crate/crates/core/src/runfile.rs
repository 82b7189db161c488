//! Submission run files: emission, loading and validation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{
    doc_id_from_url, doc_url, io_err, CorpusError, DocumentLookup, ExactAnswer, Question, QuestionType, Snippet,
};

pub const MAX_DOCUMENTS: usize = 50;
pub const MAX_SNIPPETS: usize = 10;

/// One question's submission. `documents`/`snippets` are absent for
/// answer-only phases.
#[derive(Debug, Clone, PartialEq)]
pub struct RunQuestion {
    pub id: String,
    pub qtype: Option<QuestionType>,
    pub documents: Option<Vec<String>>,
    pub snippets: Option<Vec<Snippet>>,
    pub exact_answer: Option<ExactAnswer>,
    pub ideal_answer: Option<String>,
}

impl RunQuestion {
    pub fn new(id: impl Into<String>, qtype: QuestionType) -> Self {
        Self {
            id: id.into(),
            qtype: Some(qtype),
            documents: None,
            snippets: None,
            exact_answer: None,
            ideal_answer: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub questions: Vec<RunQuestion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub question_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.question_id, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunFileError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("run file has {} violation(s):\n{}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

#[derive(Serialize, Deserialize)]
struct WireRunQuestion {
    id: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    qtype: Option<QuestionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    documents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    snippets: Option<Vec<Snippet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact_answer: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ideal_answer: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct WireRun {
    questions: Vec<WireRunQuestion>,
}

impl RunFile {
    /// Invariants that hold independently of any question file. Snippets are
    /// checked against their documents when `docs` is supplied.
    pub fn intrinsic_violations(&self, docs: Option<&dyn DocumentLookup>) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for q in &self.questions {
            let mut push = |message: String| {
                out.push(Violation {
                    question_id: q.id.clone(),
                    message,
                })
            };
            if q.id.is_empty() {
                push("empty question id".into());
            }
            if !seen.insert(q.id.as_str()) {
                push("duplicate question id".into());
            }
            let doc_set: HashSet<&str> = q.documents.iter().flatten().map(String::as_str).collect();
            if let Some(documents) = &q.documents {
                if documents.len() > MAX_DOCUMENTS {
                    push(format!("documents cap {MAX_DOCUMENTS} exceeded ({})", documents.len()));
                }
                if documents.iter().any(|d| d.is_empty()) {
                    push("empty document id".into());
                }
                if doc_set.len() != documents.len() {
                    push("duplicate document in documents list".into());
                }
            }
            if let Some(snippets) = &q.snippets {
                if snippets.len() > MAX_SNIPPETS {
                    push(format!("snippets cap {MAX_SNIPPETS} exceeded ({})", snippets.len()));
                }
                for s in snippets {
                    if !doc_set.contains(s.doc_id.as_str()) {
                        push(format!("snippet document {} absent from documents", s.doc_id));
                    }
                    if s.begin >= s.end {
                        push(format!("snippet range [{}, {}) is empty", s.begin, s.end));
                    } else if s.text.chars().count() != s.end - s.begin {
                        push(format!(
                            "snippet text length {} differs from range [{}, {})",
                            s.text.chars().count(),
                            s.begin,
                            s.end
                        ));
                    }
                    if let Some(lookup) = docs {
                        match lookup.document(&s.doc_id) {
                            Some(doc) => {
                                if let Err(m) = s.check_against(doc) {
                                    push(m);
                                }
                            }
                            None => push(format!("snippet document {} not found in corpus", s.doc_id)),
                        }
                    }
                }
            }
            if let Some(answer) = &q.exact_answer {
                for m in answer.violations() {
                    push(m);
                }
                if let Some(t) = q.qtype {
                    if answer.qtype() != t {
                        push(format!("exact_answer variant {} does not match type {t}", answer.qtype()));
                    }
                }
            }
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        let wire = WireRun {
            questions: self
                .questions
                .iter()
                .map(|q| WireRunQuestion {
                    id: q.id.clone(),
                    qtype: q.qtype,
                    documents: q.documents.as_ref().map(|d| d.iter().map(|id| doc_url(id)).collect()),
                    snippets: q.snippets.clone(),
                    exact_answer: q.exact_answer.as_ref().map(ExactAnswer::to_json),
                    ideal_answer: q.ideal_answer.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&wire).expect("run files always serialize");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<RunFile, CorpusError> {
        let wire: WireRun = serde_json::from_str(text).map_err(|e| CorpusError::Json {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let mut questions = Vec::with_capacity(wire.questions.len());
        for (index, w) in wire.questions.into_iter().enumerate() {
            let exact_answer = match w.exact_answer {
                None | Some(Value::Null) => None,
                Some(v) => {
                    // Without a type, string answers are yes/no and arrays are lists.
                    let qtype = w.qtype.unwrap_or(if v.is_string() {
                        QuestionType::Yesno
                    } else {
                        QuestionType::List
                    });
                    Some(
                        ExactAnswer::from_json(qtype, &v)
                            .map_err(|message| CorpusError::InvalidQuestion { index, message })?,
                    )
                }
            };
            questions.push(RunQuestion {
                id: w.id,
                qtype: w.qtype,
                documents: w.documents.map(|d| d.iter().map(|u| doc_id_from_url(u)).collect()),
                snippets: w.snippets,
                exact_answer,
                ideal_answer: w.ideal_answer,
            });
        }
        Ok(RunFile { questions })
    }

    pub fn get(&self, id: &str) -> Option<&RunQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// Lists every violated run-file invariant. Never fails.
pub fn validate_run_file(run: &RunFile, questions: &[Question], docs: Option<&dyn DocumentLookup>) -> Vec<Violation> {
    let mut out = run.intrinsic_violations(docs);
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    for rq in &run.questions {
        let Some(q) = by_id.get(rq.id.as_str()) else {
            out.push(Violation {
                question_id: rq.id.clone(),
                message: "no question with this id".into(),
            });
            continue;
        };
        if let Some(t) = rq.qtype {
            if t != q.qtype {
                out.push(Violation {
                    question_id: rq.id.clone(),
                    message: format!("run type {t} differs from question type {}", q.qtype),
                });
            }
        }
        if let Some(answer) = &rq.exact_answer {
            if answer.qtype() != q.qtype {
                out.push(Violation {
                    question_id: rq.id.clone(),
                    message: format!(
                        "exact_answer variant {} does not match question type {}",
                        answer.qtype(),
                        q.qtype
                    ),
                });
            }
        }
    }
    out
}

/// Validates and writes a run file. Identical runs produce identical bytes.
pub fn write_run_file(run: &RunFile, path: &Path, docs: Option<&dyn DocumentLookup>) -> Result<(), RunFileError> {
    let violations = run.intrinsic_violations(docs);
    if !violations.is_empty() {
        return Err(RunFileError::Invalid(violations));
    }
    std::fs::write(path, run.to_json_string()).map_err(io_err(path))?;
    Ok(())
}

pub fn load_run_file(path: &Path) -> Result<RunFile, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    RunFile::from_json_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Section};

    fn corpus() -> HashMap<String, Document> {
        [
            Document::new("1", "Aspirin and pain", "Aspirin reduces pain in adults."),
            Document::new("2", "Ibuprofen", "Ibuprofen is an NSAID."),
        ]
        .into_iter()
        .map(|d| (d.doc_id.clone(), d))
        .collect()
    }

    fn sample_run() -> RunFile {
        let docs = corpus();
        let mut q = RunQuestion::new("q1", QuestionType::Factoid);
        q.documents = Some(vec!["1".into(), "2".into()]);
        q.snippets = Some(vec![Snippet::from_document(&docs["1"], Section::Abstract, 0, 7).unwrap()]);
        q.exact_answer = Some(ExactAnswer::Factoid(vec![vec!["aspirin".into()]]));
        q.ideal_answer = Some("Aspirin.".into());
        RunFile { questions: vec![q] }
    }

    #[test]
    fn documents_serialize_as_urls_in_order() {
        let text = sample_run().to_json_string();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(
            v["questions"][0]["documents"],
            serde_json::json!([
                "http://www.ncbi.nlm.nih.gov/pubmed/1",
                "http://www.ncbi.nlm.nih.gov/pubmed/2"
            ])
        );
    }

    #[test]
    fn write_is_byte_identical_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let run = sample_run();
        let docs = corpus();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        write_run_file(&run, &a, Some(&docs)).unwrap();
        write_run_file(&run, &b, Some(&docs)).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(load_run_file(&a).unwrap(), run);
    }

    #[test]
    fn snippet_past_section_end_is_rejected() {
        let docs = corpus();
        let mut run = sample_run();
        let s = &mut run.questions[0].snippets.as_mut().unwrap()[0];
        s.begin = 20;
        s.end = 40;
        s.text = "x".repeat(20);
        let dir = tempfile::tempdir().unwrap();
        let err = write_run_file(&run, &dir.path().join("r.json"), Some(&docs)).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn factoid_cap_violation() {
        let mut run = sample_run();
        run.questions[0].exact_answer = Some(ExactAnswer::Factoid((0..7).map(|i| vec![format!("e{i}")]).collect()));
        let qs = vec![Question::new("q1", "?", QuestionType::Factoid)];
        let v = validate_run_file(&run, &qs, None);
        assert!(v.iter().any(|v| v.message.contains("factoid cap 5 exceeded")), "{v:?}");
    }

    #[test]
    fn list_of_200_is_within_cap() {
        let mut run = sample_run();
        run.questions[0].qtype = Some(QuestionType::List);
        run.questions[0].exact_answer = Some(ExactAnswer::List((0..200).map(|i| vec![format!("e{i}")]).collect()));
        let qs = vec![Question::new("q1", "?", QuestionType::List)];
        assert!(validate_run_file(&run, &qs, None).is_empty());
    }

    #[test]
    fn snippet_document_must_be_listed() {
        let mut run = sample_run();
        run.questions[0].documents = Some(vec!["2".into()]);
        let qs = vec![Question::new("q1", "?", QuestionType::Factoid)];
        let v = validate_run_file(&run, &qs, None);
        assert!(v.iter().any(|v| v.message.contains("absent from documents")));
    }

    #[test]
    fn unknown_question_and_variant_mismatch() {
        let run = sample_run();
        let v = validate_run_file(&run, &[Question::new("other", "?", QuestionType::Factoid)], None);
        assert!(v.iter().any(|v| v.message.contains("no question")));
        let v = validate_run_file(&run, &[Question::new("q1", "?", QuestionType::Yesno)], None);
        assert!(v.iter().any(|v| v.message.contains("does not match")));
    }
}
