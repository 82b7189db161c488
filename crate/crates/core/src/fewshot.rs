//! Few-shot example sets: sampling from training data, persistence as
//! fine-tuning style JSONL, and splicing into live prompts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{DocumentLookup, ExactAnswer, Question, QuestionType, Snippet};
use crate::index::{search_all, InvertedIndex};
use crate::llm::{roles_alternate, ChatMessage, Role};
use crate::prompts::{Prompts, TemplateName};
use crate::query::{parse_query_string, DefaultOperator, FieldSpec};

pub const DEFAULT_SAMPLE_SIZE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    QueryGeneration,
    SnippetExtraction,
    SnippetRerank,
    SummaryQa,
    YesnoQa,
    FactoidQa,
    ListQa,
}

impl ExampleKind {
    /// The six sets sampled from training data.
    pub const SUB_PROBLEMS: [ExampleKind; 6] = [
        ExampleKind::SnippetExtraction,
        ExampleKind::SnippetRerank,
        ExampleKind::SummaryQa,
        ExampleKind::YesnoQa,
        ExampleKind::FactoidQa,
        ExampleKind::ListQa,
    ];

    pub const ALL: [ExampleKind; 7] = [
        ExampleKind::QueryGeneration,
        ExampleKind::SnippetExtraction,
        ExampleKind::SnippetRerank,
        ExampleKind::SummaryQa,
        ExampleKind::YesnoQa,
        ExampleKind::FactoidQa,
        ExampleKind::ListQa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExampleKind::QueryGeneration => "query_generation",
            ExampleKind::SnippetExtraction => "snippet_extraction",
            ExampleKind::SnippetRerank => "snippet_rerank",
            ExampleKind::SummaryQa => "summary_qa",
            ExampleKind::YesnoQa => "yesno_qa",
            ExampleKind::FactoidQa => "factoid_qa",
            ExampleKind::ListQa => "list_qa",
        }
    }

    pub fn parse(s: &str) -> Option<ExampleKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Answer set for a question type.
    pub fn for_answer(qtype: QuestionType) -> ExampleKind {
        match qtype {
            QuestionType::Yesno => ExampleKind::YesnoQa,
            QuestionType::Factoid => ExampleKind::FactoidQa,
            QuestionType::List => ExampleKind::ListQa,
            QuestionType::Summary => ExampleKind::SummaryQa,
        }
    }

    fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum FewshotError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("no eligible training questions for {0}")]
    NoEligible(&'static str),
    #[error("{kind} has {available} example(s), {requested} requested")]
    NotEnough {
        kind: &'static str,
        available: usize,
        requested: usize,
    },
    #[error("missing example set {0}")]
    MissingSet(&'static str),
    #[error("live prompt must end in a user turn")]
    BadLivePrompt,
}

/// One worked example: prompt turns followed by the ideal assistant turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub messages: Vec<ChatMessage>,
}

impl ExampleRecord {
    pub fn new(prompt: Vec<ChatMessage>, completion: impl Into<String>) -> Self {
        let mut messages = prompt;
        messages.push(ChatMessage::assistant(completion));
        Self { messages }
    }

    pub fn prompt(&self) -> &[ChatMessage] {
        &self.messages[..self.messages.len() - 1]
    }

    pub fn completion(&self) -> &ChatMessage {
        &self.messages[self.messages.len() - 1]
    }

    fn check(&self) -> Result<(), String> {
        match self.messages.last() {
            Some(m) if m.role == Role::Assistant => {}
            _ => return Err("record must end in an assistant turn".into()),
        }
        if !roles_alternate(self.prompt()) {
            return Err("prompt turns must alternate user/assistant and end in a user turn".into());
        }
        if self.messages.iter().any(|m| m.role != Role::System && m.content.is_empty()) {
            return Err("empty user or assistant turn".into());
        }
        Ok(())
    }

    /// The record's turns without any system message.
    fn turns(&self) -> impl Iterator<Item = &ChatMessage> {
        self.messages.iter().filter(|m| m.role != Role::System)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSet {
    pub kind: ExampleKind,
    pub records: Vec<ExampleRecord>,
}

impl ExampleSet {
    pub fn new(kind: ExampleKind) -> Self {
        Self {
            kind,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records always serialize") + "\n")
            .collect()
    }

    pub fn parse_jsonl(kind: ExampleKind, text: &str, origin: &str) -> Result<ExampleSet, FewshotError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| FewshotError::Record {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let record: ExampleRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            record.check().map_err(err)?;
            records.push(record);
        }
        Ok(ExampleSet { kind, records })
    }

    pub fn save(&self, path: &Path) -> Result<(), FewshotError> {
        std::fs::write(path, self.to_jsonl()).map_err(|source| FewshotError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(kind: ExampleKind, path: &Path) -> Result<ExampleSet, FewshotError> {
        let text = std::fs::read_to_string(path).map_err(|source| FewshotError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_jsonl(kind, &text, &path.display().to_string())
    }
}

/// Example sets by kind, loaded from `<kind>.jsonl` files.
#[derive(Debug, Clone, Default)]
pub struct ExampleStore {
    sets: BTreeMap<ExampleKind, ExampleSet>,
}

impl ExampleStore {
    pub fn insert(&mut self, set: ExampleSet) {
        self.sets.insert(set.kind, set);
    }

    pub fn get(&self, kind: ExampleKind) -> Option<&ExampleSet> {
        self.sets.get(&kind)
    }

    /// Loads whichever `<kind>.jsonl` files exist in `dir`.
    pub fn load_dir(dir: &Path) -> Result<ExampleStore, FewshotError> {
        let mut store = ExampleStore::default();
        for kind in ExampleKind::ALL {
            let path = dir.join(kind.file_name());
            if path.is_file() {
                store.insert(ExampleSet::load(kind, &path)?);
            }
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), FewshotError> {
        for set in self.sets.values() {
            set.save(&dir.join(set.kind.file_name()))?;
        }
        Ok(())
    }

    /// `live` with `k` examples of `kind` spliced in; `k = 0` needs no set.
    pub fn prepend(&self, kind: ExampleKind, k: usize, live: &[ChatMessage]) -> Result<Vec<ChatMessage>, FewshotError> {
        if k == 0 {
            return Ok(live.to_vec());
        }
        let set = self.get(kind).ok_or(FewshotError::MissingSet(kind.as_str()))?;
        prepend_examples(set, k, live)
    }
}

/// The first `k` records' turns in stored order, inserted after the live
/// prompt's system message and before its remaining turns.
pub fn prepend_examples(set: &ExampleSet, k: usize, live: &[ChatMessage]) -> Result<Vec<ChatMessage>, FewshotError> {
    if k > set.len() {
        return Err(FewshotError::NotEnough {
            kind: set.kind.as_str(),
            available: set.len(),
            requested: k,
        });
    }
    if !roles_alternate(live) {
        return Err(FewshotError::BadLivePrompt);
    }
    let (system, rest) = match live.first() {
        Some(m) if m.role == Role::System => (Some(m), &live[1..]),
        _ => (None, live),
    };
    let mut out: Vec<ChatMessage> = system.into_iter().cloned().collect();
    for record in &set.records[..k] {
        out.extend(record.turns().cloned());
    }
    out.extend(rest.iter().cloned());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SampleConfig {
    /// Records kept per sub-problem.
    pub per_set: usize,
    /// Shuffle eligible questions with `seed` before keeping the first
    /// `per_set`; otherwise input order is kept.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            per_set: DEFAULT_SAMPLE_SIZE,
            shuffle: false,
            seed: 0,
        }
    }
}

fn snippet_texts(snippets: &[Snippet]) -> Vec<&str> {
    snippets.iter().map(|s| s.text.as_str()).collect()
}

fn entities_json(e: &[Vec<String>]) -> String {
    let firsts: Vec<&str> = e.iter().filter_map(|syn| syn.first().map(String::as_str)).collect();
    json!({ "entities": firsts }).to_string()
}

fn answer_record(prompts: &Prompts, name: TemplateName, q: &Question, completion: String) -> ExampleRecord {
    let snippets = q.gold_snippets.as_deref().unwrap_or(&[]);
    let user = prompts.answer(name, &q.body, &snippet_texts(snippets), crate::pipeline::DEFAULT_IDEAL_MAX_WORDS);
    ExampleRecord::new(prompts.conversation(user), completion)
}

/// Extraction examples for one question: one record per gold document whose
/// text is available and whose gold snippets all verify against it.
fn extraction_records(prompts: &Prompts, q: &Question, docs: &dyn DocumentLookup) -> Vec<ExampleRecord> {
    let Some(snippets) = q.gold_snippets.as_deref() else {
        return Vec::new();
    };
    let mut by_doc: BTreeMap<&str, Vec<&Snippet>> = BTreeMap::new();
    let mut order = Vec::new();
    for s in snippets {
        if !by_doc.contains_key(s.doc_id.as_str()) {
            order.push(s.doc_id.as_str());
        }
        by_doc.entry(&s.doc_id).or_default().push(s);
    }
    let mut out = Vec::new();
    for doc_id in order {
        let Some(doc) = docs.document(doc_id) else { continue };
        let group = &by_doc[doc_id];
        if group.iter().any(|s| s.check_against(doc).is_err()) {
            log::debug!("{}: gold snippets do not verify against {doc_id}", q.id);
            continue;
        }
        let texts: Vec<&str> = group.iter().map(|s| s.text.as_str()).collect();
        let completion = json!({ "snippets": texts }).to_string();
        out.push(ExampleRecord::new(
            prompts.conversation(prompts.snippet_extraction(&q.body, doc)),
            completion,
        ));
    }
    out
}

/// A rerank example mixes a question's gold snippets with snippets of the next
/// eligible question as distractors; the ideal ranking lists the gold ones.
fn rerank_record(prompts: &Prompts, q: &Question, distractors: &[Snippet], rng: &mut ChaCha8Rng) -> ExampleRecord {
    let gold = q.gold_snippets.as_deref().unwrap_or(&[]);
    let gold = &gold[..gold.len().min(crate::runfile::MAX_SNIPPETS)];
    let mut pool: Vec<(bool, usize, &str)> = gold.iter().enumerate().map(|(i, s)| (true, i, s.text.as_str())).collect();
    pool.extend(distractors.iter().take(5).map(|s| (false, 0, s.text.as_str())));
    pool.shuffle(rng);
    let mut ranking: Vec<(usize, usize)> = pool
        .iter()
        .enumerate()
        .filter(|(_, (is_gold, _, _))| *is_gold)
        .map(|(pos, (_, gold_rank, _))| (*gold_rank, pos))
        .collect();
    ranking.sort();
    let ranking: Vec<usize> = ranking.into_iter().map(|(_, pos)| pos).collect();
    let texts: Vec<&str> = pool.iter().map(|(_, _, t)| *t).collect();
    let user = prompts.snippet_rerank(&q.body, &texts, crate::runfile::MAX_SNIPPETS);
    ExampleRecord::new(prompts.conversation(user), json!({ "ranking": ranking }).to_string())
}

fn has_snippets(q: &Question) -> bool {
    q.gold_snippets.as_ref().is_some_and(|s| !s.is_empty())
}

/// Builds the six sub-problem sets from gold training data. Deterministic in
/// (questions, documents, config).
pub fn sample_training_sets(
    questions: &[Question],
    docs: &dyn DocumentLookup,
    prompts: &Prompts,
    config: &SampleConfig,
) -> Result<ExampleStore, FewshotError> {
    let mut order: Vec<&Question> = questions.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.shuffle {
        order.shuffle(&mut rng);
    }
    let mut store = ExampleStore::default();
    for kind in ExampleKind::SUB_PROBLEMS {
        let mut set = ExampleSet::new(kind);
        let mut kind_rng = ChaCha8Rng::seed_from_u64(config.seed ^ (kind as u64 + 1));
        let rerank_pool: Vec<&Question> = order.iter().copied().filter(|q| has_snippets(q)).collect();
        for (i, q) in order.iter().enumerate() {
            if set.len() >= config.per_set {
                break;
            }
            match kind {
                ExampleKind::SnippetExtraction => {
                    let room = config.per_set - set.len();
                    set.records.extend(extraction_records(prompts, q, docs).into_iter().take(room));
                }
                ExampleKind::SnippetRerank if has_snippets(q) => {
                    let pos = rerank_pool.iter().position(|p| std::ptr::eq(*p, *q)).unwrap_or(i);
                    let next = rerank_pool
                        .get((pos + 1) % rerank_pool.len())
                        .filter(|n| !std::ptr::eq(**n, *q))
                        .and_then(|n| n.gold_snippets.as_deref())
                        .unwrap_or(&[]);
                    set.records.push(rerank_record(prompts, q, next, &mut kind_rng));
                }
                ExampleKind::SummaryQa if q.qtype == QuestionType::Summary => {
                    if let Some(ideal) = q.gold_ideal.as_ref().filter(|s| !s.trim().is_empty()) {
                        set.records
                            .push(answer_record(prompts, TemplateName::AnswerIdeal, q, ideal.trim().to_string()));
                    }
                }
                ExampleKind::YesnoQa => {
                    if let (QuestionType::Yesno, Some(ExactAnswer::YesNo(a))) = (q.qtype, &q.gold_exact) {
                        set.records.push(answer_record(prompts, TemplateName::AnswerYesno, q, a.clone()));
                    }
                }
                ExampleKind::FactoidQa => {
                    if let (QuestionType::Factoid, Some(ExactAnswer::Factoid(e))) = (q.qtype, &q.gold_exact) {
                        if !e.is_empty() {
                            let e = &e[..e.len().min(crate::corpus::FACTOID_CAP)];
                            set.records
                                .push(answer_record(prompts, TemplateName::AnswerFactoid, q, entities_json(e)));
                        }
                    }
                }
                ExampleKind::ListQa => {
                    if let (QuestionType::List, Some(ExactAnswer::List(e))) = (q.qtype, &q.gold_exact) {
                        if !e.is_empty() {
                            set.records.push(answer_record(prompts, TemplateName::AnswerList, q, entities_json(e)));
                        }
                    }
                }
                _ => {}
            }
        }
        if set.is_empty() {
            return Err(FewshotError::NoEligible(kind.as_str()));
        }
        store.insert(set);
    }
    Ok(store)
}

/// A candidate query-generation example.
#[derive(Debug, Clone)]
pub struct QueryCandidate<'a> {
    pub question: &'a Question,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub question_id: String,
    pub f1: f64,
    pub error: Option<String>,
}

/// Document F1 of one retrieved list against gold.
pub fn document_f1(retrieved: &[String], gold: &BTreeSet<String>) -> f64 {
    if retrieved.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let hits = retrieved.iter().collect::<BTreeSet<_>>().into_iter().filter(|d| gold.contains(*d)).count();
    if hits == 0 {
        return 0.0;
    }
    let p = hits as f64 / retrieved.len() as f64;
    let r = hits as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Runs every candidate query (top `size`), ranks by document F1 against gold
/// with ties broken by question id, and keeps the best `k` as examples whose
/// completion is the bare query string.
pub fn select_query_examples(
    candidates: &[QueryCandidate<'_>],
    indices: &[&InvertedIndex],
    fields: &[FieldSpec],
    op: DefaultOperator,
    size: usize,
    k: usize,
    prompts: &Prompts,
) -> (ExampleSet, Vec<ScoredCandidate>) {
    let mut scored: Vec<(ScoredCandidate, &QueryCandidate<'_>)> = candidates
        .iter()
        .map(|c| {
            let gold: BTreeSet<String> = c.question.gold_documents.iter().flatten().cloned().collect();
            let outcome = parse_query_string(&c.query, op)
                .map_err(|e| e.to_string())
                .and_then(|ast| search_all(indices, &ast, fields, size).map_err(|e| e.to_string()));
            let (f1, error) = match outcome {
                Ok(hits) => {
                    let ids: Vec<String> = hits.into_iter().map(|h| h.doc_id).collect();
                    (document_f1(&ids, &gold), None)
                }
                Err(e) => {
                    log::warn!("{}: candidate query unusable: {e}", c.question.id);
                    (0.0, Some(e))
                }
            };
            (
                ScoredCandidate {
                    question_id: c.question.id.clone(),
                    f1,
                    error,
                },
                c,
            )
        })
        .collect();
    scored.sort_by(|(a, _), (b, _)| b.f1.total_cmp(&a.f1).then_with(|| a.question_id.cmp(&b.question_id)));
    let mut set = ExampleSet::new(ExampleKind::QueryGeneration);
    for (_, c) in scored.iter().take(k) {
        let user = prompts.query_string(&c.question.body);
        set.records.push(ExampleRecord::new(prompts.conversation(user), c.query.clone()));
    }
    (set, scored.into_iter().map(|(s, _)| s).collect())
}
