//! Per-question orchestration for Synergy rounds and Task B phases.

pub mod parse;
pub mod stages;
pub mod trace;

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Document, DocumentLookup, ExactAnswer, FeedbackRecord, Question, QuestionType, Snippet};
use crate::corpus::{FACTOID_CAP, LIST_CAP};
use crate::fewshot::{ExampleKind, ExampleStore, FewshotError};
use crate::index::{search_all, IndexError, InvertedIndex};
use crate::llm::{complete_structured, ChatMessage, ChatProvider, GenerationParams, LlmError};
use crate::prompts::{with_background, Prompts, TemplateName};
use crate::query::{DefaultOperator, FieldSpec, QueryEnvelope};
use crate::runfile::{RunFile, RunQuestion, MAX_DOCUMENTS, MAX_SNIPPETS};
use crate::wiki::{build_context, KnowledgeBase, WikiError};

pub use trace::{QuestionTrace, StageTrace};

pub const DEFAULT_IDEAL_MAX_WORDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Synergy,
    PhaseA,
    PhaseAPlus,
    PhaseB,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Synergy, Phase::PhaseA, Phase::PhaseAPlus, Phase::PhaseB];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Synergy => "synergy",
            Phase::PhaseA => "phase_a",
            Phase::PhaseAPlus => "phase_a_plus",
            Phase::PhaseB => "phase_b",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn retrieves(self) -> bool {
        matches!(self, Phase::Synergy | Phase::PhaseA)
    }
}

/// Few-shot example counts per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Shots {
    pub query: usize,
    pub snippet: usize,
    pub rerank: usize,
    pub answer: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub phase: Phase,
    pub shots: Shots,
    pub retrieval_size: usize,
    pub snippet_cap: usize,
    pub ideal_max_words: usize,
    /// Fields and operator used to wrap bare query strings.
    pub query_fields: Vec<FieldSpec>,
    pub query_default_operator: DefaultOperator,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub parallelism: usize,
    pub wiki_budget_chars: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            phase: Phase::PhaseA,
            shots: Shots::default(),
            retrieval_size: MAX_DOCUMENTS,
            snippet_cap: MAX_SNIPPETS,
            ideal_max_words: DEFAULT_IDEAL_MAX_WORDS,
            query_fields: vec![FieldSpec::new("title", 10.0), FieldSpec::new("abstract", 1.0)],
            query_default_operator: DefaultOperator::And,
            temperature: 0.0,
            seed: None,
            parallelism: 1,
            wiki_budget_chars: crate::wiki::DEFAULT_BUDGET_CHARS,
        }
    }
}

impl PipelineConfig {
    fn params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            seed: self.seed,
            ..GenerationParams::default()
        }
    }
}

/// Shared services and inputs for a run.
pub struct Resources<'a> {
    pub provider: &'a dyn ChatProvider,
    pub prompts: &'a Prompts,
    pub examples: &'a ExampleStore,
    pub indices: &'a [&'a InvertedIndex],
    pub feedback: Option<&'a HashMap<String, FeedbackRecord>>,
    /// Prior run whose snippets feed Phase A+ answering.
    pub snippet_source: Option<&'a RunFile>,
    /// Enables background context when present.
    pub kb: Option<&'a dyn KnowledgeBase>,
}

/// Errors that abort a whole run.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("phase_b needs gold snippets; question {0} has none")]
    MissingGoldSnippets(String),
    #[error("phase_a_plus needs a snippet source run")]
    MissingSnippetSource,
    #[error("{0} needs at least one index")]
    NoIndex(&'static str),
    #[error(transparent)]
    Examples(#[from] FewshotError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Errors that fail a single question.
#[derive(Debug, Error)]
enum StageFailure {
    #[error("{stage}: {source}")]
    Llm {
        stage: &'static str,
        #[source]
        source: LlmError,
    },
    #[error("retrieval: {0}")]
    Index(#[from] IndexError),
    #[error("wiki: {0}")]
    Wiki(#[from] WikiError),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: RunFile,
    pub traces: Vec<QuestionTrace>,
}

/// Runs every question through the configured phase on a pool of
/// `parallelism` workers. Output keeps question order.
pub fn run(questions: &[Question], config: &PipelineConfig, res: &Resources<'_>) -> Result<RunOutput, PipelineError> {
    preflight(questions, config, res)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<(RunQuestion, QuestionTrace)> =
        pool.install(|| questions.par_iter().map(|q| process_question(q, config, res)).collect());
    let (questions, traces) = results.into_iter().unzip();
    Ok(RunOutput {
        run: RunFile { questions },
        traces,
    })
}

fn preflight(questions: &[Question], config: &PipelineConfig, res: &Resources<'_>) -> Result<(), PipelineError> {
    if config.retrieval_size == 0 || config.retrieval_size > MAX_DOCUMENTS {
        return Err(PipelineError::Config(format!("retrieval_size must be in 1..={MAX_DOCUMENTS}")));
    }
    if config.snippet_cap == 0 || config.snippet_cap > MAX_SNIPPETS {
        return Err(PipelineError::Config(format!("snippet_cap must be in 1..={MAX_SNIPPETS}")));
    }
    if config.ideal_max_words == 0 {
        return Err(PipelineError::Config("ideal_max_words must be positive".into()));
    }
    if config.query_fields.is_empty() {
        return Err(PipelineError::Config("query_fields is empty".into()));
    }
    let shots = config.shots;
    let mut needed: Vec<(ExampleKind, usize)> = Vec::new();
    match config.phase {
        Phase::PhaseA | Phase::Synergy => {
            if res.indices.is_empty() {
                return Err(PipelineError::NoIndex(config.phase.as_str()));
            }
            needed.push((ExampleKind::QueryGeneration, shots.query));
            needed.push((ExampleKind::SnippetExtraction, shots.snippet));
            needed.push((ExampleKind::SnippetRerank, shots.rerank));
        }
        Phase::PhaseAPlus => {
            if res.snippet_source.is_none() {
                return Err(PipelineError::MissingSnippetSource);
            }
        }
        Phase::PhaseB => {
            if let Some(q) = questions.iter().find(|q| q.gold_snippets.is_none()) {
                return Err(PipelineError::MissingGoldSnippets(q.id.clone()));
            }
        }
    }
    if config.phase != Phase::PhaseA {
        needed.push((ExampleKind::SummaryQa, shots.answer));
        for q in questions {
            if q.qtype != QuestionType::Summary {
                needed.push((ExampleKind::for_answer(q.qtype), shots.answer));
            }
        }
    }
    for (kind, k) in needed {
        if k == 0 {
            continue;
        }
        let available = res.examples.get(kind).map_or(0, |s| s.len());
        if available < k {
            return Err(PipelineError::Examples(FewshotError::NotEnough {
                kind: kind.as_str(),
                available,
                requested: k,
            }));
        }
    }
    Ok(())
}

/// One question's working state.
struct Worker<'a> {
    q: &'a Question,
    config: &'a PipelineConfig,
    res: &'a Resources<'a>,
    background: Option<String>,
    trace: QuestionTrace,
}

fn process_question(q: &Question, config: &PipelineConfig, res: &Resources<'_>) -> (RunQuestion, QuestionTrace) {
    let mut w = Worker {
        q,
        config,
        res,
        background: None,
        trace: QuestionTrace::new(&q.id, config.phase.as_str()),
    };
    match w.answer_question() {
        Ok(rq) => (rq, w.trace),
        Err(e) => {
            log::warn!("question {} failed: {e}", q.id);
            w.trace.error = Some(e.to_string());
            let mut rq = RunQuestion::new(&q.id, q.qtype);
            if config.phase.retrieves() {
                rq.documents = Some(Vec::new());
                rq.snippets = Some(Vec::new());
            }
            (rq, w.trace)
        }
    }
}

fn llm(stage: &'static str) -> impl FnOnce(LlmError) -> StageFailure {
    move |source| StageFailure::Llm { stage, source }
}

impl Worker<'_> {
    fn answer_question(&mut self) -> Result<RunQuestion, StageFailure> {
        if let Some(kb) = self.res.kb {
            self.wiki(kb)?;
        }
        let mut rq = RunQuestion::new(&self.q.id, self.q.qtype);
        let answer_snippets = match self.config.phase {
            Phase::PhaseA => {
                let (docs, snippets) = self.retrieve_and_extract()?;
                rq.documents = Some(docs);
                rq.snippets = Some(snippets);
                return Ok(rq);
            }
            Phase::Synergy => {
                let (docs, snippets) = self.retrieve_and_extract()?;
                rq.documents = Some(docs);
                rq.snippets = Some(snippets.clone());
                if self.q.answer_ready != Some(true) {
                    self.trace.note_stage("answers", "question not ready to answer");
                    return Ok(rq);
                }
                let relevant = self.feedback().map(|f| f.relevant_snippets.clone()).unwrap_or_default();
                stages::merge_snippets(&snippets, &relevant)
            }
            Phase::PhaseAPlus => {
                let source = self.res.snippet_source.expect("checked in preflight");
                match source.get(&self.q.id).and_then(|r| r.snippets.clone()) {
                    Some(s) => {
                        self.trace.note_stage("snippets", format!("{} snippets from snippet source run", s.len()));
                        s
                    }
                    None => {
                        self.trace.flag("no_source_snippets");
                        Vec::new()
                    }
                }
            }
            Phase::PhaseB => {
                let gold = self.q.gold_snippets.clone().expect("checked in preflight");
                self.trace.note_stage("snippets", format!("{} gold snippets", gold.len()));
                gold
            }
        };
        let texts: Vec<&str> = answer_snippets.iter().map(|s| s.text.as_str()).collect();
        rq.exact_answer = self.answer_exact(&texts)?;
        rq.ideal_answer = Some(self.answer_ideal(&texts)?);
        Ok(rq)
    }

    fn feedback(&self) -> Option<&FeedbackRecord> {
        self.res.feedback.and_then(|f| f.get(&self.q.id))
    }

    /// `[system, examples..., user]` with background prefixed to the live turn.
    fn messages(&self, kind: ExampleKind, shots: usize, user: String) -> Result<Vec<ChatMessage>, StageFailure> {
        let live = self.res.prompts.conversation(with_background(self.background.as_deref(), user));
        self.res.examples.prepend(kind, shots, &live).map_err(|e| StageFailure::Stage {
            stage: kind.as_str(),
            message: e.to_string(),
        })
    }

    /// Structured completion; `Ok(None)` when the output stays invalid after
    /// the corrective retry.
    fn structured<T>(
        &self,
        stage: &mut StageTrace,
        name: &'static str,
        messages: &[ChatMessage],
        params: &GenerationParams,
        check: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, StageFailure> {
        match complete_structured(self.res.provider, messages, params, check) {
            Ok(s) => {
                stage.exchanges(s.exchanges);
                Ok(Some(s.value))
            }
            Err(LlmError::InvalidStructure { reason, exchanges }) => {
                stage.exchanges(exchanges);
                stage.note(format!("invalid output: {reason}"));
                Ok(None)
            }
            Err(e) => Err(llm(name)(e)),
        }
    }

    fn wiki(&mut self, kb: &dyn KnowledgeBase) -> Result<(), StageFailure> {
        let mut stage = StageTrace::start("wiki");
        let out = build_context(
            self.res.provider,
            kb,
            self.res.prompts,
            &self.q.id,
            &self.q.body,
            self.config.wiki_budget_chars,
            &self.config.params(),
        );
        let out = match out {
            Ok(out) => out,
            Err(e) => {
                self.trace.push(stage);
                return Err(e.into());
            }
        };
        stage.exchanges(out.exchanges);
        stage.note(format!("proposed: {:?}", out.proposed));
        for t in out.proposed.iter().filter(|t| !out.fetched.contains(t)) {
            stage.drop_item(t.clone(), "article not found");
        }
        stage.note(format!("sources: {:?}", out.context.sources));
        if !out.context.summary.is_empty() {
            self.background = Some(out.context.summary);
        }
        self.trace.push(stage);
        Ok(())
    }

    fn generate_query(&mut self) -> Result<QueryEnvelope, StageFailure> {
        let mut stage = StageTrace::start("query");
        let cfg = self.config;
        let result = if cfg.phase == Phase::Synergy {
            let messages = self.messages(
                ExampleKind::QueryGeneration,
                cfg.shots.query,
                self.res.prompts.query_expansion(&self.q.body),
            )?;
            self.structured(
                &mut stage,
                "query",
                &messages,
                &cfg.params().structured(),
                parse::parse_envelope_completion,
            )
        } else {
            let messages = self.messages(
                ExampleKind::QueryGeneration,
                cfg.shots.query,
                self.res.prompts.query_string(&self.q.body),
            )?;
            self.structured(&mut stage, "query", &messages, &cfg.params(), |s| {
                parse::parse_query_completion(s, &cfg.query_fields, cfg.query_default_operator, cfg.retrieval_size)
            })
        };
        let outcome = match result {
            Ok(Some(env)) => {
                stage.note(format!("query: {}", env.query));
                Ok(env)
            }
            Ok(None) => Err(StageFailure::Stage {
                stage: "query",
                message: "no parseable query after retry".into(),
            }),
            Err(e) => Err(e),
        };
        self.trace.push(stage);
        outcome
    }

    fn search(&self, env: &QueryEnvelope) -> Result<Vec<String>, StageFailure> {
        let size = env.size.min(self.config.retrieval_size);
        let hits = search_all(self.res.indices, &env.ast, &env.fields, size)?;
        Ok(hits.into_iter().map(|h| h.doc_id).collect())
    }

    fn retrieve(&mut self, env: &QueryEnvelope) -> Result<Vec<String>, StageFailure> {
        let mut stage = StageTrace::start("retrieval");
        let mut docs = self.search(env)?;
        stage.note(format!("hits: {}", docs.len()));
        if docs.is_empty() {
            let cfg = self.config;
            let messages = self.messages(
                ExampleKind::QueryGeneration,
                0,
                self.res.prompts.improved_query(&self.q.body, &env.query),
            )?;
            let completion = self.res.provider.complete(&messages, &cfg.params()).map_err(llm("improved_query"))?;
            stage.exchanges([crate::llm::Exchange {
                messages,
                completion: completion.clone(),
            }]);
            match parse::parse_query_completion(&completion.content, &env.fields, env.default_operator, env.size) {
                Ok(better) => {
                    stage.note(format!("improved query: {}", better.query));
                    docs = self.search(&better)?;
                    stage.note(format!("improved hits: {}", docs.len()));
                }
                Err(e) => stage.note(format!("improved query unusable: {e}")),
            }
        }
        if let Some(fb) = self.feedback() {
            docs.retain(|d| {
                let irrelevant = fb.irrelevant_documents.contains(d);
                if irrelevant {
                    stage.drop_item(d.clone(), "marked irrelevant in feedback");
                }
                !irrelevant
            });
        }
        self.trace.push(stage);
        Ok(docs)
    }

    fn document(&self, doc_id: &str) -> Option<&Document> {
        self.res.indices.iter().find_map(|i| i.document(doc_id))
    }

    fn extract(&mut self, docs: &[String]) -> Result<HashMap<String, Vec<Snippet>>, StageFailure> {
        let mut stage = StageTrace::start("snippet_extraction");
        let cfg = self.config;
        let mut out = HashMap::new();
        for doc_id in docs {
            let Some(doc) = self.document(doc_id) else {
                stage.drop_item(doc_id.clone(), "document text unavailable");
                out.insert(doc_id.clone(), Vec::new());
                continue;
            };
            let messages = self.messages(
                ExampleKind::SnippetExtraction,
                cfg.shots.snippet,
                self.res.prompts.snippet_extraction(&self.q.body, doc),
            )?;
            let candidates = self.structured(
                &mut stage,
                "snippet_extraction",
                &messages,
                &cfg.params().structured(),
                parse::parse_snippet_texts,
            );
            let candidates = match candidates {
                Ok(c) => c.unwrap_or_default(),
                Err(e) => {
                    self.trace.push(stage);
                    return Err(e);
                }
            };
            let mut found: Vec<Snippet> = Vec::new();
            for c in candidates {
                match stages::locate_snippet(doc, &c) {
                    Some(s) if found.iter().any(|f| f.key() == s.key()) => {
                        stage.drop_item(c, format!("duplicate span in {doc_id}"));
                    }
                    Some(s) => found.push(s),
                    None => stage.drop_item(c, format!("not found verbatim in {doc_id}")),
                }
            }
            out.insert(doc_id.clone(), found);
        }
        self.trace.push(stage);
        Ok(out)
    }

    fn rerank(&mut self, candidates: &[Snippet]) -> Result<Vec<Snippet>, StageFailure> {
        let mut stage = StageTrace::start("snippet_rerank");
        let cfg = self.config;
        let cap = cfg.snippet_cap;
        if candidates.is_empty() {
            stage.note("no candidates");
            self.trace.push(stage);
            return Ok(Vec::new());
        }
        let texts: Vec<&str> = candidates.iter().map(|s| s.text.as_str()).collect();
        let messages = self.messages(
            ExampleKind::SnippetRerank,
            cfg.shots.rerank,
            self.res.prompts.snippet_rerank(&self.q.body, &texts, cap),
        )?;
        let n = candidates.len();
        let picked = self.structured(&mut stage, "snippet_rerank", &messages, &cfg.params().structured(), |s| {
            let sel = stages::select_ranking(&parse::parse_ranking(s)?, n, cap);
            if sel.is_empty() {
                Err("no valid snippet indices".into())
            } else {
                Ok(sel)
            }
        });
        let picked = match picked {
            Ok(p) => p,
            Err(e) => {
                self.trace.push(stage);
                return Err(e);
            }
        };
        let chosen: Vec<Snippet> = match picked {
            Some(sel) => sel.into_iter().map(|i| candidates[i].clone()).collect(),
            None => {
                self.trace.flag("rerank_fallback");
                candidates.iter().take(cap).cloned().collect()
            }
        };
        stage.note(format!("kept {} of {n}", chosen.len()));
        self.trace.push(stage);
        Ok(chosen)
    }

    fn retrieve_and_extract(&mut self) -> Result<(Vec<String>, Vec<Snippet>), StageFailure> {
        let env = self.generate_query()?;
        let docs = self.retrieve(&env)?;
        let per_doc = self.extract(&docs)?;
        let kept = stages::filter_documents_by_snippets(&docs, &per_doc);
        let candidates: Vec<Snippet> = kept.iter().flat_map(|d| per_doc[d].iter().cloned()).collect();
        let reranked = self.rerank(&candidates)?;
        let docs = stages::rerank_documents(&reranked, &kept);
        Ok((docs, reranked))
    }

    fn answer_exact(&mut self, snippets: &[&str]) -> Result<Option<ExactAnswer>, StageFailure> {
        let qtype = self.q.qtype;
        let (template, cap) = match qtype {
            QuestionType::Yesno => (TemplateName::AnswerYesno, 1),
            QuestionType::Factoid => (TemplateName::AnswerFactoid, FACTOID_CAP),
            QuestionType::List => (TemplateName::AnswerList, LIST_CAP),
            QuestionType::Summary => return Ok(None),
        };
        let mut stage = StageTrace::start("exact_answer");
        let cfg = self.config;
        let user = self.res.prompts.answer(template, &self.q.body, snippets, cfg.ideal_max_words);
        let messages = self.messages(ExampleKind::for_answer(qtype), cfg.shots.answer, user)?;
        let answer = if qtype == QuestionType::Yesno {
            let got = self.structured(&mut stage, "exact_answer", &messages, &cfg.params(), |s| {
                parse::normalize_yesno(s).ok_or_else(|| "not a yes/no answer".to_string())
            });
            match got {
                Ok(Some(a)) => Ok(Some(ExactAnswer::YesNo(a.to_string()))),
                Ok(None) => {
                    self.trace.flag("yesno_fallback");
                    Ok(Some(ExactAnswer::YesNo("yes".into())))
                }
                Err(e) => Err(e),
            }
        } else {
            let got = self.structured(&mut stage, "exact_answer", &messages, &cfg.params().structured(), |s| {
                let e = parse::parse_entities(s)?;
                if e.is_empty() {
                    Err("no entities".into())
                } else {
                    Ok(e)
                }
            });
            match got {
                Ok(Some(mut e)) => {
                    if e.len() > cap {
                        stage.note(format!("truncated {} entities to {cap}", e.len()));
                        e.truncate(cap);
                    }
                    Ok(Some(if qtype == QuestionType::Factoid {
                        ExactAnswer::Factoid(e)
                    } else {
                        ExactAnswer::List(e)
                    }))
                }
                Ok(None) => {
                    self.trace.flag("exact_answer_missing");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        self.trace.push(stage);
        answer
    }

    fn answer_ideal(&mut self, snippets: &[&str]) -> Result<String, StageFailure> {
        let mut stage = StageTrace::start("ideal_answer");
        let cfg = self.config;
        let user = self
            .res
            .prompts
            .answer(TemplateName::AnswerIdeal, &self.q.body, snippets, cfg.ideal_max_words);
        let messages = self.messages(ExampleKind::SummaryQa, cfg.shots.answer, user)?;
        let got = self.structured(&mut stage, "ideal_answer", &messages, &cfg.params(), |s| {
            let text = parse::normalize_ideal(s, cfg.ideal_max_words);
            if text.is_empty() {
                Err("empty answer".into())
            } else {
                Ok(text)
            }
        });
        let out = match got {
            Ok(Some(t)) => Ok(t),
            Ok(None) => {
                self.trace.flag("ideal_answer_empty");
                Ok(String::new())
            }
            Err(e) => Err(e),
        };
        self.trace.push(stage);
        out
    }
}

impl QuestionTrace {
    fn note_stage(&mut self, stage: &str, note: impl Into<String>) {
        let mut s = StageTrace::start(stage);
        s.note(note);
        self.push(s);
    }
}

#[cfg(test)]
mod tests;
