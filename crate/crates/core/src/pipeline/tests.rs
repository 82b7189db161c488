use std::collections::{BTreeSet, HashMap};

use super::*;
use crate::analysis::AnalyzerConfig;
use crate::corpus::Section;
use crate::index::build_index;
use crate::llm::{FnProvider, CORRECTIVE_INSTRUCTION};

fn corpus() -> Vec<Document> {
    vec![
        Document::new("1", "Aspirin and fever", "Aspirin reduces fever in adults. It is an NSAID."),
        Document::new("2", "Aspirin in stroke", "Low dose aspirin prevents stroke. Bleeding is a risk."),
        Document::new("3", "Ibuprofen", "Ibuprofen is another NSAID. It treats pain."),
        Document::new("4", "Aspirin history", "Aspirin was synthesized in 1897."),
        Document::new("5", "Aspirin allergy", "Some patients are allergic to aspirin."),
    ]
}

fn field(user: &str, label: &str) -> String {
    user.lines()
        .find_map(|l| l.strip_prefix(label))
        .unwrap_or_default()
        .trim()
        .to_string()
}

/// Answers each stage from the text of its live user turn.
fn script(messages: &[ChatMessage]) -> String {
    let user = &messages.last().unwrap().content;
    if user == CORRECTIVE_INSTRUCTION {
        return "still not valid".into();
    }
    if user.contains("Lucene query_string syntax") {
        return if user.contains("nothing") { "zzzz".into() } else { "aspirin".into() };
    }
    if user.contains("returned no results") {
        return "aspirin OR ibuprofen".into();
    }
    if user.contains("elasticsearch query") {
        return r#"{"query":{"query_string":{"query":"aspirin","fields":["title^10","abstract"],"default_operator":"and"}},"size":50}"#.into();
    }
    if user.contains("Extract the passages") {
        let abs = field(user, "Abstract:");
        let first = abs.split_inclusive(". ").next().unwrap_or("").trim().to_string();
        if abs.contains("1897") {
            return r#"{"snippets":[]}"#.into();
        }
        return serde_json::json!({"snippets":[first, "invented sentence"]}).to_string();
    }
    if user.contains("Rank the numbered snippets") {
        let n = user.lines().filter(|l| l.starts_with('[')).count();
        let ranking: Vec<usize> = (0..n).rev().collect();
        return serde_json::json!({ "ranking": ranking }).to_string();
    }
    if user.contains("\"yes\" or \"no\"") {
        return "Yes, because it is.".into();
    }
    if user.contains("up to 5 entity names") {
        return serde_json::json!({"entities": (0..7).map(|i| format!("e{i}")).collect::<Vec<_>>()}).to_string();
    }
    if user.contains("list of entity names") {
        return serde_json::json!({"entities": (0..250).map(|i| format!("e{i}")).collect::<Vec<_>>()}).to_string();
    }
    if user.contains("short paragraph") {
        return "Aspirin\nreduces   fever.".into();
    }
    "unexpected".into()
}

struct Fixture {
    index: InvertedIndex,
    prompts: Prompts,
    examples: ExampleStore,
}

impl Fixture {
    fn new() -> Self {
        Self {
            index: build_index(corpus(), AnalyzerConfig::english()).unwrap(),
            prompts: Prompts::default(),
            examples: ExampleStore::default(),
        }
    }
}

fn question(id: &str, qtype: QuestionType) -> Question {
    Question::new(id, format!("Does aspirin help, case {id}?"), qtype)
}

fn cfg(phase: Phase) -> PipelineConfig {
    PipelineConfig {
        phase,
        ..PipelineConfig::default()
    }
}

#[test]
fn phase_a_retrieves_extracts_and_reranks() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", script);
    let indices = [&fx.index];
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &indices,
        feedback: None,
        snippet_source: None,
        kb: None,
    };
    let qs = vec![question("q1", QuestionType::Yesno)];
    let out = run(&qs, &cfg(Phase::PhaseA), &res).unwrap();
    let rq = &out.run.questions[0];
    assert!(rq.exact_answer.is_none() && rq.ideal_answer.is_none());
    let docs = rq.documents.as_ref().unwrap();
    // doc 4 yields no snippets; doc 3 is never retrieved
    assert_eq!(docs.len(), 3);
    assert!(!docs.contains(&"4".to_string()));
    let snippets = rq.snippets.as_ref().unwrap();
    assert_eq!(snippets.len(), 3);
    for s in snippets {
        s.check_against(fx.index.document(&s.doc_id).unwrap()).unwrap();
    }
    // reversed ranking puts the last extracted snippet first, and documents follow it
    assert_eq!(docs[0], snippets[0].doc_id);
    let t = &out.traces[0];
    assert!(t.stage("snippet_extraction").unwrap().dropped.iter().any(|d| d.item == "invented sentence"));
    assert!(out.run.intrinsic_violations(Some(&fx.index)).is_empty());
}

#[test]
fn zero_hits_trigger_one_improved_query() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", script);
    let indices = [&fx.index];
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &indices,
        feedback: None,
        snippet_source: None,
        kb: None,
    };
    let mut q = question("q1", QuestionType::Summary);
    q.body = "nothing".into();
    let out = run(&[q], &cfg(Phase::PhaseA), &res).unwrap();
    let retrieval = out.traces[0].stage("retrieval").unwrap();
    assert_eq!(retrieval.exchanges.len(), 1);
    assert!(retrieval.notes.iter().any(|n| n == "improved hits: 5"));
}

#[test]
fn synergy_filters_feedback_and_answers_only_ready_questions() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", script);
    let indices = [&fx.index];
    let d5 = &fx.index.document("5").unwrap().clone();
    let relevant = Snippet::from_document(d5, Section::Title, 0, 15).unwrap();
    let mut feedback = HashMap::new();
    for id in ["ready", "waiting"] {
        feedback.insert(
            id.to_string(),
            FeedbackRecord {
                question_id: id.into(),
                irrelevant_documents: BTreeSet::from(["1".to_string(), "2".to_string()]),
                relevant_snippets: vec![relevant.clone()],
                ..FeedbackRecord::default()
            },
        );
    }
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &indices,
        feedback: Some(&feedback),
        snippet_source: None,
        kb: None,
    };
    let mut ready = question("ready", QuestionType::Yesno);
    ready.answer_ready = Some(true);
    let mut waiting = question("waiting", QuestionType::Yesno);
    waiting.answer_ready = Some(false);
    let out = run(&[ready, waiting], &cfg(Phase::Synergy), &res).unwrap();
    for rq in &out.run.questions {
        let docs = rq.documents.as_ref().unwrap();
        assert!(!docs.contains(&"1".to_string()) && !docs.contains(&"2".to_string()));
    }
    assert_eq!(out.run.questions[0].exact_answer, Some(ExactAnswer::YesNo("yes".into())));
    assert!(out.run.questions[1].exact_answer.is_none());
    let answer_prompts = out.traces[0].prompts_of("exact_answer");
    assert!(answer_prompts.iter().any(|m| m.content.contains("Aspirin allergy")));
}

#[test]
fn phase_b_uses_gold_snippets_and_caps_entities() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", script);
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &[],
        feedback: None,
        snippet_source: None,
        kb: None,
    };
    let gold = Snippet::from_document(&corpus()[0], Section::Abstract, 0, 32).unwrap();
    let mut qs = Vec::new();
    for (id, t) in [("f", QuestionType::Factoid), ("l", QuestionType::List), ("y", QuestionType::Yesno)] {
        let mut q = question(id, t);
        q.gold_snippets = Some(vec![gold.clone()]);
        qs.push(q);
    }
    let out = run(&qs, &cfg(Phase::PhaseB), &res).unwrap();
    let f = &out.run.questions[0];
    assert!(f.documents.is_none());
    assert_eq!(f.exact_answer.as_ref().unwrap().entities().len(), 5);
    assert_eq!(out.run.questions[1].exact_answer.as_ref().unwrap().entities().len(), 200);
    assert_eq!(f.ideal_answer.as_deref(), Some("Aspirin reduces fever."));
    for t in &out.traces {
        assert!(t.stage("retrieval").is_none());
        assert!(t.prompts_of("exact_answer").iter().any(|m| m.content.contains(&gold.text)));
    }
}

#[test]
fn run_level_preconditions() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", script);
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &[],
        feedback: None,
        snippet_source: None,
        kb: None,
    };
    let qs = vec![question("q", QuestionType::Yesno)];
    assert!(matches!(run(&qs, &cfg(Phase::PhaseB), &res), Err(PipelineError::MissingGoldSnippets(_))));
    assert!(matches!(run(&qs, &cfg(Phase::PhaseAPlus), &res), Err(PipelineError::MissingSnippetSource)));
    assert!(matches!(run(&qs, &cfg(Phase::PhaseA), &res), Err(PipelineError::NoIndex(_))));
    let mut shots = cfg(Phase::PhaseB);
    shots.shots.answer = 2;
    let mut q = qs[0].clone();
    q.gold_snippets = Some(vec![]);
    assert!(matches!(run(&[q], &shots, &res), Err(PipelineError::Examples(_))));
}

#[test]
fn failures_are_isolated_per_question() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", |m: &[ChatMessage]| {
        let asks_bad_query = m.iter().any(|x| x.content.contains("case bad") && x.content.contains("Lucene"));
        if asks_bad_query {
            "I cannot write queries: sorry?".to_string()
        } else {
            script(m)
        }
    });
    let indices = [&fx.index];
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &indices,
        feedback: None,
        snippet_source: None,
        kb: None,
    };
    let qs = vec![question("bad", QuestionType::Yesno), question("good", QuestionType::Yesno)];
    let out = run(&qs, &cfg(Phase::PhaseA), &res).unwrap();
    assert_eq!(out.run.questions[0].documents.as_deref(), Some(&[][..]));
    assert!(out.traces[0].error.as_ref().unwrap().contains("query"));
    assert!(!out.run.questions[1].documents.as_ref().unwrap().is_empty());
    assert!(out.traces[1].error.is_none());
}

#[test]
fn yesno_fallback_is_flagged() {
    let fx = Fixture::new();
    let provider = FnProvider::new("m", |_: &[ChatMessage]| "perhaps".to_string());
    let res = Resources {
        provider: &provider,
        prompts: &fx.prompts,
        examples: &fx.examples,
        indices: &[],
        feedback: None,
        snippet_source: None,
        kb: None,
    };
    let mut q = question("q", QuestionType::Yesno);
    q.gold_snippets = Some(vec![]);
    let out = run(&[q], &cfg(Phase::PhaseB), &res).unwrap();
    assert_eq!(out.run.questions[0].exact_answer, Some(ExactAnswer::YesNo("yes".into())));
    assert!(out.traces[0].flags.contains(&"yesno_fallback".to_string()));
    assert_eq!(out.run.questions[0].ideal_answer.as_deref(), Some("perhaps"));
}
