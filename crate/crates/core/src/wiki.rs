//! Background context from a knowledge base: the model proposes article
//! titles wrapped in `#`, existing articles are fetched, and their text is
//! summarized for later prompts.

use std::path::PathBuf;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::llm::{ChatProvider, Completion, Exchange, GenerationParams, LlmError};
use crate::prompts::Prompts;

pub const DEFAULT_BUDGET_CHARS: usize = 24_000;
pub const DEFAULT_WIKI_ENDPOINT: &str = "https://en.wikipedia.org/w/api.php";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KbArticle {
    pub title: String,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContextSummary {
    pub question_id: String,
    pub sources: Vec<String>,
    pub summary: String,
}

#[derive(Debug, Error)]
pub enum WikiError {
    #[error("knowledge base request for {title:?} failed: {message}")]
    Fetch { title: String, message: String },
    #[error("knowledge base file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("question {question_id}: {source}")]
    Llm {
        question_id: String,
        #[source]
        source: LlmError,
    },
}

/// Titles between consecutive pairs of `#` on the same line, trimmed, without
/// empties or repeats. An unpaired trailing `#` is ignored.
pub fn extract_titles(completion: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in completion.lines() {
        let parts: Vec<&str> = line.split('#').collect();
        // parts[1], parts[3], ... sit between a pair, provided a closing `#` exists.
        let mut i = 1;
        while i + 1 < parts.len() {
            let title = parts[i].trim();
            if !title.is_empty() && !out.iter().any(|t| t == title) {
                out.push(title.to_string());
            }
            i += 2;
        }
    }
    out
}

/// Looks up articles by title. `Ok(None)` means the article does not exist.
pub trait KnowledgeBase: Send + Sync {
    fn fetch(&self, title: &str) -> Result<Option<KbArticle>, WikiError>;
}

/// Offline knowledge base: a directory of `<title>.txt` files.
pub struct FixtureKb {
    dir: PathBuf,
}

impl FixtureKb {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl KnowledgeBase for FixtureKb {
    fn fetch(&self, title: &str) -> Result<Option<KbArticle>, WikiError> {
        if title.contains(['/', '\\']) || title.starts_with('.') {
            return Ok(None);
        }
        let path = self.dir.join(format!("{title}.txt"));
        match std::fs::read_to_string(&path) {
            Ok(content) => Ok(Some(KbArticle {
                title: title.to_string(),
                content,
            })),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(WikiError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

/// Live client for a MediaWiki `action=query&prop=extracts` endpoint.
pub struct MediaWikiKb {
    endpoint: String,
    agent: ureq::Agent,
    max_attempts: u32,
    backoff: Duration,
}

impl MediaWikiKb {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_attempts: u32, backoff: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            max_attempts: max_attempts.max(1),
            backoff,
        }
    }

    fn get(&self, title: &str) -> Result<(u16, String), String> {
        let mut resp = self
            .agent
            .get(&self.endpoint)
            .query("action", "query")
            .query("prop", "extracts")
            .query("explaintext", "1")
            .query("redirects", "1")
            .query("format", "json")
            .query("formatversion", "2")
            .query("titles", title)
            .header("User-Agent", "bioqa/0.1")
            .call()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, body))
    }
}

/// Reads the first page of a `formatversion=2` extracts response.
pub fn parse_extract(body: &str) -> Result<Option<KbArticle>, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let Some(page) = v.pointer("/query/pages/0") else {
        return Ok(None);
    };
    if page.get("missing").is_some() || page.get("invalid").is_some() {
        return Ok(None);
    }
    let title = page.get("title").and_then(Value::as_str).unwrap_or_default();
    match page.get("extract").and_then(Value::as_str) {
        Some(text) if !text.trim().is_empty() => Ok(Some(KbArticle {
            title: title.to_string(),
            content: text.to_string(),
        })),
        _ => Ok(None),
    }
}

impl KnowledgeBase for MediaWikiKb {
    fn fetch(&self, title: &str) -> Result<Option<KbArticle>, WikiError> {
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.get(title) {
                Ok((200, body)) => {
                    return parse_extract(&body).map_err(|message| WikiError::Fetch {
                        title: title.to_string(),
                        message,
                    })
                }
                Ok((status, _)) if status == 429 || status >= 500 => last = format!("status {status}"),
                Ok((status, _)) => {
                    return Err(WikiError::Fetch {
                        title: title.to_string(),
                        message: format!("status {status}"),
                    })
                }
                Err(e) => last = e,
            }
            if attempt < self.max_attempts {
                std::thread::sleep(self.backoff);
            }
        }
        Err(WikiError::Fetch {
            title: title.to_string(),
            message: last,
        })
    }
}

fn ask(
    provider: &dyn ChatProvider,
    prompts: &Prompts,
    user: String,
    params: &GenerationParams,
    question_id: &str,
) -> Result<Exchange, WikiError> {
    let messages = prompts.conversation(user);
    let completion: Completion = provider.complete(&messages, params).map_err(|source| WikiError::Llm {
        question_id: question_id.to_string(),
        source,
    })?;
    Ok(Exchange { messages, completion })
}

/// Sends the article-proposal prompt and returns the exchange verbatim.
pub fn propose_articles(
    provider: &dyn ChatProvider,
    prompts: &Prompts,
    question_id: &str,
    question: &str,
    params: &GenerationParams,
) -> Result<Exchange, WikiError> {
    ask(provider, prompts, prompts.wiki_articles(question), params, question_id)
}

/// Fetches each title once, in order, dropping those that do not exist.
pub fn resolve_and_fetch(kb: &dyn KnowledgeBase, titles: &[String]) -> Result<Vec<KbArticle>, WikiError> {
    let mut out: Vec<KbArticle> = Vec::new();
    for (i, title) in titles.iter().enumerate() {
        if titles[..i].contains(title) {
            continue;
        }
        if let Some(article) = kb.fetch(title)? {
            out.push(article);
        }
    }
    Ok(out)
}

/// The leading articles whose combined length fits `budget` characters;
/// selection stops at the first article that would overflow.
pub fn within_budget(articles: &[KbArticle], budget: usize) -> &[KbArticle] {
    let mut used = 0;
    for (i, a) in articles.iter().enumerate() {
        used += a.content.chars().count();
        if used > budget {
            return &articles[..i];
        }
    }
    articles
}

fn concatenate(articles: &[KbArticle]) -> String {
    articles
        .iter()
        .map(|a| format!("## {}\n{}", a.title, a.content.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Summarizes the articles that fit the budget. With none, the summary is
/// empty and no request is made.
pub fn summarize_context(
    provider: &dyn ChatProvider,
    prompts: &Prompts,
    question_id: &str,
    question: &str,
    articles: &[KbArticle],
    budget: usize,
    params: &GenerationParams,
) -> Result<(ContextSummary, Option<Exchange>), WikiError> {
    let kept = within_budget(articles, budget);
    if kept.is_empty() {
        return Ok((
            ContextSummary {
                question_id: question_id.to_string(),
                ..ContextSummary::default()
            },
            None,
        ));
    }
    let exchange = ask(
        provider,
        prompts,
        prompts.wiki_summary(question, &concatenate(kept)),
        params,
        question_id,
    )?;
    let summary = exchange.completion.content.split_whitespace().collect::<Vec<_>>().join(" ");
    Ok((
        ContextSummary {
            question_id: question_id.to_string(),
            sources: kept.iter().map(|a| a.title.clone()).collect(),
            summary,
        },
        Some(exchange),
    ))
}

/// Everything the wiki stage produced for one question.
#[derive(Debug, Clone)]
pub struct WikiOutcome {
    pub proposed: Vec<String>,
    pub fetched: Vec<String>,
    pub context: ContextSummary,
    pub exchanges: Vec<Exchange>,
}

/// Proposal, resolution and summary in sequence.
pub fn build_context(
    provider: &dyn ChatProvider,
    kb: &dyn KnowledgeBase,
    prompts: &Prompts,
    question_id: &str,
    question: &str,
    budget: usize,
    params: &GenerationParams,
) -> Result<WikiOutcome, WikiError> {
    let proposal = propose_articles(provider, prompts, question_id, question, params)?;
    let proposed = extract_titles(&proposal.completion.content);
    let articles = resolve_and_fetch(kb, &proposed)?;
    let (context, summary_exchange) =
        summarize_context(provider, prompts, question_id, question, &articles, budget, params)?;
    let mut exchanges = vec![proposal];
    exchanges.extend(summary_exchange);
    Ok(WikiOutcome {
        proposed,
        fetched: articles.into_iter().map(|a| a.title).collect(),
        context,
        exchanges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, FnProvider};

    #[test]
    fn hashtag_pairs() {
        assert_eq!(extract_titles("use #CRISPR# and #Gene therapy#."), ["CRISPR", "Gene therapy"]);
        assert!(extract_titles("no hashtags here").is_empty());
        assert!(extract_titles("broken #title").is_empty());
        assert_eq!(extract_titles("#A# #A# # # #B"), ["A"]);
        assert_eq!(extract_titles("#A#\n#B#"), ["A", "B"]);
    }

    fn kb() -> (tempfile::TempDir, FixtureKb) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("CRISPR.txt"), "CRISPR is a gene editing system.").unwrap();
        std::fs::write(dir.path().join("Gene therapy.txt"), "Gene therapy delivers genes.").unwrap();
        let kb = FixtureKb::new(dir.path());
        (dir, kb)
    }

    #[test]
    fn nonexistent_titles_are_dropped() {
        let (_dir, kb) = kb();
        let titles = vec!["CRISPR".to_string(), "Fake article".to_string(), "CRISPR".to_string()];
        let got = resolve_and_fetch(&kb, &titles).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].title, "CRISPR");
        assert!(resolve_and_fetch(&kb, &[]).unwrap().is_empty());
        assert!(kb.fetch("../escape").unwrap().is_none());
    }

    fn art(title: &str, n: usize) -> KbArticle {
        KbArticle {
            title: title.into(),
            content: "x".repeat(n),
        }
    }

    #[test]
    fn greedy_budget() {
        let arts = vec![art("a", 10_000), art("b", 10_000), art("c", 10_000)];
        let kept: Vec<&str> = within_budget(&arts, 24_000).iter().map(|a| a.title.as_str()).collect();
        assert_eq!(kept, ["a", "b"]);
        assert_eq!(within_budget(&arts, 30_000).len(), 3);
        assert!(within_budget(&arts, 9_999).is_empty());
    }

    #[test]
    fn empty_articles_make_empty_summary_without_a_call() {
        let provider = FnProvider::new("m", |_: &[ChatMessage]| panic!("no call expected"));
        let (summary, exchange) = summarize_context(
            &provider,
            &Prompts::default(),
            "q1",
            "why?",
            &[],
            DEFAULT_BUDGET_CHARS,
            &GenerationParams::default(),
        )
        .unwrap();
        assert_eq!(summary.summary, "");
        assert!(summary.sources.is_empty());
        assert!(exchange.is_none());
    }

    #[test]
    fn full_chain_with_fixture_kb() {
        let (_dir, kb) = kb();
        let provider = FnProvider::new("m", |m: &[ChatMessage]| {
            let user = &m.last().unwrap().content;
            if user.contains("#Article Title#") {
                "Step 1 ... #CRISPR# is relevant, as is #Nonexistent topic#.".to_string()
            } else {
                assert!(user.contains("gene editing"));
                "CRISPR edits\ngenes.".to_string()
            }
        });
        let out = build_context(
            &provider,
            &kb,
            &Prompts::default(),
            "q1",
            "How does CRISPR work?",
            DEFAULT_BUDGET_CHARS,
            &GenerationParams::default(),
        )
        .unwrap();
        assert_eq!(out.proposed, ["CRISPR", "Nonexistent topic"]);
        assert_eq!(out.fetched, ["CRISPR"]);
        assert_eq!(out.context.sources, ["CRISPR"]);
        assert_eq!(out.context.summary, "CRISPR edits genes.");
        assert_eq!(out.exchanges.len(), 2);
    }

    #[test]
    fn extract_response_parsing() {
        let found = r#"{"query":{"pages":[{"pageid":1,"title":"CRISPR","extract":"Text."}]}}"#;
        assert_eq!(parse_extract(found).unwrap().unwrap().content, "Text.");
        let missing = r#"{"query":{"pages":[{"title":"Nope","missing":true}]}}"#;
        assert_eq!(parse_extract(missing).unwrap(), None);
    }

    #[test]
    fn provider_failure_names_question() {
        let (_dir, kb) = kb();
        let strict = crate::llm::MockProvider::new("m", crate::llm::Fixtures::new(), true);
        let err = build_context(
            &strict,
            &kb,
            &Prompts::default(),
            "q42",
            "?",
            DEFAULT_BUDGET_CHARS,
            &GenerationParams::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("q42"));
    }
}
