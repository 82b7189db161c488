//! Prompt templates and their rendering.
//!
//! Templates are plain text with `{key}` placeholders. Rendering is a single
//! pass: substituted values are never rescanned, and braces that do not name
//! a supplied key are kept literally so JSON examples survive.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Document;
use crate::llm::ChatMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    System,
    QueryExpansion,
    QueryString,
    ImprovedQuery,
    SnippetExtraction,
    SnippetRerank,
    AnswerYesno,
    AnswerFactoid,
    AnswerList,
    AnswerIdeal,
    WikiArticles,
    WikiSummary,
}

impl TemplateName {
    pub const ALL: [TemplateName; 12] = [
        TemplateName::System,
        TemplateName::QueryExpansion,
        TemplateName::QueryString,
        TemplateName::ImprovedQuery,
        TemplateName::SnippetExtraction,
        TemplateName::SnippetRerank,
        TemplateName::AnswerYesno,
        TemplateName::AnswerFactoid,
        TemplateName::AnswerList,
        TemplateName::AnswerIdeal,
        TemplateName::WikiArticles,
        TemplateName::WikiSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::System => "system",
            TemplateName::QueryExpansion => "query_expansion",
            TemplateName::QueryString => "query_string",
            TemplateName::ImprovedQuery => "improved_query",
            TemplateName::SnippetExtraction => "snippet_extraction",
            TemplateName::SnippetRerank => "snippet_rerank",
            TemplateName::AnswerYesno => "answer_yesno",
            TemplateName::AnswerFactoid => "answer_factoid",
            TemplateName::AnswerList => "answer_list",
            TemplateName::AnswerIdeal => "answer_ideal",
            TemplateName::WikiArticles => "wiki_articles",
            TemplateName::WikiSummary => "wiki_summary",
        }
    }

    fn default_text(self) -> &'static str {
        match self {
            TemplateName::System => include_str!("../templates/system.txt"),
            TemplateName::QueryExpansion => include_str!("../templates/query_expansion.txt"),
            TemplateName::QueryString => include_str!("../templates/query_string.txt"),
            TemplateName::ImprovedQuery => include_str!("../templates/improved_query.txt"),
            TemplateName::SnippetExtraction => include_str!("../templates/snippet_extraction.txt"),
            TemplateName::SnippetRerank => include_str!("../templates/snippet_rerank.txt"),
            TemplateName::AnswerYesno => include_str!("../templates/answer_yesno.txt"),
            TemplateName::AnswerFactoid => include_str!("../templates/answer_factoid.txt"),
            TemplateName::AnswerList => include_str!("../templates/answer_list.txt"),
            TemplateName::AnswerIdeal => include_str!("../templates/answer_ideal.txt"),
            TemplateName::WikiArticles => include_str!("../templates/wiki_articles.txt"),
            TemplateName::WikiSummary => include_str!("../templates/wiki_summary.txt"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Replaces `{key}` for every supplied key in one left-to-right pass.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Numbered snippet block: one `[i] text` line per snippet, 0-based.
pub fn numbered_block(texts: &[&str]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("[{i}] {}", one_line(t)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Bulleted snippet block used by the answering prompts.
pub fn bullet_block(texts: &[&str]) -> String {
    texts.iter().map(|t| format!("- {}", one_line(t))).collect::<Vec<_>>().join("\n")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Prefix for the live user turn when background context is available.
pub fn with_background(summary: Option<&str>, user: String) -> String {
    match summary {
        Some(s) if !s.trim().is_empty() => format!("Background: {}\n\n{user}", s.trim()),
        _ => user,
    }
}

#[derive(Debug, Clone)]
pub struct Prompts {
    templates: BTreeMap<TemplateName, String>,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            templates: TemplateName::ALL.iter().map(|&t| (t, t.default_text().to_string())).collect(),
        }
    }
}

impl Prompts {
    /// Shipped templates, with `<name>.txt` files from `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Prompts, PromptError> {
        let mut prompts = Prompts::default();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{}.txt", name.as_str()));
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                prompts.templates.insert(name, text);
            }
        }
        Ok(prompts)
    }

    pub fn template(&self, name: TemplateName) -> &str {
        &self.templates[&name]
    }

    pub fn set(&mut self, name: TemplateName, text: impl Into<String>) {
        self.templates.insert(name, text.into());
    }

    pub fn render(&self, name: TemplateName, vars: &[(&str, &str)]) -> String {
        render(self.template(name), vars).trim_end().to_string()
    }

    pub fn system(&self) -> ChatMessage {
        ChatMessage::system(self.template(TemplateName::System).trim())
    }

    /// `[system, user]` for a rendered user turn.
    pub fn conversation(&self, user: String) -> Vec<ChatMessage> {
        vec![self.system(), ChatMessage::user(user)]
    }

    pub fn query_expansion(&self, question: &str) -> String {
        self.render(TemplateName::QueryExpansion, &[("question", question)])
    }

    pub fn query_string(&self, question: &str) -> String {
        self.render(TemplateName::QueryString, &[("question", question)])
    }

    pub fn improved_query(&self, question: &str, query: &str) -> String {
        self.render(TemplateName::ImprovedQuery, &[("question", question), ("query", query)])
    }

    pub fn snippet_extraction(&self, question: &str, doc: &Document) -> String {
        self.render(
            TemplateName::SnippetExtraction,
            &[("question", question), ("title", &doc.title), ("abstract", &doc.abstract_text)],
        )
    }

    pub fn snippet_rerank(&self, question: &str, snippets: &[&str], cap: usize) -> String {
        let block = numbered_block(snippets);
        let cap = cap.to_string();
        self.render(
            TemplateName::SnippetRerank,
            &[("question", question), ("snippets", &block), ("cap", &cap)],
        )
    }

    pub fn answer(&self, name: TemplateName, question: &str, snippets: &[&str], max_words: usize) -> String {
        let block = bullet_block(snippets);
        let max_words = max_words.to_string();
        self.render(
            name,
            &[("question", question), ("snippets", &block), ("max_words", &max_words)],
        )
    }

    pub fn wiki_articles(&self, question: &str) -> String {
        self.render(TemplateName::WikiArticles, &[("question", question)])
    }

    pub fn wiki_summary(&self, question: &str, articles: &str) -> String {
        self.render(TemplateName::WikiSummary, &[("question", question), ("articles", articles)])
    }
}
