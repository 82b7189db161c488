//! `key = value` run configuration: defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use bioqa::pipeline::{Phase, PipelineConfig, Shots};
use bioqa::query::{DefaultOperator, FieldSpec};

use crate::UsageError;

/// (key, default, description). An empty default means unset.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("phase", "phase_a", "synergy | phase_a | phase_a_plus | phase_b"),
    ("questions", "", "question file (JSON, BioASQ layout)"),
    ("index", "", "index file(s), comma separated; searched together"),
    ("output", "", "run file to write"),
    ("traces", "", "directory for per-question trace files"),
    ("provider", "mock", "mock | http"),
    ("model", "gpt-4o", "model identifier sent to the provider and hashed into fixture keys"),
    ("fixtures", "", "mock fixture file or directory of *.json files"),
    ("fixtures_strict", "true", "missing fixture is an error (false answers with an empty string)"),
    ("record_fixtures", "", "write every completion of this run to this fixture file"),
    ("endpoint", "https://api.openai.com/v1/chat/completions", "chat completions URL for the http provider"),
    ("api_key_env", "OPENAI_API_KEY", "environment variable holding the provider credential"),
    ("max_attempts", "3", "http attempts per request"),
    ("backoff_ms", "1000,2000,4000", "delays between http attempts, last one repeats"),
    ("timeout_secs", "120", "http request timeout"),
    ("requests_per_minute", "0", "client-side rate limit, 0 disables"),
    ("parallelism", "1", "questions processed concurrently"),
    ("query_shots", "0", "few-shot examples for query generation"),
    ("snippet_shots", "0", "few-shot examples for snippet extraction"),
    ("rerank_shots", "0", "few-shot examples for snippet reranking"),
    ("answer_shots", "0", "few-shot examples for answer generation"),
    ("examples_dir", "", "directory of <kind>.jsonl example sets"),
    ("templates_dir", "", "directory of <template>.txt prompt overrides"),
    ("wiki", "false", "add encyclopedia background context to every prompt"),
    ("kb_dir", "", "offline knowledge base: directory of <title>.txt files"),
    ("wiki_endpoint", bioqa::wiki::DEFAULT_WIKI_ENDPOINT, "live MediaWiki API used when kb_dir is unset"),
    ("wiki_budget_chars", "24000", "character budget for fetched articles"),
    ("retrieval_size", "50", "documents kept per question (1-50)"),
    ("snippet_cap", "10", "snippets kept after reranking (1-10)"),
    ("ideal_max_words", "200", "word cap for ideal answers"),
    ("query_fields", "title^10,abstract", "fields and boosts used to wrap bare query strings"),
    ("query_default_operator", "and", "operator between adjacent terms: and | or"),
    ("temperature", "0", "sampling temperature"),
    ("seed", "", "sampling seed sent to the provider"),
    ("snippet_source", "", "prior run file whose snippets feed phase_a_plus"),
    ("feedback", "", "synergy feedback file"),
];

/// Table appended to `--help`.
pub fn help_table() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from(
        "Configuration keys (config file `key = value`; flags override the file, the file overrides defaults):\n",
    );
    for (key, default, description) in KEYS {
        let default = if default.is_empty() { "(unset)" } else { default };
        out.push_str(&format!("  {key:<width$}  default: {default}\n  {:<width$}  {description}\n", ""));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, d, _)| (*k, d.to_string())).collect(),
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> anyhow::Result<()> {
        let Some((k, _, _)) = KEYS.iter().find(|(k, _, _)| *k == key) else {
            return Err(usage(format!("unknown config key `{key}`")));
        };
        self.values.insert(k, value.into());
        Ok(())
    }

    /// Overlays a `key = value` file. `#` starts a comment line.
    pub fn overlay_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        self.overlay_text(&text, &path.display().to_string())
    }

    pub fn overlay_text(&mut self, text: &str, origin: &str) -> anyhow::Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn overlay_pairs(&mut self, pairs: &[String]) -> anyhow::Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got `{pair}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|v| !v.is_empty())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.opt(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> anyhow::Result<PathBuf> {
        self.path(key).ok_or_else(|| usage(format!("`{key}` is required")))
    }

    pub fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .collect()
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> anyhow::Result<T> {
        self.str(key)
            .parse()
            .map_err(|_| usage(format!("`{key}` has an invalid value `{}`", self.str(key))))
    }

    pub fn bool(&self, key: &str) -> anyhow::Result<bool> {
        match self.str(key).to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(usage(format!("`{key}` expects true or false, got `{other}`"))),
        }
    }

    pub fn phase(&self) -> anyhow::Result<Phase> {
        Phase::parse(self.str("phase")).ok_or_else(|| usage(format!("unknown phase `{}`", self.str("phase"))))
    }

    pub fn backoff(&self) -> anyhow::Result<Vec<Duration>> {
        self.str("backoff_ms")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u64>()
                    .map(Duration::from_millis)
                    .map_err(|_| usage(format!("`backoff_ms` has an invalid entry `{s}`")))
            })
            .collect()
    }

    pub fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let op = self.str("query_default_operator");
        Ok(PipelineConfig {
            phase: self.phase()?,
            shots: Shots {
                query: self.parse("query_shots")?,
                snippet: self.parse("snippet_shots")?,
                rerank: self.parse("rerank_shots")?,
                answer: self.parse("answer_shots")?,
            },
            retrieval_size: self.parse("retrieval_size")?,
            snippet_cap: self.parse("snippet_cap")?,
            ideal_max_words: self.parse("ideal_max_words")?,
            query_fields: FieldSpec::parse_list(self.str("query_fields")).map_err(|e| usage(format!("query_fields: {e}")))?,
            query_default_operator: DefaultOperator::parse(op)
                .ok_or_else(|| usage(format!("unknown query_default_operator `{op}`")))?,
            temperature: self.parse("temperature")?,
            seed: match self.opt("seed") {
                Some(_) => Some(self.parse("seed")?),
                None => None,
            },
            parallelism: self.parse("parallelism")?,
            wiki_budget_chars: self.parse("wiki_budget_chars")?,
        })
    }
}

/// `--shots` accepts one count for every stage or `stage=count` pairs, e.g.
/// `query=10,answer=2`.
pub fn shots_pairs(spec: &str) -> anyhow::Result<Vec<(&'static str, String)>> {
    const STAGES: [(&str, &str); 4] = [
        ("query", "query_shots"),
        ("snippet", "snippet_shots"),
        ("rerank", "rerank_shots"),
        ("answer", "answer_shots"),
    ];
    if spec.trim().parse::<usize>().is_ok() {
        return Ok(STAGES.iter().map(|(_, k)| (*k, spec.trim().to_string())).collect());
    }
    spec.split(',')
        .map(|part| {
            let (stage, n) = part
                .split_once('=')
                .ok_or_else(|| usage(format!("--shots: expected N or stage=N, got `{part}`")))?;
            let key = STAGES
                .iter()
                .find(|(s, _)| *s == stage.trim())
                .map(|(_, k)| *k)
                .ok_or_else(|| usage(format!("--shots: unknown stage `{}`", stage.trim())))?;
            n.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("--shots: bad count `{}`", n.trim())))?;
            Ok((key, n.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_pipeline_defaults() {
        let cfg = Settings::default().pipeline_config().unwrap();
        let d = PipelineConfig::default();
        assert_eq!(cfg.retrieval_size, d.retrieval_size);
        assert_eq!(cfg.snippet_cap, d.snippet_cap);
        assert_eq!(cfg.ideal_max_words, d.ideal_max_words);
        assert_eq!(cfg.query_fields, d.query_fields);
        assert_eq!(cfg.query_default_operator, d.query_default_operator);
        assert_eq!(cfg.wiki_budget_chars, d.wiki_budget_chars);
        assert_eq!(cfg.shots, d.shots);
        assert_eq!(cfg.seed, None);
    }

    #[test]
    fn file_then_pairs() {
        let mut s = Settings::default();
        s.overlay_text("# comment\nphase = phase_b\n\nretrieval_size=20\n", "t").unwrap();
        s.overlay_pairs(&["retrieval_size=5".into()]).unwrap();
        assert_eq!(s.str("phase"), "phase_b");
        assert_eq!(s.parse::<usize>("retrieval_size").unwrap(), 5);
        assert!(s.overlay_text("nope = 1", "t").is_err());
        assert!(s.overlay_text("phase", "t").is_err());
    }

    #[test]
    fn shots_forms() {
        assert_eq!(shots_pairs("2").unwrap().len(), 4);
        assert_eq!(shots_pairs("query=10,answer=2").unwrap(), [("query_shots", "10".into()), ("answer_shots", "2".into())]);
        assert!(shots_pairs("bogus=1").is_err());
    }
}
