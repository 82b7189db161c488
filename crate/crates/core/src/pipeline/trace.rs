//! Per-question stage traces.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::llm::{ChatMessage, Exchange};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceExchange {
    pub fingerprint: String,
    pub messages: Vec<ChatMessage>,
    pub completion: String,
}

impl From<Exchange> for TraceExchange {
    fn from(e: Exchange) -> Self {
        Self {
            fingerprint: e.completion.fingerprint,
            messages: e.messages,
            completion: e.completion.content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dropped {
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    pub stage: String,
    pub exchanges: Vec<TraceExchange>,
    pub dropped: Vec<Dropped>,
    pub notes: Vec<String>,
    pub elapsed_ms: u64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl StageTrace {
    pub fn start(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            exchanges: Vec::new(),
            dropped: Vec::new(),
            notes: Vec::new(),
            elapsed_ms: 0,
            started: Some(Instant::now()),
        }
    }

    pub fn exchanges(&mut self, exchanges: impl IntoIterator<Item = Exchange>) {
        self.exchanges.extend(exchanges.into_iter().map(TraceExchange::from));
    }

    pub fn drop_item(&mut self, item: impl Into<String>, reason: impl Into<String>) {
        self.dropped.push(Dropped {
            item: item.into(),
            reason: reason.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    fn finish(&mut self) {
        if let Some(t) = self.started.take() {
            self.elapsed_ms = t.elapsed().as_millis() as u64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionTrace {
    pub question_id: String,
    pub phase: String,
    pub stages: Vec<StageTrace>,
    /// Deterministic fallbacks taken, e.g. `yesno_fallback`.
    pub flags: Vec<String>,
    /// Cause of a per-question failure, if any.
    pub error: Option<String>,
}

impl QuestionTrace {
    pub fn new(question_id: &str, phase: &str) -> Self {
        Self {
            question_id: question_id.to_string(),
            phase: phase.to_string(),
            stages: Vec::new(),
            flags: Vec::new(),
            error: None,
        }
    }

    pub fn push(&mut self, mut stage: StageTrace) {
        stage.finish();
        self.stages.push(stage);
    }

    pub fn flag(&mut self, flag: &str) {
        self.flags.push(flag.to_string());
    }

    pub fn stage(&self, name: &str) -> Option<&StageTrace> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Every prompt message sent in the named stage.
    pub fn prompts_of(&self, name: &str) -> Vec<&ChatMessage> {
        self.stages
            .iter()
            .filter(|s| s.stage == name)
            .flat_map(|s| s.exchanges.iter().flat_map(|e| e.messages.iter()))
            .collect()
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("traces always serialize");
        s.push('\n');
        s
    }
}

/// File name for a question id, keeping only filename-safe characters.
pub fn trace_file_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

pub fn write_traces(dir: &Path, traces: &[QuestionTrace]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in traces {
        std::fs::write(dir.join(trace_file_name(&t.question_id)), t.to_json_string())?;
    }
    Ok(())
}
