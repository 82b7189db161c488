//! Offline providers: fixture replay, recording, and closure-backed scripts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{fingerprint, ChatMessage, ChatProvider, Completion, GenerationParams, LlmError, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Text(String),
    Full(FixtureEntry),
}

/// Fingerprint → completion map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fixtures {
    entries: BTreeMap<String, FixtureEntry>,
}

impl Fixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fingerprint: impl Into<String>, completion: impl Into<String>, label: Option<String>) {
        self.entries.insert(
            fingerprint.into(),
            FixtureEntry {
                completion: completion.into(),
                label,
            },
        );
    }

    pub fn get(&self, fingerprint: &str) -> Option<&FixtureEntry> {
        self.entries.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Fixtures, LlmError> {
        let raw: BTreeMap<String, RawEntry> = serde_json::from_str(text).map_err(|e| LlmError::Fixture {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let entries = raw
            .into_iter()
            .map(|(k, v)| {
                let entry = match v {
                    RawEntry::Text(completion) => FixtureEntry {
                        completion,
                        label: None,
                    },
                    RawEntry::Full(e) => e,
                };
                (k, entry)
            })
            .collect();
        Ok(Fixtures { entries })
    }

    /// Loads one fixture file, or every `*.json` file of a directory in name
    /// order. Conflicting entries for the same fingerprint are an error.
    pub fn load(path: &Path) -> Result<Fixtures, LlmError> {
        let err = |message: String| LlmError::Fixture {
            path: path.display().to_string(),
            message,
        };
        if !path.is_dir() {
            let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            return Self::parse(&text, &path.display().to_string());
        }
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| err(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut all = Fixtures::new();
        for file in files {
            let part = Self::load(&file)?;
            all.merge(part).map_err(|fp| err(format!("conflicting fixtures for {fp}")))?;
        }
        Ok(all)
    }

    /// Adds entries from `other`; returns the first conflicting fingerprint.
    pub fn merge(&mut self, other: Fixtures) -> Result<(), String> {
        for (fp, entry) in other.entries {
            match self.entries.get(&fp) {
                Some(existing) if existing.completion != entry.completion => return Err(fp),
                Some(_) => {}
                None => {
                    self.entries.insert(fp, entry);
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.entries).expect("fixtures always serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json_string())
    }
}

/// Replays completions keyed by request fingerprint. Lookups do not depend on
/// call order, so results are independent of scheduling.
pub struct MockProvider {
    model: String,
    fixtures: Fixtures,
    strict: bool,
    misses: Mutex<BTreeSet<String>>,
}

impl MockProvider {
    pub fn new(model: impl Into<String>, fixtures: Fixtures, strict: bool) -> Self {
        Self {
            model: model.into(),
            fixtures,
            strict,
            misses: Mutex::new(BTreeSet::new()),
        }
    }

    /// Fingerprints requested without a fixture (non-strict mode answers them
    /// with an empty completion).
    pub fn misses(&self) -> Vec<String> {
        self.misses.lock().unwrap().iter().cloned().collect()
    }
}

impl ChatProvider for MockProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::NoMessages);
        }
        let fp = fingerprint(&self.model, messages, params);
        match self.fixtures.get(&fp) {
            Some(entry) => Ok(Completion {
                content: entry.completion.clone(),
                fingerprint: fp,
            }),
            None if self.strict => Err(LlmError::MissingFixture(fp)),
            None => {
                self.misses.lock().unwrap().insert(fp.clone());
                Ok(Completion {
                    content: String::new(),
                    fingerprint: fp,
                })
            }
        }
    }
}

/// Wraps a provider and records every completion as a fixture.
pub struct RecordingProvider<P> {
    inner: P,
    recorded: Mutex<Fixtures>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Fixtures::new()),
        }
    }

    pub fn fixtures(&self) -> Fixtures {
        self.recorded.lock().unwrap().clone()
    }
}

fn label_for(messages: &[ChatMessage]) -> Option<String> {
    let last = messages.iter().rev().find(|m| m.role == Role::User)?;
    let head: String = last.content.split_whitespace().collect::<Vec<_>>().join(" ").chars().take(80).collect();
    Some(head)
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError> {
        let completion = self.inner.complete(messages, params)?;
        self.recorded
            .lock()
            .unwrap()
            .insert(completion.fingerprint.clone(), completion.content.clone(), label_for(messages));
        Ok(completion)
    }
}

/// Provider answering from a closure over the message list; useful for
/// scripting fixtures.
pub struct FnProvider<F> {
    model: String,
    respond: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&[ChatMessage]) -> String + Send + Sync,
{
    pub fn new(model: impl Into<String>, respond: F) -> Self {
        Self {
            model: model.into(),
            respond,
        }
    }
}

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&[ChatMessage]) -> String + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::NoMessages);
        }
        Ok(Completion {
            content: (self.respond)(messages),
            fingerprint: fingerprint(&self.model, messages, params),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> Vec<ChatMessage> {
        vec![ChatMessage::user("Is aspirin an NSAID?")]
    }

    #[test]
    fn fixture_echo() {
        let params = GenerationParams::default();
        let mut fx = Fixtures::new();
        fx.insert(fingerprint("m", &request(), &params), "yes", None);
        let mock = MockProvider::new("m", fx, true);
        assert_eq!(mock.complete(&request(), &params).unwrap().content, "yes");
        assert_eq!(mock.complete(&request(), &params).unwrap(), mock.complete(&request(), &params).unwrap());
    }

    #[test]
    fn strict_miss_names_fingerprint() {
        let params = GenerationParams::default();
        let mock = MockProvider::new("m", Fixtures::new(), true);
        let fp = fingerprint("m", &request(), &params);
        match mock.complete(&request(), &params) {
            Err(LlmError::MissingFixture(got)) => assert_eq!(got, fp),
            other => panic!("unexpected {other:?}"),
        }
        let lenient = MockProvider::new("m", Fixtures::new(), false);
        assert_eq!(lenient.complete(&request(), &params).unwrap().content, "");
        assert_eq!(lenient.misses(), vec![fp]);
    }

    #[test]
    fn record_then_replay() {
        let params = GenerationParams::default();
        let rec = RecordingProvider::new(FnProvider::new("m", |_: &[ChatMessage]| "scripted".to_string()));
        rec.complete(&request(), &params).unwrap();
        let text = rec.fixtures().to_json_string();
        let replay = MockProvider::new("m", Fixtures::parse(&text, "mem").unwrap(), true);
        assert_eq!(replay.complete(&request(), &params).unwrap().content, "scripted");
    }

    #[test]
    fn plain_string_entries_and_directory_merge() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), r#"{"fp1":"one"}"#).unwrap();
        std::fs::write(dir.path().join("b.json"), r#"{"fp2":{"completion":"two","label":"second"}}"#).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let fx = Fixtures::load(dir.path()).unwrap();
        assert_eq!(fx.len(), 2);
        assert_eq!(fx.get("fp1").unwrap().completion, "one");
        assert_eq!(fx.get("fp2").unwrap().label.as_deref(), Some("second"));
        std::fs::write(dir.path().join("c.json"), r#"{"fp1":"other"}"#).unwrap();
        assert!(Fixtures::load(dir.path()).is_err());
    }
}
