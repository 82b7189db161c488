//! Lenient readers for model completions.

use serde_json::Value;

use crate::query::{envelope_from_value, parse_query_string, DefaultOperator, FieldSpec, QueryEnvelope};

/// Drops a surrounding Markdown code fence, if any.
pub fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

fn json_value(s: &str) -> Result<Value, String> {
    let t = strip_fences(s);
    if let Ok(v) = serde_json::from_str(t) {
        return Ok(v);
    }
    // Tolerate prose around a single JSON object or array.
    let start = t.find(['{', '[']).ok_or("no JSON found")?;
    let end = t.rfind(['}', ']']).filter(|&e| e > start).ok_or("no JSON found")?;
    serde_json::from_str(&t[start..=end]).map_err(|e| e.to_string())
}

/// The array under `key`, or a bare top-level array.
fn array_under(v: Value, key: &str) -> Result<Vec<Value>, String> {
    match v {
        Value::Array(items) => Ok(items),
        Value::Object(mut map) => match map.remove(key) {
            Some(Value::Array(items)) => Ok(items),
            Some(_) => Err(format!("\"{key}\" is not an array")),
            None => Err(format!("missing \"{key}\"")),
        },
        _ => Err(format!("expected an object with \"{key}\"")),
    }
}

/// `{"snippets": [...]}` or a bare array of strings.
pub fn parse_snippet_texts(s: &str) -> Result<Vec<String>, String> {
    array_under(json_value(s)?, "snippets")?
        .into_iter()
        .map(|v| match v {
            Value::String(t) => Ok(t),
            other => Err(format!("snippet {other} is not a string")),
        })
        .collect()
}

/// `{"ranking": [...]}` or a bare array. Numeric strings are accepted;
/// entries that are not non-negative integers are skipped.
pub fn parse_ranking(s: &str) -> Result<Vec<usize>, String> {
    let items = array_under(json_value(s)?, "ranking")?;
    Ok(items
        .iter()
        .filter_map(|v| match v {
            Value::Number(n) => n.as_u64().map(|n| n as usize),
            Value::String(t) => t.trim().trim_start_matches('[').trim_end_matches(']').parse().ok(),
            _ => None,
        })
        .collect())
}

/// `{"entities": [...]}` or a bare array; each entity is a string or a list of
/// synonyms. Entities are trimmed and empty ones dropped.
pub fn parse_entities(s: &str) -> Result<Vec<Vec<String>>, String> {
    let items = array_under(json_value(s)?, "entities")?;
    let mut out = Vec::new();
    for item in items {
        let synonyms: Vec<String> = match item {
            Value::String(t) => vec![t],
            Value::Array(syns) => syns.into_iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
            _ => continue,
        };
        let synonyms: Vec<String> = synonyms
            .into_iter()
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if !synonyms.is_empty() {
            out.push(synonyms);
        }
    }
    Ok(out)
}

/// First word after casefolding and stripping punctuation, if it is yes/no.
pub fn normalize_yesno(s: &str) -> Option<&'static str> {
    let first = s.split_whitespace().next()?;
    let word: String = first.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    match word.as_str() {
        "yes" => Some("yes"),
        "no" => Some("no"),
        _ => None,
    }
}

/// Collapses whitespace and keeps at most `max_words` words.
pub fn normalize_ideal(s: &str, max_words: usize) -> String {
    s.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ")
}

/// A full query envelope as JSON.
pub fn parse_envelope_completion(s: &str) -> Result<QueryEnvelope, String> {
    let v = json_value(s)?;
    envelope_from_value(&v).map_err(|e| e.to_string())
}

/// A bare query string, wrapped with the given fields. A completion that is
/// itself an envelope contributes only its query text.
pub fn parse_query_completion(
    s: &str,
    fields: &[FieldSpec],
    op: DefaultOperator,
    size: usize,
) -> Result<QueryEnvelope, String> {
    let t = strip_fences(s);
    let text = if t.starts_with('{') {
        parse_envelope_completion(t)?.query
    } else {
        let line = t.lines().map(str::trim).find(|l| !l.is_empty()).ok_or("empty completion")?;
        let line = line.strip_prefix("Query:").unwrap_or(line).trim();
        unquote(line).to_string()
    };
    parse_query_string(&text, op).map_err(|e| e.to_string())?;
    QueryEnvelope::from_query_string(&text, fields.to_vec(), op, size).map_err(|e| e.to_string())
}

fn unquote(s: &str) -> &str {
    for q in ['`', '\''] {
        if let Some(inner) = s.strip_prefix(q).and_then(|r| r.strip_suffix(q)) {
            return inner;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QueryAst;

    #[test]
    fn fences_and_prose() {
        assert_eq!(strip_fences("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(parse_snippet_texts("Here you go: {\"snippets\": [\"x\"]} done").unwrap(), vec!["x"]);
        assert_eq!(parse_snippet_texts("[\"a\",\"b\"]").unwrap(), vec!["a", "b"]);
        assert!(parse_snippet_texts("none").is_err());
    }

    #[test]
    fn rankings() {
        assert_eq!(parse_ranking("{\"ranking\":[5,2,9]}").unwrap(), vec![5, 2, 9]);
        assert_eq!(parse_ranking("[2,\"2\",-1,\"x\",99]").unwrap(), vec![2, 2, 99]);
        assert!(parse_ranking("5, 2").is_err());
    }

    #[test]
    fn entities() {
        let e = parse_entities("{\"entities\":[\" BRCA1 \",[\"p53\",\"TP53\"],\"\",7]}").unwrap();
        assert_eq!(e, vec![vec!["BRCA1".to_string()], vec!["p53".to_string(), "TP53".to_string()]]);
    }

    #[test]
    fn yesno() {
        assert_eq!(normalize_yesno("Yes, because the data show it."), Some("yes"));
        assert_eq!(normalize_yesno("\"No.\""), Some("no"));
        assert_eq!(normalize_yesno("Maybe"), None);
        assert_eq!(normalize_yesno(""), None);
    }

    #[test]
    fn ideal() {
        assert_eq!(normalize_ideal("a\n b\t\tc", 200), "a b c");
        let long = vec!["w"; 400].join(" ");
        assert_eq!(normalize_ideal(&long, 200).split(' ').count(), 200);
    }

    #[test]
    fn bare_query_strings() {
        let fields = vec![FieldSpec::new("title", 10.0), FieldSpec::new("abstract", 1.0)];
        let env = parse_query_completion("exon OR intron", &fields, DefaultOperator::And, 50).unwrap();
        assert_eq!(env.fields, fields);
        assert_eq!(env.size, 50);
        assert_eq!(
            env.ast,
            QueryAst::or(vec![QueryAst::Term("exon".into()), QueryAst::Term("intron".into())])
        );
        let fenced = parse_query_completion("```\nexon OR intron\n```", &fields, DefaultOperator::And, 50).unwrap();
        assert_eq!(fenced.ast, env.ast);
        assert!(parse_query_completion("I cannot help: with that?", &fields, DefaultOperator::And, 50).is_err());
    }
}
