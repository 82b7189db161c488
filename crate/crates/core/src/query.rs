//! Boolean query-string language and the JSON query envelope.
//!
//! Grammar (a strict subset of the Lucene query-string syntax):
//!
//! ```text
//! expr    := seq ( "OR" seq )*
//! seq     := primary+            adjacency, combined with the default operator
//! primary := TERM | "\"" words "\"" | "(" expr ")"
//! ```
//!
//! Adjacency binds tighter than `OR`. Fielded terms, `AND`/`NOT`, `+`/`-`
//! prefixes, wildcards, fuzziness, ranges and escapes are rejected so that
//! callers can ask the model for a corrected query.

use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum QueryAst {
    Term(String),
    Phrase(Vec<String>),
    And(Vec<QueryAst>),
    Or(Vec<QueryAst>),
}

impl QueryAst {
    /// Conjunction with nested conjunctions flattened; a single child is
    /// returned as is.
    pub fn and(children: Vec<QueryAst>) -> QueryAst {
        Self::combine(children, true)
    }

    pub fn or(children: Vec<QueryAst>) -> QueryAst {
        Self::combine(children, false)
    }

    fn combine(children: Vec<QueryAst>, conj: bool) -> QueryAst {
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            match child {
                QueryAst::And(inner) if conj => flat.extend(inner),
                QueryAst::Or(inner) if !conj => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            return flat.pop().unwrap();
        }
        if conj {
            QueryAst::And(flat)
        } else {
            QueryAst::Or(flat)
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&QueryAst> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a QueryAst>) {
        match self {
            QueryAst::Term(_) | QueryAst::Phrase(_) => out.push(self),
            QueryAst::And(c) | QueryAst::Or(c) => c.iter().for_each(|n| n.collect_leaves(out)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefaultOperator {
    And,
    Or,
}

impl DefaultOperator {
    pub fn parse(s: &str) -> Option<DefaultOperator> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Some(DefaultOperator::And),
            "or" => Some(DefaultOperator::Or),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DefaultOperator::And => "and",
            DefaultOperator::Or => "or",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub field: String,
    pub boost: f64,
}

impl FieldSpec {
    pub fn new(field: impl Into<String>, boost: f64) -> Self {
        Self {
            field: field.into(),
            boost,
        }
    }

    /// Parses `name` or `name^boost`.
    pub fn parse(spec: &str) -> Result<FieldSpec, EnvelopeError> {
        let spec = spec.trim();
        let (field, boost) = match spec.split_once('^') {
            None => (spec, 1.0),
            Some((field, raw)) => {
                let boost: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| EnvelopeError::InvalidBoost(spec.to_string()))?;
                (field, boost)
            }
        };
        if !(boost.is_finite() && boost > 0.0) {
            return Err(EnvelopeError::InvalidBoost(spec.to_string()));
        }
        if field.is_empty() {
            return Err(EnvelopeError::Malformed(format!("empty field name in {spec:?}")));
        }
        Ok(FieldSpec::new(field, boost))
    }

    /// Comma-separated list, e.g. `title^10,abstract`.
    pub fn parse_list(specs: &str) -> Result<Vec<FieldSpec>, EnvelopeError> {
        specs
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(FieldSpec::parse)
            .collect()
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.boost == 1.0 {
            f.write_str(&self.field)
        } else {
            write!(f, "{}^{}", self.field, self.boost)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryErrorKind {
    #[error("empty query")]
    Empty,
    #[error("unbalanced quote")]
    UnbalancedQuote,
    #[error("unbalanced parenthesis")]
    UnbalancedParen,
    #[error("empty group")]
    EmptyGroup,
    #[error("empty phrase")]
    EmptyPhrase,
    #[error("dangling OR")]
    DanglingOperator,
    #[error("unsupported syntax {0:?}")]
    Unsupported(String),
}

/// Parse failure with the code-point offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {position}")]
pub struct QueryError {
    pub kind: QueryErrorKind,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Open,
    Close,
    Or,
    Word(String),
    Phrase(Vec<String>),
}

const SPECIAL: &[char] = &[':', '^', '~', '*', '?', '[', ']', '{', '}', '\\', '/'];
const RESERVED: &[&str] = &["AND", "NOT", "&&", "||"];

fn is_delim(c: char) -> bool {
    c.is_whitespace() || c == '(' || c == ')' || c == '"'
}

/// True when `word` can be a bare term.
pub fn is_valid_term(word: &str) -> bool {
    !word.is_empty()
        && word != "OR"
        && !RESERVED.contains(&word)
        && !word.starts_with(['+', '-', '!'])
        && !word.chars().any(|c| is_delim(c) || SPECIAL.contains(&c))
}

fn lex(text: &str) -> Result<Vec<(Lexeme, usize)>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |kind, position| QueryError { kind, position };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            out.push((Lexeme::Open, i));
            i += 1;
        } else if c == ')' {
            out.push((Lexeme::Close, i));
            i += 1;
        } else if c == '"' {
            let start = i;
            let close = chars[i + 1..]
                .iter()
                .position(|&c| c == '"')
                .ok_or_else(|| err(QueryErrorKind::UnbalancedQuote, start))?;
            let inner: String = chars[i + 1..i + 1 + close].iter().collect();
            let words: Vec<String> = inner.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(err(QueryErrorKind::EmptyPhrase, start));
            }
            out.push((Lexeme::Phrase(words), start));
            i += close + 2;
        } else {
            let start = i;
            while i < chars.len() && !is_delim(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if word == "OR" {
                out.push((Lexeme::Or, start));
                continue;
            }
            if RESERVED.contains(&word.as_str()) || word.starts_with(['+', '-', '!']) {
                return Err(err(QueryErrorKind::Unsupported(word), start));
            }
            if let Some(off) = word.chars().position(|c| SPECIAL.contains(&c)) {
                return Err(err(QueryErrorKind::Unsupported(word), start + off));
            }
            out.push((Lexeme::Word(word), start));
        }
    }
    Ok(out)
}

struct Parser {
    lexemes: Vec<(Lexeme, usize)>,
    pos: usize,
    end: usize,
    op: DefaultOperator,
}

impl Parser {
    fn peek(&self) -> Option<&(Lexeme, usize)> {
        self.lexemes.get(self.pos)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |l| l.1)
    }

    fn expr(&mut self) -> Result<QueryAst, QueryError> {
        let mut branches = vec![self.seq()?];
        while let Some((Lexeme::Or, at)) = self.peek() {
            let at = *at;
            self.pos += 1;
            match self.peek() {
                None | Some((Lexeme::Or | Lexeme::Close, _)) => {
                    return Err(QueryError {
                        kind: QueryErrorKind::DanglingOperator,
                        position: at,
                    })
                }
                _ => branches.push(self.seq()?),
            }
        }
        Ok(QueryAst::or(branches))
    }

    fn seq(&mut self) -> Result<QueryAst, QueryError> {
        let mut items = Vec::new();
        loop {
            match self.peek() {
                Some((Lexeme::Word(_) | Lexeme::Phrase(_) | Lexeme::Open, _)) => items.push(self.primary()?),
                _ => break,
            }
        }
        if items.is_empty() {
            let kind = match self.peek() {
                Some((Lexeme::Or, _)) => QueryErrorKind::DanglingOperator,
                Some((Lexeme::Close, _)) => QueryErrorKind::UnbalancedParen,
                _ => QueryErrorKind::Empty,
            };
            return Err(QueryError {
                kind,
                position: self.here(),
            });
        }
        Ok(match self.op {
            DefaultOperator::And => QueryAst::and(items),
            DefaultOperator::Or => QueryAst::or(items),
        })
    }

    fn primary(&mut self) -> Result<QueryAst, QueryError> {
        let (lexeme, at) = self.lexemes[self.pos].clone();
        self.pos += 1;
        match lexeme {
            Lexeme::Word(w) => Ok(QueryAst::Term(w)),
            Lexeme::Phrase(words) => Ok(QueryAst::Phrase(words)),
            Lexeme::Open => {
                if let Some((Lexeme::Close, _)) = self.peek() {
                    return Err(QueryError {
                        kind: QueryErrorKind::EmptyGroup,
                        position: at,
                    });
                }
                let inner = self.expr()?;
                match self.peek() {
                    Some((Lexeme::Close, _)) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(QueryError {
                        kind: QueryErrorKind::UnbalancedParen,
                        position: at,
                    }),
                }
            }
            Lexeme::Close | Lexeme::Or => unreachable!("seq only dispatches on primaries"),
        }
    }
}

/// Parses a bare query string. Never panics; failures carry a position.
pub fn parse_query_string(text: &str, op: DefaultOperator) -> Result<QueryAst, QueryError> {
    let lexemes = lex(text)?;
    let end = text.chars().count();
    if lexemes.is_empty() {
        return Err(QueryError {
            kind: QueryErrorKind::Empty,
            position: 0,
        });
    }
    let mut parser = Parser {
        lexemes,
        pos: 0,
        end,
        op,
    };
    let ast = parser.expr()?;
    if let Some((lexeme, at)) = parser.peek() {
        let kind = match lexeme {
            Lexeme::Close => QueryErrorKind::UnbalancedParen,
            _ => QueryErrorKind::DanglingOperator,
        };
        return Err(QueryError { kind, position: *at });
    }
    Ok(ast)
}

fn render_leaf(ast: &QueryAst) -> String {
    match ast {
        QueryAst::Term(t) => t.clone(),
        QueryAst::Phrase(words) => format!("\"{}\"", words.join(" ")),
        _ => unreachable!(),
    }
}

/// Renders an AST for the `and` default operator.
pub fn render(ast: &QueryAst) -> String {
    match ast {
        QueryAst::Term(_) | QueryAst::Phrase(_) => render_leaf(ast),
        QueryAst::And(children) => children
            .iter()
            .map(|c| match c {
                QueryAst::Or(_) | QueryAst::And(_) => format!("({})", render(c)),
                _ => render(c),
            })
            .collect::<Vec<_>>()
            .join(" "),
        QueryAst::Or(children) => children
            .iter()
            .map(|c| match c {
                QueryAst::Or(_) => format!("({})", render(c)),
                _ => render(c),
            })
            .collect::<Vec<_>>()
            .join(" OR "),
    }
}

/// Renders for an arbitrary default operator. Under `or`, conjunctions have
/// no surface syntax, so ASTs containing `And` yield `None`.
pub fn render_with(ast: &QueryAst, op: DefaultOperator) -> Option<String> {
    match op {
        DefaultOperator::And => Some(render(ast)),
        DefaultOperator::Or => match ast {
            QueryAst::Term(_) | QueryAst::Phrase(_) => Some(render_leaf(ast)),
            QueryAst::And(_) => None,
            QueryAst::Or(children) => children
                .iter()
                .map(|c| render_with(c, op))
                .collect::<Option<Vec<_>>>()
                .map(|parts| parts.join(" ")),
        },
    }
}

/// A parsed query plus the fields, operator and result size to run it with.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEnvelope {
    pub query: String,
    pub ast: QueryAst,
    pub fields: Vec<FieldSpec>,
    pub default_operator: DefaultOperator,
    pub size: usize,
}

pub const DEFAULT_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("missing query text")]
    MissingQuery,
    #[error("invalid field boost in {0:?}")]
    InvalidBoost(String),
    #[error("invalid query string: {0}")]
    Query(#[from] QueryError),
}

impl QueryEnvelope {
    pub fn from_query_string(
        query: &str,
        fields: Vec<FieldSpec>,
        default_operator: DefaultOperator,
        size: usize,
    ) -> Result<QueryEnvelope, EnvelopeError> {
        if fields.is_empty() {
            return Err(EnvelopeError::Malformed("no fields".into()));
        }
        if size == 0 {
            return Err(EnvelopeError::Malformed("size must be at least 1".into()));
        }
        Ok(QueryEnvelope {
            ast: parse_query_string(query, default_operator)?,
            query: query.to_string(),
            fields,
            default_operator,
            size,
        })
    }

    /// The JSON request body this envelope corresponds to.
    pub fn to_json(&self) -> Value {
        json!({
            "query": {
                "query_string": {
                    "query": self.query,
                    "fields": self.fields.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
                    "default_operator": self.default_operator.as_str(),
                }
            },
            "size": self.size,
        })
    }
}

/// Parses `{"query":{"query_string":{"query","fields","default_operator"}},"size"}`.
/// Missing `fields` default to title and abstract, a missing operator to `or`
/// and a missing size to 50.
pub fn parse_query_envelope(payload: &str) -> Result<QueryEnvelope, EnvelopeError> {
    let value: Value = serde_json::from_str(payload).map_err(|e| EnvelopeError::Json(e.to_string()))?;
    envelope_from_value(&value)
}

pub fn envelope_from_value(value: &Value) -> Result<QueryEnvelope, EnvelopeError> {
    let qs = value
        .get("query")
        .and_then(|q| q.get("query_string"))
        .ok_or_else(|| EnvelopeError::Malformed("expected query.query_string".into()))?;
    let query = qs
        .get("query")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or(EnvelopeError::MissingQuery)?;
    let fields = match qs.get("fields") {
        None | Some(Value::Null) => vec![FieldSpec::new("title", 1.0), FieldSpec::new("abstract", 1.0)],
        Some(Value::Array(items)) => items
            .iter()
            .map(|f| {
                f.as_str()
                    .ok_or_else(|| EnvelopeError::Malformed("fields must be strings".into()))
                    .and_then(FieldSpec::parse)
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(EnvelopeError::Malformed("fields must be an array".into())),
    };
    let default_operator = match qs.get("default_operator") {
        None | Some(Value::Null) => DefaultOperator::Or,
        Some(v) => v
            .as_str()
            .and_then(DefaultOperator::parse)
            .ok_or_else(|| EnvelopeError::Malformed(format!("unknown default_operator {v}")))?,
    };
    let size = match value.get("size") {
        None | Some(Value::Null) => DEFAULT_SIZE,
        Some(v) => v
            .as_u64()
            .filter(|&n| n >= 1)
            .ok_or_else(|| EnvelopeError::Malformed(format!("size must be a positive integer, got {v}")))?
            as usize,
    };
    QueryEnvelope::from_query_string(query, fields, default_operator, size)
}
