//! Scoring run files against gold questions.

pub mod metrics;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{DocumentLookup, ExactAnswer, Question, QuestionType};
use crate::runfile::{RunFile, Violation};
use crate::scalar::Scalar;

pub use metrics::{
    average_precision, judge_documents, judge_snippets, normalize_answer, score_factoid, score_judged, score_list,
    score_list_question, score_retrieval, score_yesno, FactoidScores, Judged, ListQuestionScores, ListScores,
    RetrievalQuestionScores, RetrievalScores, YesNoScores, AP_CUTOFF, GMAP_EPSILON,
};

/// Identifies the metric definitions in every report.
pub const METRIC_VERSION: &str =
    "bioqa-metrics/1 (AP@10 over |gold|, GMAP eps=1e-5, snippets relevant on >=1 shared character)";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run file is invalid:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report<F> {
    pub metric_version: String,
    pub documents: Option<RetrievalScores<F>>,
    pub snippets: Option<RetrievalScores<F>>,
    pub yesno: Option<YesNoScores<F>>,
    pub factoid: Option<FactoidScores<F>>,
    pub list: Option<ListScores<F>>,
    pub warnings: Vec<String>,
}

/// Scores the run over the questions it shares with gold. Retrieval tables
/// appear when the run submits documents or snippets, answer tables when it
/// submits any exact answer.
pub fn evaluate_run<F: Scalar>(
    run: &RunFile,
    gold: &[Question],
    docs: Option<&dyn DocumentLookup>,
) -> Result<Report<F>, EvalError> {
    let violations = run.intrinsic_violations(docs);
    if !violations.is_empty() {
        return Err(EvalError::Invalid(violations));
    }
    let gold_by_id: HashMap<&str, &Question> = gold.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    for rq in &run.questions {
        match gold_by_id.get(rq.id.as_str()) {
            Some(g) => pairs.push((rq, *g)),
            None => warnings.push(format!("question {} is not in the gold file; skipped", rq.id)),
        }
    }
    for g in gold {
        if run.get(&g.id).is_none() {
            warnings.push(format!("gold question {} is missing from the run", g.id));
        }
    }

    let submits_docs = pairs.iter().any(|(r, _)| r.documents.is_some());
    let documents = submits_docs.then(|| {
        let judged: Vec<Judged> = pairs
            .iter()
            .filter_map(|(r, g)| {
                let gold_docs = g.gold_documents.as_deref().filter(|d| !d.is_empty())?;
                Some(judge_documents(&r.id, r.documents.as_deref().unwrap_or(&[]), gold_docs))
            })
            .collect();
        score_retrieval(&judged, AP_CUTOFF)
    });
    let submits_snippets = pairs.iter().any(|(r, _)| r.snippets.is_some());
    let snippets = submits_snippets.then(|| {
        let judged: Vec<Judged> = pairs
            .iter()
            .filter_map(|(r, g)| {
                let gold_snips = g.gold_snippets.as_deref().filter(|s| !s.is_empty())?;
                Some(judge_snippets(&r.id, r.snippets.as_deref().unwrap_or(&[]), gold_snips))
            })
            .collect();
        score_retrieval(&judged, AP_CUTOFF)
    });

    let answers = pairs.iter().any(|(r, _)| r.exact_answer.is_some());
    let of_type = |t: QuestionType| {
        pairs
            .iter()
            .filter(move |(_, g)| g.qtype == t && g.gold_exact.is_some())
            .map(|(r, g)| (r.exact_answer.as_ref(), g.gold_exact.as_ref().expect("filtered")))
    };
    let (mut yesno, mut factoid, mut list) = (None, None, None);
    if answers {
        let yn: Vec<(&str, Option<&str>)> = of_type(QuestionType::Yesno)
            .filter_map(|(pred, gold)| match gold {
                ExactAnswer::YesNo(g) => Some((
                    g.as_str(),
                    match pred {
                        Some(ExactAnswer::YesNo(p)) => Some(p.as_str()),
                        _ => None,
                    },
                )),
                _ => None,
            })
            .collect();
        if !yn.is_empty() {
            yesno = Some(score_yesno(&yn));
        }
        let entity_pairs = |t: QuestionType| -> Vec<(&[Vec<String>], &[Vec<String>])> {
            of_type(t)
                .map(|(pred, gold)| {
                    let p: &[Vec<String>] = match pred {
                        Some(a) if a.qtype() == t => a.entities(),
                        _ => &[],
                    };
                    (gold.entities(), p)
                })
                .collect()
        };
        let fa = entity_pairs(QuestionType::Factoid);
        if !fa.is_empty() {
            factoid = Some(score_factoid(&fa));
        }
        let li = entity_pairs(QuestionType::List);
        if !li.is_empty() {
            list = Some(score_list(&li));
        }
    }
    Ok(Report {
        metric_version: METRIC_VERSION.to_string(),
        documents,
        snippets,
        yesno,
        factoid,
        list,
        warnings,
    })
}

fn table<F: Scalar>(out: &mut String, title: &str, n: usize, columns: &[(&str, F)]) {
    let _ = writeln!(out, "\n{title} ({n} questions)");
    let widths: Vec<usize> = columns.iter().map(|(h, _)| h.len().max(6)).collect();
    let header: Vec<String> = columns.iter().zip(&widths).map(|((h, _), w)| format!("{h:>w$}")).collect();
    let values: Vec<String> = columns.iter().zip(&widths).map(|((_, v), w)| format!("{v:>w$.4}")).collect();
    let _ = writeln!(out, "{}", header.join("  "));
    let _ = writeln!(out, "{}", values.join("  "));
}

/// Fixed-width text tables, one per scored task.
pub fn render_report<F: Scalar>(report: &Report<F>) -> String {
    let mut out = format!("metric version: {}\n", report.metric_version);
    for (name, scores) in [("Documents", &report.documents), ("Snippets", &report.snippets)] {
        if let Some(s) = scores {
            table(
                &mut out,
                name,
                s.questions.len(),
                &[
                    ("Precision", s.precision),
                    ("Recall", s.recall),
                    ("F-Measure", s.f_measure),
                    ("MAP", s.map),
                    ("GMAP", s.gmap),
                ],
            );
        }
    }
    if let Some(s) = &report.yesno {
        table(
            &mut out,
            "Yes/No",
            s.questions,
            &[("Accuracy", s.accuracy), ("F1 Yes", s.f1_yes), ("F1 No", s.f1_no), ("Macro F1", s.macro_f1)],
        );
    }
    if let Some(s) = &report.factoid {
        table(
            &mut out,
            "Factoid",
            s.questions,
            &[("Strict Acc.", s.strict_accuracy), ("Lenient Acc.", s.lenient_accuracy), ("MRR", s.mrr)],
        );
    }
    if let Some(s) = &report.list {
        table(
            &mut out,
            "List",
            s.questions,
            &[("Mean Prec.", s.mean_precision), ("Recall", s.recall), ("F-Measure", s.f_measure)],
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
