//! Retrieval and question-answering metrics.
//!
//! AP@k = Σ_{i≤k} rel(i)·P@i / |gold|, GMAP = exp(mean ln(AP + ε)).

use std::collections::BTreeSet;

use serde::Serialize;

use crate::corpus::Snippet;
use crate::scalar::Scalar;

pub const AP_CUTOFF: usize = 10;
pub const GMAP_EPSILON: f64 = 1e-5;

/// Relevance of one submitted list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judged {
    pub id: String,
    /// Per submitted item: relevant for precision.
    pub relevant: Vec<bool>,
    /// Per submitted item: relevant for AP, each gold item credited once.
    pub ap_relevant: Vec<bool>,
    /// Gold items matched by at least one submitted item.
    pub gold_found: usize,
    pub gold_total: usize,
}

/// Documents are relevant when in gold; repeats count as irrelevant.
pub fn judge_documents(id: &str, submitted: &[String], gold: &[String]) -> Judged {
    let gold: BTreeSet<&str> = gold.iter().map(String::as_str).collect();
    let mut seen = BTreeSet::new();
    let relevant: Vec<bool> = submitted
        .iter()
        .map(|d| seen.insert(d.as_str()) && gold.contains(d.as_str()))
        .collect();
    Judged {
        id: id.to_string(),
        gold_found: relevant.iter().filter(|r| **r).count(),
        ap_relevant: relevant.clone(),
        relevant,
        gold_total: gold.len(),
    }
}

/// A snippet is relevant when it shares a character with a gold snippet of
/// the same document and section. For AP, each gold snippet is claimed by the
/// first submitted snippet overlapping it, so AP stays within [0, 1].
pub fn judge_snippets(id: &str, submitted: &[Snippet], gold: &[Snippet]) -> Judged {
    let mut claimed = vec![false; gold.len()];
    let mut relevant = Vec::with_capacity(submitted.len());
    let mut ap_relevant = Vec::with_capacity(submitted.len());
    for s in submitted {
        relevant.push(gold.iter().any(|g| g.overlaps(s)));
        let claim = gold.iter().enumerate().find(|(i, g)| !claimed[*i] && g.overlaps(s)).map(|(i, _)| i);
        if let Some(i) = claim {
            claimed[i] = true;
        }
        ap_relevant.push(claim.is_some());
    }
    Judged {
        id: id.to_string(),
        relevant,
        ap_relevant,
        gold_found: gold.iter().filter(|g| submitted.iter().any(|s| g.overlaps(s))).count(),
        gold_total: gold.len(),
    }
}

fn ratio<F: Scalar>(num: usize, den: usize) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::from_count(num) / F::from_count(den)
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f_measure<F: Scalar>(p: F, r: F) -> F {
    if p + r == F::zero() {
        F::zero()
    } else {
        F::lit(2.0) * p * r / (p + r)
    }
}

/// Mean over values summed in sorted order, so it does not depend on the
/// order questions arrive in.
fn mean<F: Scalar>(values: impl IntoIterator<Item = F>) -> F {
    let mut v: Vec<F> = values.into_iter().collect();
    if v.is_empty() {
        return F::zero();
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("metrics are never NaN"));
    let n = F::from_count(v.len());
    v.into_iter().fold(F::zero(), |acc, x| acc + x) / n
}

pub fn average_precision<F: Scalar>(ap_relevant: &[bool], gold_total: usize, cutoff: usize) -> F {
    if gold_total == 0 {
        return F::zero();
    }
    let mut hits = 0;
    let mut sum = F::zero();
    for (k, &rel) in ap_relevant.iter().take(cutoff).enumerate() {
        if rel {
            hits += 1;
            sum = sum + ratio::<F>(hits, k + 1);
        }
    }
    sum / F::from_count(gold_total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalQuestionScores<F> {
    pub id: String,
    pub precision: F,
    pub recall: F,
    pub f_measure: F,
    pub average_precision: F,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalScores<F> {
    pub questions: Vec<RetrievalQuestionScores<F>>,
    pub precision: F,
    pub recall: F,
    pub f_measure: F,
    pub map: F,
    pub gmap: F,
}

pub fn score_judged<F: Scalar>(j: &Judged, cutoff: usize) -> RetrievalQuestionScores<F> {
    let precision = ratio::<F>(j.relevant.iter().filter(|r| **r).count(), j.relevant.len());
    let recall = ratio::<F>(j.gold_found, j.gold_total);
    RetrievalQuestionScores {
        id: j.id.clone(),
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        average_precision: average_precision(&j.ap_relevant, j.gold_total, cutoff),
    }
}

pub fn score_retrieval<F: Scalar>(judged: &[Judged], cutoff: usize) -> RetrievalScores<F> {
    let questions: Vec<RetrievalQuestionScores<F>> = judged.iter().map(|j| score_judged(j, cutoff)).collect();
    let eps = F::lit(GMAP_EPSILON);
    let gmap = if questions.is_empty() {
        F::zero()
    } else {
        mean(questions.iter().map(|q| (q.average_precision + eps).ln())).exp()
    };
    RetrievalScores {
        precision: mean(questions.iter().map(|q| q.precision)),
        recall: mean(questions.iter().map(|q| q.recall)),
        f_measure: mean(questions.iter().map(|q| q.f_measure)),
        map: mean(questions.iter().map(|q| q.average_precision)),
        gmap,
        questions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YesNoScores<F> {
    pub questions: usize,
    pub accuracy: F,
    pub f1_yes: F,
    pub f1_no: F,
    pub macro_f1: F,
}

/// `(gold, prediction)` pairs. A missing or non yes/no prediction is wrong.
pub fn score_yesno<F: Scalar>(pairs: &[(&str, Option<&str>)]) -> YesNoScores<F> {
    let class_f1 = |label: &str| {
        let tp = pairs.iter().filter(|(g, p)| *g == label && *p == Some(label)).count();
        let predicted = pairs.iter().filter(|(_, p)| *p == Some(label)).count();
        let actual = pairs.iter().filter(|(g, _)| *g == label).count();
        f_measure(ratio::<F>(tp, predicted), ratio::<F>(tp, actual))
    };
    let correct = pairs
        .iter()
        .filter(|(g, p)| p.is_some_and(|p| p == *g && (p == "yes" || p == "no")))
        .count();
    let f1_yes = class_f1("yes");
    let f1_no = class_f1("no");
    YesNoScores {
        questions: pairs.len(),
        accuracy: ratio(correct, pairs.len()),
        f1_yes,
        f1_no,
        macro_f1: (f1_yes + f1_no) / F::lit(2.0),
    }
}

/// Casefolded, punctuation removed, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    let kept: String = s
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn synonym_set(entity: &[String]) -> BTreeSet<String> {
    entity.iter().map(|s| normalize_answer(s)).filter(|s| !s.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactoidScores<F> {
    pub questions: usize,
    pub strict_accuracy: F,
    pub lenient_accuracy: F,
    pub mrr: F,
}

/// `(gold entities, ranked predictions)`; only the first five predictions
/// count. A prediction matches when any of its synonyms equals any gold string.
pub fn score_factoid<F: Scalar>(items: &[(&[Vec<String>], &[Vec<String>])]) -> FactoidScores<F> {
    let mut strict = 0;
    let mut lenient = 0;
    let mut rr = Vec::with_capacity(items.len());
    for (gold, pred) in items {
        let gold: BTreeSet<String> = gold.iter().flat_map(|e| synonym_set(e)).collect();
        let rank = pred
            .iter()
            .take(crate::corpus::FACTOID_CAP)
            .position(|e| !synonym_set(e).is_disjoint(&gold));
        match rank {
            Some(r) => {
                if r == 0 {
                    strict += 1;
                }
                lenient += 1;
                rr.push(F::one() / F::from_count(r + 1));
            }
            None => rr.push(F::zero()),
        }
    }
    FactoidScores {
        questions: items.len(),
        strict_accuracy: ratio(strict, items.len()),
        lenient_accuracy: ratio(lenient, items.len()),
        mrr: mean(rr),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListQuestionScores<F> {
    pub precision: F,
    pub recall: F,
    pub f_measure: F,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListScores<F> {
    pub questions: usize,
    pub mean_precision: F,
    pub recall: F,
    pub f_measure: F,
}

pub fn score_list_question<F: Scalar>(gold: &[Vec<String>], pred: &[Vec<String>]) -> ListQuestionScores<F> {
    let gold: Vec<BTreeSet<String>> = gold.iter().map(|e| synonym_set(e)).filter(|s| !s.is_empty()).collect();
    let mut preds: Vec<BTreeSet<String>> = Vec::new();
    for e in pred {
        let s = synonym_set(e);
        if !s.is_empty() && !preds.contains(&s) {
            preds.push(s);
        }
    }
    let matched = preds.iter().filter(|p| gold.iter().any(|g| !g.is_disjoint(p))).count();
    let covered = gold.iter().filter(|g| preds.iter().any(|p| !g.is_disjoint(p))).count();
    let precision = ratio::<F>(matched, preds.len());
    let recall = ratio::<F>(covered, gold.len());
    ListQuestionScores {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
    }
}

pub fn score_list<F: Scalar>(items: &[(&[Vec<String>], &[Vec<String>])]) -> ListScores<F> {
    let per: Vec<ListQuestionScores<F>> = items.iter().map(|(g, p)| score_list_question(g, p)).collect();
    ListScores {
        questions: items.len(),
        mean_precision: mean(per.iter().map(|q| q.precision)),
        recall: mean(per.iter().map(|q| q.recall)),
        f_measure: mean(per.iter().map(|q| q.f_measure)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Section;
    use proptest::prelude::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn ents(v: &[&str]) -> Vec<Vec<String>> {
        v.iter().map(|s| vec![s.to_string()]).collect()
    }

    #[test]
    fn hand_average_precision() {
        let j = judge_documents("q", &strs(&["d1", "d2", "d3"]), &strs(&["d1", "d3"]));
        let s: RetrievalScores<f64> = score_retrieval(&[j], AP_CUTOFF);
        assert!((s.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall, 1.0);
    }

    #[test]
    fn perfect_run() {
        let j = judge_documents("q", &strs(&["a", "b"]), &strs(&["a", "b"]));
        let s: RetrievalScores<f64> = score_retrieval(&[j], AP_CUTOFF);
        assert_eq!((s.precision, s.recall, s.f_measure, s.map), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn gmap_hand_case() {
        // AP 0.5 for q1 (one of two gold at rank 1), 0.125 for q2 (one of two gold at rank 4)
        let a = judge_documents("a", &strs(&["g1"]), &strs(&["g1", "g2"]));
        let b = judge_documents("b", &strs(&["x", "y", "z", "g1"]), &strs(&["g1", "g2"]));
        let s: RetrievalScores<f64> = score_retrieval(&[a, b], AP_CUTOFF);
        assert_eq!(s.questions[0].average_precision, 0.5);
        assert_eq!(s.questions[1].average_precision, 0.125);
        assert!((s.gmap - 0.25).abs() < 1e-4);
        assert!(s.gmap <= s.map + GMAP_EPSILON);
    }

    #[test]
    fn yesno_hand_cases() {
        let all_yes: Vec<(&str, Option<&str>)> =
            vec![("yes", Some("yes")), ("yes", Some("yes")), ("yes", Some("yes")), ("no", Some("yes")), ("no", Some("yes"))];
        let s: YesNoScores<f64> = score_yesno(&all_yes);
        assert!((s.f1_yes - 0.75).abs() < 1e-15);
        assert_eq!(s.f1_no, 0.0);
        assert!((s.macro_f1 - 0.375).abs() < 1e-15);
        let perfect: YesNoScores<f64> = score_yesno(&[("yes", Some("yes")), ("no", Some("no"))]);
        assert_eq!(perfect.macro_f1, 1.0);
        let empty: YesNoScores<f64> = score_yesno(&[]);
        assert_eq!((empty.accuracy, empty.macro_f1), (0.0, 0.0));
        let missing: YesNoScores<f64> = score_yesno(&[("yes", None), ("no", Some("no"))]);
        assert_eq!(missing.accuracy, 0.5);
        assert!((missing.f1_no - 1.0).abs() < 1e-15);
        assert_eq!(missing.f1_yes, 0.0);
    }

    #[test]
    fn factoid_hand_cases() {
        let gold = ents(&["BRCA1"]);
        let pred = ents(&["TP53", "BRCA1"]);
        let s: FactoidScores<f64> = score_factoid(&[(&gold, &pred)]);
        assert_eq!((s.strict_accuracy, s.lenient_accuracy, s.mrr), (0.0, 1.0, 0.5));
        let spaced = ents(&["brca1 "]);
        let s: FactoidScores<f64> = score_factoid(&[(&gold, &spaced)]);
        assert_eq!(s.strict_accuracy, 1.0);
        let late = ents(&["a", "b", "c", "d", "e", "BRCA1"]);
        let s: FactoidScores<f64> = score_factoid(&[(&gold, &late)]);
        assert_eq!((s.strict_accuracy, s.lenient_accuracy, s.mrr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn list_hand_cases() {
        let gold = ents(&["a", "b", "c"]);
        let s = score_list_question::<f64>(&gold, &ents(&["a", "d"]));
        assert_eq!(s.precision, 0.5);
        assert!((s.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.f_measure - 0.4).abs() < 1e-15);
        let s = score_list_question::<f64>(&gold, &[]);
        assert_eq!((s.precision, s.recall, s.f_measure), (0.0, 0.0, 0.0));
        let s = score_list_question::<f64>(&gold, &ents(&["a", "a", "b", "c"]));
        assert_eq!((s.precision, s.recall), (1.0, 1.0));
    }

    #[test]
    fn snippet_claims_keep_ap_bounded() {
        let g = Snippet {
            doc_id: "d".into(),
            section: Section::Abstract,
            begin: 0,
            end: 50,
            text: "x".repeat(50),
        };
        let mk = |b, e| Snippet {
            begin: b,
            end: e,
            text: "x".repeat(e - b),
            ..g.clone()
        };
        let j = judge_snippets("q", &[mk(0, 10), mk(10, 20), mk(60, 70)], &[g.clone()]);
        assert_eq!(j.relevant, [true, true, false]);
        assert_eq!(j.ap_relevant, [true, false, false]);
        let s = score_judged::<f64>(&j, AP_CUTOFF);
        assert_eq!(s.average_precision, 1.0);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        let other_section = Snippet {
            section: Section::Title,
            ..mk(0, 10)
        };
        assert!(!judge_snippets("q", &[other_section], &[g]).relevant[0]);
    }

    #[test]
    fn generic_over_f32() {
        let j = judge_documents("q", &strs(&["d1", "d2", "d3"]), &strs(&["d1", "d3"]));
        let s: RetrievalScores<f32> = score_retrieval(&[j], AP_CUTOFF);
        assert!((s.map - 0.833_333_3).abs() < 1e-6);
    }

    fn doc_instance() -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
        let ids = prop::collection::vec(0u8..15, 0..10);
        prop::collection::vec((ids.clone(), ids), 1..20).prop_map(|qs| {
            qs.into_iter()
                .map(|(run, gold)| {
                    let f = |v: Vec<u8>| v.into_iter().map(|i| format!("d{i}")).collect::<Vec<_>>();
                    (f(run), f(gold))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn retrieval_bounds_and_permutation(inst in doc_instance(), rot in 0usize..20) {
            let judged: Vec<Judged> = inst.iter().enumerate()
                .map(|(i, (r, g))| judge_documents(&i.to_string(), r, g))
                .collect();
            let s: RetrievalScores<f64> = score_retrieval(&judged, AP_CUTOFF);
            for v in [s.precision, s.recall, s.f_measure, s.map] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            // the epsilon shift lets a perfect run reach 1 + eps
            prop_assert!(s.gmap > 0.0 && s.gmap <= 1.0 + GMAP_EPSILON + 1e-12);
            prop_assert!(s.gmap <= s.map + GMAP_EPSILON + 1e-12);
            let mut rotated = judged.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let t: RetrievalScores<f64> = score_retrieval(&rotated, AP_CUTOFF);
            prop_assert_eq!((s.precision, s.recall, s.f_measure, s.map, s.gmap), (t.precision, t.recall, t.f_measure, t.map, t.gmap));
        }

        #[test]
        fn yesno_macro_identity(pairs in prop::collection::vec((prop::bool::ANY, prop::option::of(prop::bool::ANY)), 0..20)) {
            let yn = |b: bool| if b { "yes" } else { "no" };
            let pairs: Vec<(&str, Option<&str>)> = pairs.iter().map(|(g, p)| (yn(*g), p.map(yn))).collect();
            let s: YesNoScores<f64> = score_yesno(&pairs);
            prop_assert_eq!(s.macro_f1, (s.f1_yes + s.f1_no) / 2.0);
            for v in [s.accuracy, s.f1_yes, s.f1_no, s.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn factoid_ordering(items in prop::collection::vec(
            (prop::collection::vec("[a-d]", 1..3), prop::collection::vec("[a-f]", 0..6)), 1..20)
        ) {
            let items: Vec<(Vec<Vec<String>>, Vec<Vec<String>>)> = items.into_iter()
                .map(|(g, p)| (g.into_iter().map(|s| vec![s]).collect(), p.into_iter().map(|s| vec![s]).collect()))
                .collect();
            let refs: Vec<(&[Vec<String>], &[Vec<String>])> = items.iter().map(|(g, p)| (&g[..], &p[..])).collect();
            let s: FactoidScores<f64> = score_factoid(&refs);
            prop_assert!(s.strict_accuracy <= s.mrr + 1e-12);
            prop_assert!(s.mrr <= s.lenient_accuracy + 1e-12);
        }
    }
}
