//! Pure pieces of the per-question flow.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{Document, Section, Snippet};

fn char_index(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}

/// Whitespace-collapsed copy of `s` with, for every output char, the code
/// point index it came from in `s`.
fn normalize_with_map(s: &str) -> (String, Vec<usize>) {
    let mut out = String::new();
    let mut map = Vec::new();
    let mut pending_space: Option<usize> = None;
    for (i, c) in s.chars().enumerate() {
        if c.is_whitespace() {
            if !out.is_empty() && pending_space.is_none() {
                pending_space = Some(i);
            }
            continue;
        }
        if let Some(at) = pending_space.take() {
            out.push(' ');
            map.push(at);
        }
        out.push(c);
        map.push(i);
    }
    (out, map)
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Finds `candidate` in the title, then the abstract: verbatim first, then
/// modulo whitespace runs, mapping back to original offsets.
pub fn locate_snippet(doc: &Document, candidate: &str) -> Option<Snippet> {
    let needle = candidate.trim();
    if needle.is_empty() {
        return None;
    }
    for section in Section::ALL {
        let text = doc.section(section);
        if let Some(b) = text.find(needle) {
            let begin = char_index(text, b);
            let end = begin + needle.chars().count();
            return Snippet::from_document(doc, section, begin, end);
        }
    }
    let needle = collapse(needle);
    for section in Section::ALL {
        let (norm, map) = normalize_with_map(doc.section(section));
        if let Some(b) = norm.find(&needle) {
            let nb = char_index(&norm, b);
            let ne = nb + needle.chars().count();
            return Snippet::from_document(doc, section, map[nb], map[ne - 1] + 1);
        }
    }
    None
}

/// Valid, first-occurrence indices below `n`, at most `cap` of them.
pub fn select_ranking(ranking: &[usize], n: usize, cap: usize) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    ranking
        .iter()
        .copied()
        .filter(|&i| i < n && seen.insert(i))
        .take(cap)
        .collect()
}

/// Documents ordered by the first reranked snippet that cites them; the rest
/// follow in their prior order.
pub fn rerank_documents(reranked: &[Snippet], docs: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in reranked {
        if docs.contains(&s.doc_id) && !out.contains(&s.doc_id) {
            out.push(s.doc_id.clone());
        }
    }
    for d in docs {
        if !out.contains(d) {
            out.push(d.clone());
        }
    }
    out
}

/// Keeps documents that produced at least one snippet, in order.
pub fn filter_documents_by_snippets(docs: &[String], snippets: &HashMap<String, Vec<Snippet>>) -> Vec<String> {
    docs.iter()
        .filter(|d| snippets.get(*d).is_some_and(|s| !s.is_empty()))
        .cloned()
        .collect()
}

/// Concatenation without repeated spans, first occurrence kept.
pub fn merge_snippets(first: &[Snippet], second: &[Snippet]) -> Vec<Snippet> {
    let mut seen = BTreeSet::new();
    first
        .iter()
        .chain(second)
        .filter(|s| seen.insert((s.doc_id.clone(), s.section, s.begin, s.end)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc() -> Document {
        Document::new("1", "Circular RNAs", "CircRNAs are produced by back splicing.")
    }

    #[test]
    fn exact_offsets() {
        let s = locate_snippet(&doc(), "produced by back splicing").unwrap();
        assert_eq!((s.section, s.begin, s.end), (Section::Abstract, 13, 38));
        assert!(locate_snippet(&doc(), "made by splicing").is_none());
        let t = locate_snippet(&doc(), "Circular RNAs").unwrap();
        assert_eq!((t.section, t.begin, t.end), (Section::Title, 0, 13));
    }

    #[test]
    fn whitespace_normalized_match_maps_back() {
        let d = Document::new("2", "T", "Alpha  beta\n gamma délta.");
        let s = locate_snippet(&d, "beta gamma\tdélta").unwrap();
        assert_eq!(s.text, "beta\n gamma délta");
        assert_eq!((s.begin, s.end), (7, 24));
        s.check_against(&d).unwrap();
    }

    #[test]
    fn ranking_selection() {
        assert_eq!(select_ranking(&[5, 2, 9], 23, 10), [5, 2, 9]);
        assert_eq!(select_ranking(&[2, 2, 99], 23, 10), [2]);
        assert_eq!(select_ranking(&(0..20).collect::<Vec<_>>(), 23, 10).len(), 10);
    }

    fn s(doc: &str) -> Snippet {
        Snippet {
            doc_id: doc.into(),
            section: Section::Abstract,
            begin: 0,
            end: 1,
            text: "x".into(),
        }
    }

    #[test]
    fn document_reranking() {
        let docs: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        assert_eq!(rerank_documents(&[s("B"), s("A"), s("B")], &docs), ["B", "A", "C"]);
        assert_eq!(rerank_documents(&[], &docs), docs);
    }

    #[test]
    fn filtering_keeps_order() {
        let docs: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let map = HashMap::from([("A".to_string(), vec![s("A")]), ("B".to_string(), vec![]), ("C".to_string(), vec![s("C")])]);
        assert_eq!(filter_documents_by_snippets(&docs, &map), ["A", "C"]);
    }

    proptest! {
        #[test]
        fn located_snippets_satisfy_slice_invariant(
            abstract_text in "[a-zé ,.\n]{0,60}",
            a in 0usize..60,
            len in 1usize..20,
        ) {
            let d = Document::new("p", "title", abstract_text.clone());
            let chars: Vec<char> = abstract_text.chars().collect();
            let a = a.min(chars.len());
            let b = (a + len).min(chars.len());
            let candidate: String = chars[a..b].iter().collect();
            if let Some(sn) = locate_snippet(&d, &candidate) {
                prop_assert!(sn.check_against(&d).is_ok());
            } else {
                prop_assert!(candidate.trim().is_empty());
            }
        }
    }
}
