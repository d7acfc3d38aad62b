//! Domain types shared across the engine: terms, composition lists,
//! documents, queries and the inner-product similarity.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};

/// Dense term identifier assigned by a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TermId(pub u32);

/// Stream document identifier. Strictly increasing with arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub u64);

/// Registered query identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryId(pub u64);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A dictionary term: its id and lowercased text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub id: TermId,
    pub text: String,
}

/// Interns term strings to dense ids. Ids are stable for the lifetime of the
/// vocabulary and handed out in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct Vocabulary {
    ids: HashMap<String, TermId>,
    terms: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, text: &str) -> TermId {
        if let Some(&id) = self.ids.get(text) {
            return id;
        }
        let id = TermId(self.terms.len() as u32);
        self.terms.push(text.to_owned());
        self.ids.insert(text.to_owned(), id);
        id
    }

    pub fn get(&self, text: &str) -> Option<TermId> {
        self.ids.get(text).copied()
    }

    pub fn text(&self, id: TermId) -> Option<&str> {
        self.terms.get(id.0 as usize).map(String::as_str)
    }

    pub fn term(&self, id: TermId) -> Option<Term> {
        self.text(id).map(|text| Term {
            id,
            text: text.to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// A document's `(term, weight)` pairs, kept sorted by ascending term id with
/// distinct terms and strictly positive weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompositionList {
    entries: Vec<(TermId, f64)>,
}

impl CompositionList {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a canonical list. Repeated terms have their weights summed.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (TermId, f64)>) -> Result<Self> {
        let mut entries: Vec<(TermId, f64)> = pairs.into_iter().collect();
        for &(term, w) in &entries {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidWeight { term, weight: w });
            }
        }
        entries.sort_by_key(|&(t, _)| t);
        entries.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(TermId, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weight of `term`, or 0 when absent.
    pub fn weight(&self, term: TermId) -> f64 {
        match self.entries.binary_search_by_key(&term, |&(t, _)| t) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    /// Multiplies every weight by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|&(t, w)| (t, w * factor)).collect(),
        }
    }

    /// Renders integer-weighted lists back to text by repeating each term
    /// `weight` times. Fractional weights are rounded.
    pub fn render_multiset(&self, vocab: &Vocabulary) -> String {
        let mut out = Vec::new();
        for &(t, w) in &self.entries {
            let text = vocab.text(t).unwrap_or("");
            for _ in 0..(w.round() as usize) {
                out.push(text);
            }
        }
        out.join(" ")
    }
}

/// One element of the document stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: DocId,
    /// Logical ticks; milliseconds for generated streams.
    pub arrival_time: u64,
    pub text: Option<String>,
    pub composition: CompositionList,
    pub duplicate_of: Option<DocId>,
}

impl Document {
    pub fn new(id: DocId, arrival_time: u64, composition: CompositionList) -> Self {
        Self {
            id,
            arrival_time,
            text: None,
            composition,
            duplicate_of: None,
        }
    }

    pub fn from_text(
        id: DocId,
        arrival_time: u64,
        text: &str,
        stopwords: &HashSet<String>,
        vocab: &mut Vocabulary,
    ) -> Self {
        Self {
            id,
            arrival_time,
            text: Some(text.to_owned()),
            composition: tokenize(text, stopwords, vocab),
            duplicate_of: None,
        }
    }

    pub fn is_duplicate(&self) -> bool {
        self.duplicate_of.is_some()
    }
}

/// A continuous text query: weighted terms and result size `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: QueryId,
    terms: Vec<(TermId, f64)>,
    pub k: usize,
}

impl Query {
    pub fn new(id: QueryId, term_weights: impl IntoIterator<Item = (TermId, f64)>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidQuery(format!("query {id}: k must be at least 1")));
        }
        let mut terms: Vec<(TermId, f64)> = term_weights.into_iter().collect();
        if terms.is_empty() {
            return Err(Error::InvalidQuery(format!("query {id} has no terms")));
        }
        for &(term, w) in &terms {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidWeight { term, weight: w });
            }
        }
        terms.sort_by_key(|&(t, _)| t);
        if terms.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidQuery(format!("query {id} repeats a term")));
        }
        Ok(Self { id, terms, k })
    }

    /// Parses whitespace-separated text into a unit-weight query. Stopwords
    /// and repeated tokens collapse.
    pub fn from_text(
        id: QueryId,
        text: &str,
        k: usize,
        stopwords: &HashSet<String>,
        vocab: &mut Vocabulary,
    ) -> Result<Self> {
        let comp = tokenize(text, stopwords, vocab);
        Self::new(id, comp.iter().map(|(t, _)| (t, 1.0)), k)
    }

    /// Query terms in canonical (ascending term id) order.
    pub fn terms(&self) -> &[(TermId, f64)] {
        &self.terms
    }

    /// Number of query terms (`n`).
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn weight(&self, term: TermId) -> f64 {
        match self.terms.binary_search_by_key(&term, |&(t, _)| t) {
            Ok(i) => self.terms[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.id, self.terms.iter().map(|&(t, w)| (t, w * factor)), self.k)
    }
}

/// A scored result entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: DocId,
    pub score: f64,
    pub verified: bool,
}

/// Total order on `(score, doc_id)`. Larger ranks first: higher score, and
/// among equal scores the newer document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankKey {
    pub score: f64,
    pub doc: DocId,
}

impl RankKey {
    pub fn new(score: f64, doc: DocId) -> Self {
        Self { score, doc }
    }
}

impl Eq for RankKey {}

impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| self.doc.cmp(&other.doc))
    }
}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lowercases `text`, splits on non-alphanumeric characters, drops stopwords
/// and counts term frequencies.
pub fn tokenize(text: &str, stopwords: &HashSet<String>, vocab: &mut Vocabulary) -> CompositionList {
    let mut counts: HashMap<TermId, f64> = HashMap::new();
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let token = token.to_lowercase();
        if stopwords.contains(&token) {
            continue;
        }
        *counts.entry(vocab.intern(&token)).or_insert(0.0) += 1.0;
    }
    let mut entries: Vec<(TermId, f64)> = counts.into_iter().collect();
    entries.sort_by_key(|&(t, _)| t);
    CompositionList { entries }
}

/// Inner product `Σ_t w_Qt · w_dt` accumulated over the query terms in
/// canonical order. Bound computations elsewhere sum in the same order so
/// that floating-point rounding stays monotone between them.
pub fn score(doc: &Document, query: &Query) -> f64 {
    score_composition(&doc.composition, query)
}

pub fn score_composition(comp: &CompositionList, query: &Query) -> f64 {
    let mut total = 0.0;
    for &(term, wq) in query.terms() {
        let wd = comp.weight(term);
        if wd > 0.0 {
            total += wq * wd;
        }
    }
    total
}

/// Reads a stopword list, one word per line. A missing file yields the empty
/// set.
pub fn load_stopwords(path: &std::path::Path) -> Result<HashSet<String>> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(HashSet::new()),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn no_stop() -> HashSet<String> {
        HashSet::new()
    }

    #[test]
    fn tokenize_counts_frequencies() {
        let mut v = Vocabulary::new();
        let c = tokenize("red rose red", &no_stop(), &mut v);
        let red = v.get("red").unwrap();
        let rose = v.get("rose").unwrap();
        assert_eq!(c.entries(), &[(red, 2.0), (rose, 1.0)]);
    }

    #[test]
    fn tokenize_empty_and_all_stopwords() {
        let mut v = Vocabulary::new();
        assert!(tokenize("", &no_stop(), &mut v).is_empty());
        let stop: HashSet<String> = ["the".to_string()].into();
        assert!(tokenize("the the the", &stop, &mut v).is_empty());
    }

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        let mut v = Vocabulary::new();
        let c = tokenize("Red,ROSE!red--rose", &no_stop(), &mut v);
        assert_eq!(c.len(), 2);
        assert_eq!(c.weight(v.get("red").unwrap()), 2.0);
        assert_eq!(c.weight(v.get("rose").unwrap()), 2.0);
    }

    fn doc_of(v: &mut Vocabulary, pairs: &[(&str, f64)]) -> Document {
        let comp = CompositionList::from_pairs(pairs.iter().map(|&(t, w)| (v.intern(t), w))).unwrap();
        Document::new(DocId(1), 0, comp)
    }

    fn query_of(v: &mut Vocabulary, pairs: &[(&str, f64)]) -> Query {
        Query::new(QueryId(1), pairs.iter().map(|&(t, w)| (v.intern(t), w)), 1).unwrap()
    }

    #[test]
    fn score_examples() {
        let mut v = Vocabulary::new();
        let q = query_of(&mut v, &[("red", 1.0), ("rose", 1.0)]);
        let d = doc_of(&mut v, &[("red", 2.0), ("thorn", 1.0)]);
        assert_eq!(score(&d, &q), 2.0);

        let d = doc_of(&mut v, &[("blue", 2.0)]);
        assert_eq!(score(&d, &q), 0.0);

        let q = query_of(&mut v, &[("a", 2.0)]);
        let d = doc_of(&mut v, &[("a", 3.0)]);
        assert_eq!(score(&d, &q), 6.0);
    }

    #[test]
    fn query_validation() {
        assert!(Query::new(QueryId(1), vec![], 3).is_err());
        assert!(Query::new(QueryId(1), vec![(TermId(0), 1.0)], 0).is_err());
        assert!(Query::new(QueryId(1), vec![(TermId(0), -1.0)], 1).is_err());
        assert!(Query::new(QueryId(1), vec![(TermId(0), 1.0), (TermId(0), 2.0)], 1).is_err());
    }

    #[test]
    fn composition_rejects_nonpositive_weights() {
        assert!(CompositionList::from_pairs([(TermId(0), 0.0)]).is_err());
        let c = CompositionList::from_pairs([(TermId(3), 1.0), (TermId(1), 2.0), (TermId(3), 1.0)]).unwrap();
        assert_eq!(c.entries(), &[(TermId(1), 2.0), (TermId(3), 2.0)]);
    }

    #[test]
    fn rank_key_orders_by_score_then_newer_doc() {
        let a = RankKey::new(2.0, DocId(1));
        let b = RankKey::new(2.0, DocId(5));
        let c = RankKey::new(3.0, DocId(0));
        assert!(b > a);
        assert!(c > b);
    }

    #[test]
    fn missing_stopword_file_is_empty() {
        let s = load_stopwords(std::path::Path::new("/nonexistent/stop.txt")).unwrap();
        assert!(s.is_empty());
    }

    fn small_comp() -> impl Strategy<Value = Vec<(u32, u32)>> {
        proptest::collection::vec((0u32..20, 1u32..6), 0..12)
    }

    proptest! {
        #[test]
        fn score_matches_explicit_intersection(d in small_comp(), q in proptest::collection::btree_map(0u32..20, 1u32..5, 1..6)) {
            let comp = CompositionList::from_pairs(d.iter().map(|&(t, w)| (TermId(t), w as f64))).unwrap();
            let query = Query::new(QueryId(0), q.iter().map(|(&t, &w)| (TermId(t), w as f64)), 1).unwrap();
            let mut brute = 0.0;
            for (&t, &wq) in &q {
                for &(dt, dw) in comp.entries() {
                    if dt == TermId(t) {
                        brute += wq as f64 * dw;
                    }
                }
            }
            prop_assert!((score_composition(&comp, &query) - brute).abs() < 1e-9);
            let doubled = query.scaled(2.0).unwrap();
            prop_assert!((score_composition(&comp, &doubled) - 2.0 * score_composition(&comp, &query)).abs() < 1e-9);
        }

        #[test]
        fn tokenize_reproduces_rendered_multiset(words in proptest::collection::vec("[a-z]{1,4}", 0..20)) {
            let mut v = Vocabulary::new();
            let stop = HashSet::new();
            let first = tokenize(&words.join(" "), &stop, &mut v);
            let rendered = first.render_multiset(&v);
            let again = tokenize(&rendered, &stop, &mut v);
            prop_assert_eq!(first, again);
        }
    }
}
