//! The sliding-window document store and the in-memory inverted index built
//! on top of it.
//!
//! Every term of interest maps to an impact-ordered posting list and a
//! threshold tree. Posting lists are ordered by `(weight desc, doc desc)`;
//! internally they are `BTreeSet`s in ascending key order, so the list head is
//! the set's last element. Threshold trees hold one `(θ, query)` pair per
//! query containing the term and answer "which queries have θ ≤ w".

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::ops::Bound;

use crate::error::{Error, Result};
use crate::model::{DocId, Document, QueryId, TermId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    CountBased,
    TimeBased,
}

/// Count-based windows keep the `capacity` most recent documents; time-based
/// windows keep documents younger than `capacity` ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPolicy {
    pub kind: WindowKind,
    pub capacity: u64,
}

impl WindowPolicy {
    pub fn count(capacity: u64) -> Result<Self> {
        Self::new(WindowKind::CountBased, capacity)
    }

    pub fn time(capacity: u64) -> Result<Self> {
        Self::new(WindowKind::TimeBased, capacity)
    }

    pub fn new(kind: WindowKind, capacity: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("window size must be at least 1".into()));
        }
        Ok(Self { kind, capacity })
    }

    /// Whether the oldest document, which arrived at `head_time`, must leave
    /// a window of `len` documents at time `now`.
    pub fn expires(&self, head_time: u64, len: usize, now: u64) -> bool {
        match self.kind {
            WindowKind::CountBased => len as u64 > self.capacity,
            WindowKind::TimeBased => now.saturating_sub(head_time) >= self.capacity,
        }
    }
}

/// FIFO list of the documents currently in the window.
#[derive(Debug, Default, Clone)]
pub struct DocumentStore {
    docs: VecDeque<Document>,
    last_id: Option<DocId>,
    clock: u64,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Largest arrival time seen so far.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn front(&self) -> Option<&Document> {
        self.docs.front()
    }

    /// Id of the most recently inserted document, evicted or not.
    pub fn last_id(&self) -> Option<DocId> {
        self.last_id
    }

    fn position(&self, id: DocId) -> Option<usize> {
        self.docs.binary_search_by_key(&id, |d| d.id).ok()
    }

    pub fn get(&self, id: DocId) -> Option<&Document> {
        self.position(id).map(|i| &self.docs[i])
    }

    pub fn get_mut(&mut self, id: DocId) -> Option<&mut Document> {
        self.position(id).map(move |i| &mut self.docs[i])
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.position(id).is_some()
    }

    pub fn check_order(&self, doc: &Document) -> Result<()> {
        if let Some(last) = self.last_id {
            if doc.id <= last {
                return Err(Error::OutOfOrderId { last, got: doc.id });
            }
        }
        if doc.arrival_time < self.clock {
            return Err(Error::OutOfOrderTime {
                doc: doc.id,
                now: self.clock,
                got: doc.arrival_time,
            });
        }
        Ok(())
    }

    fn push(&mut self, doc: Document) {
        self.last_id = Some(doc.id);
        self.clock = self.clock.max(doc.arrival_time);
        self.docs.push_back(doc);
    }

    fn pop_front(&mut self) -> Option<Document> {
        self.docs.pop_front()
    }
}

/// Position inside a posting list: `(weight, doc)` ordered ascending, so the
/// list head is the maximum. Used both for real entries and for frontier
/// positions that need not coincide with an entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostingKey {
    pub weight: f64,
    pub doc: u64,
}

impl PostingKey {
    /// Below every real entry (all weights are positive).
    pub const BOTTOM: PostingKey = PostingKey { weight: 0.0, doc: 0 };

    pub fn new(weight: f64, doc: DocId) -> Self {
        Self { weight, doc: doc.0 }
    }

    pub fn is_bottom(&self) -> bool {
        *self == Self::BOTTOM
    }

    /// The smallest position strictly above `self` for the same weight.
    pub fn successor(self) -> Self {
        Self {
            weight: self.weight,
            doc: self.doc + 1,
        }
    }

    pub fn doc_id(&self) -> DocId {
        DocId(self.doc)
    }
}

impl Eq for PostingKey {}

impl Ord for PostingKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then_with(|| self.doc.cmp(&other.doc))
    }
}

impl PartialOrd for PostingKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// An `(doc, w_dt)` pair stored in a posting list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactEntry {
    pub doc_id: DocId,
    pub weight: f64,
}

impl From<PostingKey> for ImpactEntry {
    fn from(k: PostingKey) -> Self {
        Self {
            doc_id: DocId(k.doc),
            weight: k.weight,
        }
    }
}

/// Impact-ordered posting list with logarithmic insert and delete.
#[derive(Debug, Default, Clone)]
pub struct InvertedList {
    entries: BTreeSet<PostingKey>,
}

impl InvertedList {
    pub fn insert(&mut self, doc: DocId, weight: f64) -> bool {
        self.entries.insert(PostingKey::new(weight, doc))
    }

    pub fn remove(&mut self, doc: DocId, weight: f64) -> bool {
        self.entries.remove(&PostingKey::new(weight, doc))
    }

    pub fn contains_key(&self, key: &PostingKey) -> bool {
        self.entries.contains(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<PostingKey> {
        self.entries.last().copied()
    }

    /// Largest entry strictly below `pos`: the next entry a downward scan
    /// from `pos` would pop.
    pub fn next_below(&self, pos: PostingKey) -> Option<PostingKey> {
        self.entries.range(..pos).next_back().copied()
    }

    /// Smallest entry strictly above `pos`.
    pub fn next_above(&self, pos: PostingKey) -> Option<PostingKey> {
        self.entries
            .range((Bound::Excluded(pos), Bound::Unbounded))
            .next()
            .copied()
    }

    /// Entries in list order: weight descending, newer document first.
    pub fn iter(&self) -> impl Iterator<Item = ImpactEntry> + '_ {
        self.entries.iter().rev().map(|&k| k.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ThresholdKey {
    theta: f64,
    query: QueryId,
}

impl Eq for ThresholdKey {}

impl Ord for ThresholdKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.theta
            .total_cmp(&other.theta)
            .then_with(|| self.query.cmp(&other.query))
    }
}

impl PartialOrd for ThresholdKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-term registry of local thresholds θ_Q,t, ordered by threshold.
#[derive(Debug, Default, Clone)]
pub struct ThresholdTree {
    ordered: BTreeSet<ThresholdKey>,
    current: HashMap<QueryId, f64>,
}

impl ThresholdTree {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn threshold(&self, query: QueryId) -> Option<f64> {
        self.current.get(&query).copied()
    }

    pub fn contains(&self, query: QueryId) -> bool {
        self.current.contains_key(&query)
    }

    pub fn register(&mut self, query: QueryId, theta: f64) {
        if let Some(old) = self.current.insert(query, theta) {
            self.ordered.remove(&ThresholdKey { theta: old, query });
        }
        self.ordered.insert(ThresholdKey { theta, query });
    }

    pub fn unregister(&mut self, query: QueryId) -> bool {
        match self.current.remove(&query) {
            Some(theta) => {
                self.ordered.remove(&ThresholdKey { theta, query });
                true
            }
            None => false,
        }
    }

    /// Replaces the threshold of an already registered query.
    pub fn set_local_threshold(&mut self, query: QueryId, theta: f64) -> Result<()> {
        let old = self
            .current
            .get_mut(&query)
            .ok_or(Error::MissingThreshold { query, term: TermId(u32::MAX) })?;
        if *old == theta {
            return Ok(());
        }
        self.ordered.remove(&ThresholdKey { theta: *old, query });
        *old = theta;
        self.ordered.insert(ThresholdKey { theta, query });
        Ok(())
    }

    /// Queries whose threshold is at most `w`, scanning from the low end.
    pub fn probe(&self, w: f64) -> impl Iterator<Item = QueryId> + '_ {
        self.ordered
            .iter()
            .take_while(move |k| k.theta <= w)
            .map(|k| k.query)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, QueryId)> + '_ {
        self.ordered.iter().map(|k| (k.theta, k.query))
    }
}

#[derive(Debug, Default, Clone)]
pub struct TermEntry {
    pub postings: InvertedList,
    pub thresholds: ThresholdTree,
}

impl TermEntry {
    fn is_unused(&self) -> bool {
        self.postings.is_empty() && self.thresholds.is_empty()
    }
}

/// Term → (posting list, threshold tree). A term is present only while some
/// indexed document or registered query uses it.
#[derive(Debug, Default, Clone)]
pub struct Dictionary {
    terms: HashMap<TermId, TermEntry>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn entry(&self, term: TermId) -> Option<&TermEntry> {
        self.terms.get(&term)
    }

    pub fn postings(&self, term: TermId) -> Option<&InvertedList> {
        self.terms.get(&term).map(|e| &e.postings)
    }

    pub fn thresholds(&self, term: TermId) -> Option<&ThresholdTree> {
        self.terms.get(&term).map(|e| &e.thresholds)
    }

    pub fn terms(&self) -> impl Iterator<Item = (TermId, &TermEntry)> {
        self.terms.iter().map(|(&t, e)| (t, e))
    }

    pub fn index_document(&mut self, doc: &Document) {
        for (term, w) in doc.composition.iter() {
            self.terms.entry(term).or_default().postings.insert(doc.id, w);
        }
    }

    pub fn unindex_document(&mut self, doc: &Document) {
        for (term, w) in doc.composition.iter() {
            if let Some(e) = self.terms.get_mut(&term) {
                e.postings.remove(doc.id, w);
                if e.is_unused() {
                    self.terms.remove(&term);
                }
            }
        }
    }

    pub fn register_threshold(&mut self, term: TermId, query: QueryId, theta: f64) {
        self.terms.entry(term).or_default().thresholds.register(query, theta);
    }

    pub fn unregister_threshold(&mut self, term: TermId, query: QueryId) {
        if let Some(e) = self.terms.get_mut(&term) {
            e.thresholds.unregister(query);
            if e.is_unused() {
                self.terms.remove(&term);
            }
        }
    }

    pub fn set_local_threshold(&mut self, term: TermId, query: QueryId, theta: f64) -> Result<()> {
        self.terms
            .get_mut(&term)
            .ok_or(Error::MissingThreshold { query, term })?
            .thresholds
            .set_local_threshold(query, theta)
            .map_err(|_| Error::MissingThreshold { query, term })
    }

    /// Queries registered on `term` whose threshold is at most `w`.
    pub fn probe_thresholds(&self, term: TermId, w: f64) -> Vec<QueryId> {
        self.thresholds(term)
            .map(|t| t.probe(w).collect())
            .unwrap_or_default()
    }
}

/// The window contents `D` together with the inverted index over them.
#[derive(Debug, Clone)]
pub struct Window {
    policy: WindowPolicy,
    store: DocumentStore,
    dict: Dictionary,
    indexed: bool,
}

impl Window {
    pub fn new(policy: WindowPolicy) -> Self {
        Self {
            policy,
            store: DocumentStore::new(),
            dict: Dictionary::new(),
            indexed: true,
        }
    }

    /// A window that keeps documents but builds no postings.
    pub fn unindexed(policy: WindowPolicy) -> Self {
        Self {
            indexed: false,
            ..Self::new(policy)
        }
    }

    pub fn is_indexed(&self) -> bool {
        self.indexed
    }

    pub fn policy(&self) -> WindowPolicy {
        self.policy
    }

    pub fn store(&self) -> &DocumentStore {
        &self.store
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn dictionary_mut(&mut self) -> &mut Dictionary {
        &mut self.dict
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut DocumentStore, &mut Dictionary) {
        (&mut self.store, &mut self.dict)
    }

    /// Appends `doc` at the tail of the window. Duplicates occupy a window
    /// slot but get no impact entries.
    pub fn insert_document(&mut self, doc: Document) -> Result<()> {
        self.store.check_order(&doc)?;
        if self.indexed && !doc.is_duplicate() {
            self.dict.index_document(&doc);
        }
        self.store.push(doc);
        Ok(())
    }

    /// Removes and returns, oldest first, every head document that violates
    /// the window policy at time `now`.
    pub fn evict_expired(&mut self, now: u64) -> Vec<Document> {
        std::iter::from_fn(|| self.pop_expired(now)).collect()
    }

    /// Removes the oldest document if it violates the window policy at time
    /// `now`.
    pub fn pop_expired(&mut self, now: u64) -> Option<Document> {
        let head = self.store.front()?;
        if self.policy.expires(head.arrival_time, self.store.len(), now) {
            self.pop_oldest()
        } else {
            None
        }
    }

    /// Unconditionally removes the oldest document. Used when expiration is
    /// decided outside this window.
    pub fn pop_oldest(&mut self) -> Option<Document> {
        let doc = self.store.pop_front()?;
        if self.indexed && !doc.is_duplicate() {
            self.dict.unindex_document(&doc);
        }
        Some(doc)
    }

    /// Checks the index against the store by full scan. Returns a
    /// description of the first violation found.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        if !self.indexed {
            return Ok(());
        }
        let mut expected = 0usize;
        for doc in self.store.iter() {
            if doc.is_duplicate() {
                continue;
            }
            for (term, w) in doc.composition.iter() {
                expected += 1;
                let present = self
                    .dict
                    .postings(term)
                    .map(|l| l.contains_key(&PostingKey::new(w, doc.id)))
                    .unwrap_or(false);
                if !present {
                    return Err(format!("doc {} missing from list of {term:?}", doc.id));
                }
            }
        }
        let mut actual = 0usize;
        for (term, entry) in self.dict.terms() {
            if entry.is_unused() {
                return Err(format!("empty dictionary entry for {term:?}"));
            }
            let mut prev: Option<ImpactEntry> = None;
            for e in entry.postings.iter() {
                actual += 1;
                if let Some(p) = prev {
                    let ordered = p.weight > e.weight || (p.weight == e.weight && p.doc_id > e.doc_id);
                    if !ordered {
                        return Err(format!("list of {term:?} out of order"));
                    }
                }
                match self.store.get(e.doc_id) {
                    Some(d) if !d.is_duplicate() && d.composition.weight(term) == e.weight => {}
                    _ => return Err(format!("stale entry {:?} in list of {term:?}", e)),
                }
                prev = Some(e);
            }
        }
        if expected != actual {
            return Err(format!("{actual} impact entries, expected {expected}"));
        }
        match self.policy.kind {
            WindowKind::CountBased if self.store.len() as u64 > self.policy.capacity => {
                Err(format!("{} docs exceed capacity {}", self.store.len(), self.policy.capacity))
            }
            WindowKind::TimeBased
                if self
                    .store
                    .front()
                    .is_some_and(|d| self.store.clock() - d.arrival_time >= self.policy.capacity) =>
            {
                Err("expired document still in window".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CompositionList;
    use proptest::prelude::*;

    fn doc(id: u64, t: u64, terms: &[(u32, f64)]) -> Document {
        Document::new(
            DocId(id),
            t,
            CompositionList::from_pairs(terms.iter().map(|&(t, w)| (TermId(t), w))).unwrap(),
        )
    }

    #[test]
    fn insert_creates_one_entry_per_term() {
        let mut w = Window::new(WindowPolicy::count(10).unwrap());
        w.insert_document(doc(1, 0, &[(1, 2.0), (2, 1.0)])).unwrap();
        assert_eq!(w.dictionary().postings(TermId(1)).unwrap().len(), 1);
        assert_eq!(w.dictionary().postings(TermId(2)).unwrap().len(), 1);
        w.check_consistency().unwrap();
    }

    #[test]
    fn duplicate_gets_slot_but_no_entries() {
        let mut w = Window::new(WindowPolicy::count(10).unwrap());
        let mut d = doc(8, 0, &[(1, 2.0)]);
        d.duplicate_of = Some(DocId(7));
        w.insert_document(d).unwrap();
        assert_eq!(w.store().len(), 1);
        assert!(w.dictionary().is_empty());
    }

    #[test]
    fn rejects_out_of_order_ids() {
        let mut w = Window::new(WindowPolicy::count(10).unwrap());
        w.insert_document(doc(5, 0, &[(1, 1.0)])).unwrap();
        assert!(matches!(
            w.insert_document(doc(5, 0, &[(1, 1.0)])),
            Err(Error::OutOfOrderId { .. })
        ));
        assert!(w.insert_document(doc(3, 0, &[(1, 1.0)])).is_err());
    }

    #[test]
    fn count_window_evicts_fifo() {
        let mut w = Window::new(WindowPolicy::count(3).unwrap());
        for i in 1..=3 {
            w.insert_document(doc(i, i, &[(1, 1.0)])).unwrap();
            assert!(w.evict_expired(i).is_empty());
        }
        w.insert_document(doc(4, 4, &[(1, 1.0)])).unwrap();
        let gone = w.evict_expired(4);
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].id, DocId(1));
        assert_eq!(w.store().len(), 3);

        let mut w = Window::new(WindowPolicy::count(1).unwrap());
        w.insert_document(doc(1, 0, &[(1, 1.0)])).unwrap();
        assert!(w.evict_expired(0).is_empty());
        w.insert_document(doc(2, 0, &[(1, 1.0)])).unwrap();
        assert_eq!(w.evict_expired(0)[0].id, DocId(1));
    }

    #[test]
    fn time_window_evicts_by_age() {
        let mut w = Window::new(WindowPolicy::time(10).unwrap());
        w.insert_document(doc(1, 0, &[(1, 1.0)])).unwrap();
        assert!(w.evict_expired(9).is_empty());
        let gone = w.evict_expired(11);
        assert_eq!(gone.len(), 1);
        assert!(w.dictionary().is_empty());
    }

    #[test]
    fn probe_is_inclusive_from_low_end() {
        let mut t = ThresholdTree::default();
        t.register(QueryId(1), 0.5);
        t.register(QueryId(2), 0.8);
        assert_eq!(t.probe(0.6).collect::<Vec<_>>(), vec![QueryId(1)]);
        assert_eq!(t.probe(0.8).collect::<Vec<_>>(), vec![QueryId(1), QueryId(2)]);
        assert!(t.probe(0.4).next().is_none());
    }

    #[test]
    fn set_local_threshold_reorders() {
        let mut t = ThresholdTree::default();
        t.register(QueryId(1), 0.5);
        t.set_local_threshold(QueryId(1), 0.9).unwrap();
        assert!(t.probe(0.6).next().is_none());
        t.set_local_threshold(QueryId(1), 0.9).unwrap();
        assert_eq!(t.len(), 1);
        t.set_local_threshold(QueryId(1), 0.0).unwrap();
        assert_eq!(t.probe(1e-9).collect::<Vec<_>>(), vec![QueryId(1)]);
        assert!(t.set_local_threshold(QueryId(9), 1.0).is_err());
    }

    #[test]
    fn list_order_is_weight_then_newer() {
        let mut l = InvertedList::default();
        l.insert(DocId(1), 2.0);
        l.insert(DocId(2), 5.0);
        l.insert(DocId(3), 2.0);
        let order: Vec<u64> = l.iter().map(|e| e.doc_id.0).collect();
        assert_eq!(order, vec![2, 3, 1]);
        let head = l.head().unwrap();
        assert_eq!(l.next_below(head).unwrap().doc, 3);
        assert_eq!(l.next_above(PostingKey::BOTTOM).unwrap().doc, 1);
    }

    #[test]
    fn empty_terms_leave_dictionary() {
        let mut w = Window::new(WindowPolicy::count(1).unwrap());
        w.dictionary_mut().register_threshold(TermId(1), QueryId(1), 0.0);
        w.insert_document(doc(1, 0, &[(1, 1.0), (2, 1.0)])).unwrap();
        w.insert_document(doc(2, 0, &[(3, 1.0)])).unwrap();
        w.evict_expired(0);
        assert!(w.dictionary().entry(TermId(1)).is_some());
        assert!(w.dictionary().entry(TermId(2)).is_none());
        w.dictionary_mut().unregister_threshold(TermId(1), QueryId(1));
        assert!(w.dictionary().entry(TermId(1)).is_none());
    }

    proptest! {
        #[test]
        fn index_stays_consistent(
            docs in proptest::collection::vec(proptest::collection::vec((0u32..8, 1u32..4), 1..5), 1..40),
            dups in proptest::collection::vec(any::<bool>(), 40),
            cap in 1u64..6,
        ) {
            let mut w = Window::new(WindowPolicy::count(cap).unwrap());
            let mut evicted = Vec::new();
            for (i, terms) in docs.iter().enumerate() {
                let mut d = Document::new(
                    DocId(i as u64 + 1),
                    i as u64,
                    CompositionList::from_pairs(terms.iter().map(|&(t, w)| (TermId(t), w as f64))).unwrap(),
                );
                if dups[i] && i > 0 {
                    d.duplicate_of = Some(DocId(i as u64));
                }
                w.insert_document(d).unwrap();
                evicted.extend(w.evict_expired(i as u64).into_iter().map(|d| d.id));
                prop_assert!(w.check_consistency().is_ok(), "{:?}", w.check_consistency());
            }
            prop_assert!(evicted.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
