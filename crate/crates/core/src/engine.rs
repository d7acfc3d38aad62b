//! Continuous top-k maintenance with the incremental threshold method.
//!
//! Each query keeps, per query term `t`, a *frontier* position `f_t` inside
//! the posting list `L_t`. Entries at or above the frontier are *covered*:
//! every document owning a covered entry has been scored and is tracked in
//! the query's candidate set. The local threshold θ_Q,t is the frontier's
//! weight, which is what the term's threshold tree stores.
//!
//! An untracked document has every query-term entry strictly below the
//! frontiers, so its key `(score, id)` is strictly below the bound
//! `(Σ_t w_Qt·θ_t, min_t f_t.doc)`. A query is *settled* when its k-th
//! candidate is at or above that bound (or every list is fully covered); its
//! top-k is then exact, ties included.
//!
//! Arrivals always carry the largest id seen so far, so an arriving entry is
//! covered exactly when `w_dt ≥ θ_t`, the threshold-tree probe condition.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::dedup::{check_duplicate, DedupConfig};
use crate::error::{Error, Result};
use crate::feedback::FeedbackStore;
use crate::model::{score, DocId, Document, Query, QueryId, RankKey, ScoredDoc, TermId};
use crate::monitor::{Event, EventOutcome, Monitor};
use crate::window::{Dictionary, DocumentStore, PostingKey, Window, WindowPolicy};

/// Counters for the work done by the engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    /// Full `S(d|Q)` computations.
    pub score_evaluations: u64,
    /// Posting-list entries popped by threshold searches.
    pub pops: u64,
    /// Searches resumed after an expiration emptied a top-k slot.
    pub resumes: u64,
    /// Individual frontier raises during threshold roll-up.
    pub rollup_steps: u64,
}

/// Deliberate defects used to exercise verification tooling.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Never resume the search when a top-k document expires.
    SkipRefill,
}

/// Per-query state: candidates, frontiers and thresholds.
#[derive(Debug, Clone)]
pub struct QueryState {
    query: Query,
    candidates: BTreeSet<RankKey>,
    scores: HashMap<DocId, f64>,
    frontiers: Vec<PostingKey>,
    installed: Vec<Option<f64>>,
    influence: f64,
}

impl QueryState {
    fn new(query: Query, dict: &Dictionary) -> Self {
        let frontiers = query
            .terms()
            .iter()
            .map(|&(t, _)| {
                dict.postings(t)
                    .and_then(|l| l.head())
                    .map_or(PostingKey::BOTTOM, PostingKey::successor)
            })
            .collect();
        let n = query.len();
        Self {
            query,
            candidates: BTreeSet::new(),
            scores: HashMap::new(),
            frontiers,
            installed: vec![None; n],
            influence: 0.0,
        }
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn k(&self) -> usize {
        self.query.k
    }

    pub fn tracks(&self, doc: DocId) -> bool {
        self.scores.contains_key(&doc)
    }

    /// Number of tracked candidates, verified or not.
    pub fn tracked(&self) -> usize {
        self.candidates.len()
    }

    /// The verified top-k, best first.
    pub fn verified(&self) -> Vec<ScoredDoc> {
        self.candidates
            .iter()
            .rev()
            .take(self.k())
            .map(|r| ScoredDoc {
                doc_id: r.doc,
                score: r.score,
                verified: true,
            })
            .collect()
    }

    /// The result list `R`: the verified top-k followed by unverified
    /// candidates scoring at least τ.
    pub fn result_list(&self) -> Vec<ScoredDoc> {
        let mut out = self.verified();
        out.extend(
            self.candidates
                .iter()
                .rev()
                .skip(self.k())
                .take_while(|r| r.score >= self.influence)
                .map(|r| ScoredDoc {
                    doc_id: r.doc,
                    score: r.score,
                    verified: false,
                }),
        );
        out
    }

    fn kth(&self) -> Option<RankKey> {
        self.candidates.iter().rev().nth(self.k() - 1).copied()
    }

    /// Score of the k-th verified document, if there are k of them.
    pub fn kth_score(&self) -> Option<f64> {
        self.kth().map(|r| r.score)
    }

    /// Influence threshold τ.
    pub fn influence_threshold(&self) -> f64 {
        self.influence
    }

    /// Local thresholds θ_Q,t in canonical term order.
    pub fn local_thresholds(&self) -> Vec<(TermId, f64)> {
        self.query
            .terms()
            .iter()
            .zip(&self.frontiers)
            .map(|(&(t, _), f)| (t, f.weight))
            .collect()
    }

    /// Frontier positions, the points a resumed search continues from.
    pub fn resume_positions(&self) -> &[PostingKey] {
        &self.frontiers
    }

    fn bound_of(&self, frontiers: impl Iterator<Item = PostingKey>) -> RankKey {
        // Summed in the same order as `score` so rounding stays monotone.
        let mut tau = 0.0;
        let mut min_doc = u64::MAX;
        for (&(_, wq), f) in self.query.terms().iter().zip(frontiers) {
            if f.is_bottom() {
                continue;
            }
            tau += wq * f.weight;
            min_doc = min_doc.min(f.doc);
        }
        if min_doc == u64::MAX {
            min_doc = 0;
        }
        RankKey::new(tau, DocId(min_doc))
    }

    fn bound(&self) -> RankKey {
        self.bound_of(self.frontiers.iter().copied())
    }

    fn bound_with(&self, i: usize, pos: PostingKey) -> RankKey {
        self.bound_of(
            self.frontiers
                .iter()
                .enumerate()
                .map(|(j, &f)| if j == i { pos } else { f }),
        )
    }

    fn all_bottom(&self) -> bool {
        self.frontiers.iter().all(PostingKey::is_bottom)
    }

    fn is_settled(&self) -> bool {
        if self.all_bottom() {
            return true;
        }
        match self.kth() {
            Some(kth) => kth >= self.bound(),
            None => false,
        }
    }

    fn covers(&self, doc: &Document) -> bool {
        self.query
            .terms()
            .iter()
            .zip(&self.frontiers)
            .any(|(&(t, _), f)| {
                let w = doc.composition.weight(t);
                w > 0.0 && PostingKey::new(w, doc.id) >= *f
            })
    }

    fn track(&mut self, doc: DocId, score: f64) {
        if let Some(old) = self.scores.insert(doc, score) {
            self.candidates.remove(&RankKey::new(old, doc));
        }
        self.candidates.insert(RankKey::new(score, doc));
    }

    fn untrack(&mut self, doc: DocId) -> Option<f64> {
        let s = self.scores.remove(&doc)?;
        self.candidates.remove(&RankKey::new(s, doc));
        Some(s)
    }

    fn verified_keys(&self) -> Vec<RankKey> {
        self.candidates.iter().rev().take(self.k()).copied().collect()
    }
}

/// Threshold search from the current frontiers: repeatedly pops the list
/// whose next entry has the largest `c_t = w_Qt · w_dt`, scores the popped
/// document and lowers that frontier, until the query is settled.
fn search(state: &mut QueryState, dict: &Dictionary, store: &DocumentStore, stats: &mut EngineStats) {
    loop {
        if state.is_settled() {
            return;
        }
        let mut best: Option<(usize, f64, PostingKey)> = None;
        for i in 0..state.frontiers.len() {
            let f = state.frontiers[i];
            if f.is_bottom() {
                continue;
            }
            let (term, wq) = state.query.terms()[i];
            match dict.postings(term).and_then(|l| l.next_below(f)) {
                None => state.frontiers[i] = PostingKey::BOTTOM,
                Some(e) => {
                    let c = wq * e.weight;
                    if best.is_none_or(|(_, bc, _)| c > bc) {
                        best = Some((i, c, e));
                    }
                }
            }
        }
        let Some((i, _, popped)) = best else {
            return;
        };
        stats.pops += 1;
        let doc_id = popped.doc_id();
        if !state.tracks(doc_id) {
            if let Some(doc) = store.get(doc_id) {
                stats.score_evaluations += 1;
                let s = score(doc, &state.query);
                state.track(doc_id, s);
            }
        }
        let term = state.query.terms()[i].0;
        state.frontiers[i] = dict
            .postings(term)
            .and_then(|l| l.next_below(popped))
            .map_or(PostingKey::BOTTOM, PostingKey::successor);
    }
}

/// Raises frontiers toward the list heads, one entry at a time and cheapest
/// bound first, while the bound stays at or below the k-th candidate. Sets τ
/// to the final bound score and drops candidates that end up uncovered.
fn roll_up(state: &mut QueryState, dict: &Dictionary, store: &DocumentStore, stats: &mut EngineStats) {
    if let Some(kth) = state.kth() {
        loop {
            let mut best: Option<(usize, PostingKey, RankKey)> = None;
            for i in 0..state.frontiers.len() {
                let term = state.query.terms()[i].0;
                let Some(next) = dict.postings(term).and_then(|l| l.next_above(state.frontiers[i])) else {
                    continue;
                };
                let b = state.bound_with(i, next);
                if b <= kth && best.is_none_or(|(_, _, bb)| b < bb) {
                    best = Some((i, next, b));
                }
            }
            let Some((i, next, _)) = best else {
                break;
            };
            stats.rollup_steps += 1;
            let old = std::mem::replace(&mut state.frontiers[i], next);
            let term = state.query.terms()[i].0;
            let passed_over = !old.is_bottom() && dict.postings(term).is_some_and(|l| l.contains_key(&old));
            if passed_over {
                let doc_id = old.doc_id();
                if state.tracks(doc_id) && store.get(doc_id).is_some_and(|d| !state.covers(d)) {
                    debug_assert!(state.scores[&doc_id] <= kth.score);
                    state.untrack(doc_id);
                }
            }
        }
    }
    state.influence = state.bound().score;
}

fn sync_thresholds(state: &mut QueryState, dict: &mut Dictionary) -> Result<()> {
    let qid = state.query.id;
    for (i, &(term, _)) in state.query.terms().iter().enumerate() {
        let theta = state.frontiers[i].weight;
        match state.installed[i] {
            Some(old) if old == theta => {}
            Some(_) => dict.set_local_threshold(term, qid, theta)?,
            None => dict.register_threshold(term, qid, theta),
        }
        state.installed[i] = Some(theta);
    }
    Ok(())
}

/// Runs the initial threshold search for `query` over the window and rolls
/// up its thresholds. Threshold trees are not touched.
pub fn initial_top_k(query: Query, window: &Window) -> (QueryState, EngineStats) {
    let mut stats = EngineStats::default();
    let mut state = QueryState::new(query, window.dictionary());
    search(&mut state, window.dictionary(), window.store(), &mut stats);
    roll_up(&mut state, window.dictionary(), window.store(), &mut stats);
    (state, stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub window: WindowPolicy,
    pub dedup: DedupConfig,
    pub alpha: f64,
}

impl EngineConfig {
    pub fn new(window: WindowPolicy) -> Self {
        Self {
            window,
            dedup: DedupConfig::default(),
            alpha: crate::feedback::DEFAULT_ALPHA,
        }
    }

    pub fn with_dedup(mut self, dedup: DedupConfig) -> Self {
        self.dedup = dedup;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Single-node engine maintaining every registered query incrementally.
#[derive(Debug, Clone)]
pub struct IncrementalEngine {
    window: Window,
    queries: BTreeMap<QueryId, QueryState>,
    dedup: DedupConfig,
    feedback: FeedbackStore,
    stats: EngineStats,
    fault: Option<Fault>,
}

impl IncrementalEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        Ok(Self {
            window: Window::new(config.window),
            queries: BTreeMap::new(),
            dedup: config.dedup,
            feedback: FeedbackStore::new(config.alpha)?,
            stats: EngineStats::default(),
            fault: None,
        })
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn feedback(&self) -> &FeedbackStore {
        &self.feedback
    }

    pub fn dedup_config(&self) -> &DedupConfig {
        &self.dedup
    }

    pub fn state(&self, id: QueryId) -> Option<&QueryState> {
        self.queries.get(&id)
    }

    pub fn register(&mut self, query: Query) -> Result<&QueryState> {
        let id = query.id;
        if self.queries.contains_key(&id) {
            return Err(Error::DuplicateQuery(id));
        }
        let (mut state, stats) = initial_top_k(query, &self.window);
        self.stats.pops += stats.pops;
        self.stats.score_evaluations += stats.score_evaluations;
        self.stats.rollup_steps += stats.rollup_steps;
        sync_thresholds(&mut state, self.window.dictionary_mut())?;
        Ok(self.queries.entry(id).or_insert(state))
    }

    pub fn unregister(&mut self, id: QueryId) -> Result<()> {
        let state = self.queries.remove(&id).ok_or(Error::UnknownQuery(id))?;
        for (i, &(term, _)) in state.query.terms().iter().enumerate() {
            if state.installed[i].is_some() {
                self.window.dictionary_mut().unregister_threshold(term, id);
            }
        }
        Ok(())
    }

    pub fn current_result(&self, id: QueryId) -> Result<Vec<ScoredDoc>> {
        self.queries
            .get(&id)
            .map(QueryState::verified)
            .ok_or(Error::UnknownQuery(id))
    }

    /// Inserts an already deduplicated document and updates every query it
    /// can affect. Returns the queries whose top-k changed.
    pub fn handle_arrival(&mut self, doc: Document) -> Result<BTreeSet<QueryId>> {
        let id = doc.id;
        let duplicate = doc.is_duplicate();
        self.window.insert_document(doc)?;
        let mut changed = BTreeSet::new();
        if duplicate {
            return Ok(changed);
        }
        {
            let Self {
                window, queries, stats, ..
            } = self;
            let store = window.store();
            let dict = window.dictionary();
            let doc = store.get(id).expect("document was just inserted");
            let mut affected = BTreeSet::new();
            for (term, w) in doc.composition.iter() {
                if let Some(tree) = dict.thresholds(term) {
                    affected.extend(tree.probe(w));
                }
            }
            for qid in affected {
                let state = queries.get_mut(&qid).ok_or(Error::UnknownQuery(qid))?;
                stats.score_evaluations += 1;
                let s = score(doc, &state.query);
                let key = RankKey::new(s, id);
                let entered = state.kth().is_none_or(|kth| key > kth);
                state.track(id, s);
                if entered {
                    changed.insert(qid);
                    roll_up(state, dict, store, stats);
                }
            }
        }
        self.sync_changed(&changed)?;
        Ok(changed)
    }

    /// Updates every query after `doc` left the window. The document must
    /// already be removed from the window.
    pub fn handle_expiration(&mut self, doc: &Document) -> Result<BTreeSet<QueryId>> {
        self.feedback.forget(doc.id);
        let mut changed = BTreeSet::new();
        if doc.is_duplicate() {
            return Ok(changed);
        }
        {
            let Self {
                window,
                queries,
                stats,
                fault,
                ..
            } = self;
            let store = window.store();
            let dict = window.dictionary();
            let mut affected = BTreeSet::new();
            for (term, w) in doc.composition.iter() {
                if let Some(tree) = dict.thresholds(term) {
                    affected.extend(tree.probe(w));
                }
            }
            for qid in affected {
                let state = queries.get_mut(&qid).ok_or(Error::UnknownQuery(qid))?;
                if !state.tracks(doc.id) {
                    continue;
                }
                let kth = state.kth();
                let s = state.untrack(doc.id).unwrap_or_default();
                let was_top = kth.is_none_or(|kth| RankKey::new(s, doc.id) >= kth);
                if !was_top {
                    continue;
                }
                changed.insert(qid);
                if *fault == Some(Fault::SkipRefill) {
                    continue;
                }
                if !state.is_settled() {
                    stats.resumes += 1;
                    search(state, dict, store, stats);
                    roll_up(state, dict, store, stats);
                }
            }
        }
        self.sync_changed(&changed)?;
        Ok(changed)
    }

    fn sync_changed(&mut self, changed: &BTreeSet<QueryId>) -> Result<()> {
        for qid in changed {
            if let Some(state) = self.queries.get_mut(qid) {
                sync_thresholds(state, self.window.dictionary_mut())?;
            }
        }
        Ok(())
    }

    /// Flags `doc` against the window when duplicate detection is on.
    pub fn resolve_duplicate(&self, doc: &mut Document) {
        if doc.duplicate_of.is_none() {
            if let Some(m) = check_duplicate(doc, self.window.store(), self.window.dictionary(), &self.dedup) {
                doc.duplicate_of = Some(m.doc_id);
            }
        }
    }

    /// Full arrival event: duplicate check, insertion, then expiration of
    /// whatever the window policy evicts.
    pub fn ingest(&mut self, mut doc: Document) -> Result<EventOutcome> {
        let mut out = EventOutcome::default();
        self.window.store().check_order(&doc)?;
        self.resolve_duplicate(&mut doc);
        out.duplicate_of = doc.duplicate_of;
        let now = doc.arrival_time.max(self.window.store().clock());
        out.changed = self.handle_arrival(doc)?;
        // One at a time, so a roll-up triggered by one expiration still sees
        // the entries of the documents expiring after it.
        while let Some(gone) = self.window.pop_expired(now) {
            out.changed.extend(self.handle_expiration(&gone)?);
            out.expired.push(gone.id);
        }
        Ok(out)
    }

    /// Removes the oldest document regardless of policy. Shards use this when
    /// expiration is decided by a coordinator.
    pub fn expire_oldest(&mut self) -> Result<Option<(DocId, BTreeSet<QueryId>)>> {
        let Some(doc) = self.window.pop_oldest() else {
            return Ok(None);
        };
        let changed = self.handle_expiration(&doc)?;
        Ok(Some((doc.id, changed)))
    }

    /// Records relevance feedback for a windowed document and re-ranks it.
    pub fn record_feedback(&mut self, doc_id: DocId, rating: f64) -> Result<BTreeSet<QueryId>> {
        let doc = self.window.store().get(doc_id).ok_or(Error::UnknownDocument(doc_id))?;
        if doc.is_duplicate() {
            return Err(Error::DuplicateDocument(doc_id));
        }
        let Some(boosted) = self.feedback.apply(doc_id, &doc.composition, rating)? else {
            return Ok(BTreeSet::new());
        };
        {
            let (store, dict) = self.window.parts_mut();
            let doc = store.get_mut(doc_id).expect("checked above");
            dict.unindex_document(doc);
            doc.composition = boosted;
            dict.index_document(doc);
        }
        let mut changed = BTreeSet::new();
        {
            let Self {
                window, queries, stats, ..
            } = self;
            let store = window.store();
            let dict = window.dictionary();
            let doc = store.get(doc_id).expect("checked above");
            let mut affected = BTreeSet::new();
            for (term, w) in doc.composition.iter() {
                if let Some(tree) = dict.thresholds(term) {
                    affected.extend(tree.probe(w));
                }
            }
            for qid in affected {
                let state = queries.get_mut(&qid).ok_or(Error::UnknownQuery(qid))?;
                // Weights only grow, so a previously covered document stays
                // covered; uncovered ones still fall below the bound.
                if !state.covers(doc) {
                    continue;
                }
                let before = state.verified_keys();
                stats.score_evaluations += 1;
                let s = score(doc, &state.query);
                state.track(doc_id, s);
                if state.verified_keys() != before {
                    changed.insert(qid);
                    roll_up(state, dict, store, stats);
                }
            }
        }
        self.sync_changed(&changed)?;
        Ok(changed)
    }

    /// Exhaustive consistency check of the index and every query state
    /// against the window. Intended for tests; cost is linear in the window
    /// per query.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.window.check_consistency()?;
        let store = self.window.store();
        let dict = self.window.dictionary();
        for (qid, state) in &self.queries {
            for (i, &(term, _)) in state.query.terms().iter().enumerate() {
                let theta = state.frontiers[i].weight;
                if state.installed[i] != Some(theta) {
                    return Err(format!("query {qid}: stale installed threshold for {term:?}"));
                }
                if dict.thresholds(term).and_then(|t| t.threshold(*qid)) != Some(theta) {
                    return Err(format!("query {qid}: threshold tree disagrees on {term:?}"));
                }
                if let Some(list) = dict.postings(term) {
                    for e in list.iter() {
                        if PostingKey::new(e.weight, e.doc_id) >= state.frontiers[i] && !state.tracks(e.doc_id) {
                            return Err(format!("query {qid}: covered doc {} untracked", e.doc_id));
                        }
                    }
                }
            }
            for (&doc_id, &s) in &state.scores {
                let Some(doc) = store.get(doc_id) else {
                    return Err(format!("query {qid}: tracks expired doc {doc_id}"));
                };
                if doc.is_duplicate() || score(doc, &state.query) != s {
                    return Err(format!("query {qid}: stale candidate {doc_id}"));
                }
            }
            if !state.is_settled() {
                return Err(format!("query {qid}: not settled"));
            }
            let bound = state.bound();
            for doc in store.iter().filter(|d| !d.is_duplicate() && !state.tracks(d.id)) {
                let s = score(doc, &state.query);
                if s > 0.0 && RankKey::new(s, doc.id) >= bound {
                    return Err(format!("query {qid}: untracked doc {} reaches the bound", doc.id));
                }
            }
            if state.candidates.len() >= state.k() && state.influence > state.kth_score().unwrap_or(0.0) {
                return Err(format!("query {qid}: τ above s_k"));
            }
        }
        Ok(())
    }
}

impl Monitor for IncrementalEngine {
    fn register_query(&mut self, query: Query) -> Result<()> {
        self.register(query).map(|_| ())
    }

    fn unregister_query(&mut self, id: QueryId) -> Result<()> {
        self.unregister(id)
    }

    fn process(&mut self, event: &Event) -> Result<EventOutcome> {
        match event {
            Event::Arrival(doc) => self.ingest(doc.clone()),
            Event::Feedback { doc_id, rating } => Ok(EventOutcome {
                changed: self.record_feedback(*doc_id, *rating)?,
                ..EventOutcome::default()
            }),
        }
    }

    fn current_result(&self, id: QueryId) -> Result<Vec<ScoredDoc>> {
        IncrementalEngine::current_result(self, id)
    }

    fn query_ids(&self) -> Vec<QueryId> {
        self.queries.keys().copied().collect()
    }

    fn query(&self, id: QueryId) -> Option<&Query> {
        self.queries.get(&id).map(|s| &s.query)
    }

    fn window_documents(&self) -> Vec<&Document> {
        self.window.store().iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::naive_top_k;
    use crate::model::CompositionList;
    use proptest::prelude::*;

    fn doc(id: u64, terms: &[(u32, f64)]) -> Document {
        Document::new(
            DocId(id),
            id,
            CompositionList::from_pairs(terms.iter().map(|&(t, w)| (TermId(t), w))).unwrap(),
        )
    }

    fn query(id: u64, terms: &[(u32, f64)], k: usize) -> Query {
        Query::new(QueryId(id), terms.iter().map(|&(t, w)| (TermId(t), w)), k).unwrap()
    }

    fn engine(n: u64) -> IncrementalEngine {
        IncrementalEngine::new(EngineConfig::new(WindowPolicy::count(n).unwrap()).with_dedup(DedupConfig::disabled()))
            .unwrap()
    }

    fn assert_matches_oracle(e: &IncrementalEngine) {
        for qid in e.query_ids() {
            let q = e.query(qid).unwrap();
            assert_eq!(e.current_result(qid).unwrap(), naive_top_k(q, e.window().store().iter()), "query {qid}");
        }
        e.check_invariants().unwrap();
    }

    #[test]
    fn first_pop_takes_largest_candidate_contribution() {
        // "red" = 20, "rose" = 11. The head of the red list contributes 3,
        // the head of the rose list 2, so d6 is popped first; with k = 1 it
        // settles the search on its own.
        let mut e = engine(10);
        e.ingest(doc(6, &[(20, 3.0), (11, 2.0)])).unwrap();
        e.ingest(doc(7, &[(11, 2.0)])).unwrap();
        let before = e.stats().pops;
        e.register(query(1, &[(20, 1.0), (11, 1.0)], 1)).unwrap();
        assert_eq!(e.stats().pops - before, 1);
        assert_eq!(e.current_result(QueryId(1)).unwrap()[0].doc_id, DocId(6));
        assert_matches_oracle(&e);
    }

    #[test]
    fn single_candidate_is_the_result() {
        let mut e = engine(10);
        e.ingest(doc(1, &[(1, 2.0)])).unwrap();
        e.ingest(doc(2, &[(9, 2.0)])).unwrap();
        e.register(query(1, &[(1, 1.0), (2, 1.0)], 1)).unwrap();
        let r = e.current_result(QueryId(1)).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].doc_id, r[0].score, r[0].verified), (DocId(1), 2.0, true));
    }

    #[test]
    fn roll_up_single_term_list() {
        let mut e = engine(10);
        for (i, w) in [5.0, 4.0, 3.0, 2.0].into_iter().enumerate() {
            e.ingest(doc(i as u64 + 1, &[(1, w)])).unwrap();
        }
        let st = e.register(query(1, &[(1, 1.0)], 2)).unwrap();
        assert_eq!(st.kth_score(), Some(4.0));
        assert_eq!(st.local_thresholds(), vec![(TermId(1), 4.0)]);
        assert_eq!(st.influence_threshold(), 4.0);
        assert_eq!(e.window().dictionary().thresholds(TermId(1)).unwrap().threshold(QueryId(1)), Some(4.0));
    }

    #[test]
    fn short_result_keeps_zero_thresholds() {
        let mut e = engine(10);
        e.ingest(doc(1, &[(1, 3.0)])).unwrap();
        let st = e.register(query(1, &[(1, 1.0), (2, 1.0)], 3)).unwrap();
        assert_eq!(st.influence_threshold(), 0.0);
        assert!(st.local_thresholds().iter().all(|&(_, th)| th == 0.0));
        assert_eq!(st.verified().len(), 1);
    }

    #[test]
    fn unrelated_arrival_changes_nothing() {
        let mut e = engine(10);
        e.ingest(doc(1, &[(1, 3.0)])).unwrap();
        e.register(query(1, &[(1, 1.0)], 1)).unwrap();
        let before = e.current_result(QueryId(1)).unwrap();
        let out = e.ingest(doc(2, &[(7, 9.0)])).unwrap();
        assert!(out.changed.is_empty());
        assert_eq!(e.current_result(QueryId(1)).unwrap(), before);
    }

    #[test]
    fn duplicate_arrival_changes_nothing() {
        let mut e = IncrementalEngine::new(EngineConfig::new(WindowPolicy::count(10).unwrap())).unwrap();
        e.ingest(doc(1, &[(1, 3.0), (2, 1.0)])).unwrap();
        e.register(query(1, &[(1, 1.0)], 2)).unwrap();
        let out = e.ingest(doc(2, &[(1, 3.0), (2, 1.0)])).unwrap();
        assert_eq!(out.duplicate_of, Some(DocId(1)));
        assert!(out.changed.is_empty());
        assert_eq!(e.current_result(QueryId(1)).unwrap().len(), 1);
    }

    #[test]
    fn expiring_top_doc_refills() {
        let mut e = engine(3);
        e.register(query(1, &[(1, 1.0)], 1)).unwrap();
        e.ingest(doc(1, &[(1, 9.0)])).unwrap();
        e.ingest(doc(2, &[(1, 2.0)])).unwrap();
        e.ingest(doc(3, &[(1, 5.0)])).unwrap();
        assert_eq!(e.current_result(QueryId(1)).unwrap()[0].doc_id, DocId(1));
        let out = e.ingest(doc(4, &[(2, 1.0)])).unwrap();
        assert_eq!(out.expired, vec![DocId(1)]);
        assert!(out.changed.contains(&QueryId(1)));
        assert_eq!(e.current_result(QueryId(1)).unwrap()[0].doc_id, DocId(3));
        assert_matches_oracle(&e);
    }

    #[test]
    fn exactly_k_matches_then_one_expires() {
        let mut e = engine(2);
        e.register(query(1, &[(1, 1.0)], 2)).unwrap();
        e.ingest(doc(1, &[(1, 1.0)])).unwrap();
        e.ingest(doc(2, &[(1, 2.0)])).unwrap();
        assert_eq!(e.current_result(QueryId(1)).unwrap().len(), 2);
        e.ingest(doc(3, &[(5, 1.0)])).unwrap();
        assert_eq!(e.current_result(QueryId(1)).unwrap().len(), 1);
    }

    #[test]
    fn equal_scores_list_newer_first() {
        let mut e = engine(10);
        e.ingest(doc(1, &[(1, 2.0)])).unwrap();
        e.ingest(doc(2, &[(1, 2.0)])).unwrap();
        e.register(query(1, &[(1, 1.0)], 2)).unwrap();
        let ids: Vec<_> = e.current_result(QueryId(1)).unwrap().iter().map(|s| s.doc_id).collect();
        assert_eq!(ids, vec![DocId(2), DocId(1)]);
    }

    #[test]
    fn k_larger_than_window() {
        let mut e = engine(3);
        for i in 1..=3 {
            e.ingest(doc(i, &[(1, i as f64)])).unwrap();
        }
        e.register(query(1, &[(1, 1.0)], 50)).unwrap();
        assert_eq!(e.current_result(QueryId(1)).unwrap().len(), 3);
    }

    #[test]
    fn register_and_unregister() {
        let mut e = engine(10);
        e.ingest(doc(1, &[(1, 1.0), (2, 1.0)])).unwrap();
        e.register(query(1, &[(1, 1.0), (2, 1.0)], 1)).unwrap();
        assert!(matches!(e.register(query(1, &[(1, 1.0)], 1)), Err(Error::DuplicateQuery(_))));
        e.unregister(QueryId(1)).unwrap();
        for t in [1, 2] {
            assert!(!e.window().dictionary().thresholds(TermId(t)).is_some_and(|tr| tr.contains(QueryId(1))));
        }
        assert!(matches!(e.unregister(QueryId(1)), Err(Error::UnknownQuery(_))));
        assert!(e.current_result(QueryId(1)).is_err());
    }

    #[test]
    fn empty_window_result_is_empty() {
        let mut e = engine(5);
        e.register(query(1, &[(1, 1.0)], 3)).unwrap();
        assert!(e.current_result(QueryId(1)).unwrap().is_empty());
    }

    #[test]
    fn pops_beat_naive_when_one_list_holds_the_mass() {
        // One heavy term and many light entries in the other list: k = 1
        // stops after the head of the heavy list.
        let mut e = engine(1000);
        e.ingest(doc(1, &[(1, 100.0)])).unwrap();
        for i in 2..=200 {
            e.ingest(doc(i, &[(2, 1.0)])).unwrap();
        }
        let before = e.stats();
        e.register(query(1, &[(1, 1.0), (2, 1.0)], 1)).unwrap();
        let matching = e.window().store().iter().filter(|d| score(d, e.query(QueryId(1)).unwrap()) > 0.0).count() as u64;
        let pops = e.stats().pops - before.pops;
        assert!(pops < matching, "{pops} vs {matching}");
        assert_eq!(e.current_result(QueryId(1)).unwrap()[0].doc_id, DocId(1));
    }

    #[test]
    fn feedback_raises_rank() {
        let mut e = engine(10);
        e.ingest(doc(1, &[(1, 5.0)])).unwrap();
        e.ingest(doc(2, &[(1, 5.5)])).unwrap();
        e.register(query(1, &[(1, 1.0)], 1)).unwrap();
        assert_eq!(e.current_result(QueryId(1)).unwrap()[0].doc_id, DocId(2));
        let changed = e.record_feedback(DocId(1), 1.0).unwrap();
        assert!(changed.contains(&QueryId(1)));
        let top = e.current_result(QueryId(1)).unwrap()[0];
        assert_eq!(top.doc_id, DocId(1));
        assert!((top.score - 6.0).abs() < 1e-12);
        assert_matches_oracle(&e);
        assert!(matches!(e.record_feedback(DocId(99), 1.0), Err(Error::UnknownDocument(_))));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Arrive(Vec<(u32, u32)>),
        Feedback(usize, u8),
    }

    fn ops() -> impl Strategy<Value = Vec<Op>> {
        let arrive = prop::collection::vec((0u32..8, 1u32..4), 1..4).prop_map(Op::Arrive);
        let fb = (0usize..16, 0u8..=4).prop_map(|(i, r)| Op::Feedback(i, r));
        prop::collection::vec(prop_oneof![4 => arrive, 1 => fb], 1..60)
    }

    fn queries() -> impl Strategy<Value = Vec<(Vec<(u32, u32)>, usize)>> {
        prop::collection::vec((prop::collection::vec((0u32..8, 1u32..3), 1..4), 1usize..4), 1..5)
    }

    fn replay(window: WindowPolicy, qs: &[(Vec<(u32, u32)>, usize)], ops: &[Op], late_register: bool) {
        let mut e =
            IncrementalEngine::new(EngineConfig::new(window).with_dedup(DedupConfig::disabled()).with_alpha(0.5)).unwrap();
        let mut pending: Vec<Query> = Vec::new();
        for (i, (terms, k)) in qs.iter().enumerate() {
            let mut seen = BTreeSet::new();
            let terms: Vec<(TermId, f64)> = terms
                .iter()
                .filter(|(t, _)| seen.insert(*t))
                .map(|&(t, w)| (TermId(t), w as f64))
                .collect();
            pending.push(Query::new(QueryId(i as u64), terms, *k).unwrap());
        }
        let split = if late_register { pending.len() / 2 } else { pending.len() };
        for q in pending.drain(..split) {
            e.register(q).unwrap();
        }
        let mut next_id = 1u64;
        for (step, op) in ops.iter().enumerate() {
            match op {
                Op::Arrive(terms) => {
                    let d = Document::new(
                        DocId(next_id),
                        next_id / 2,
                        CompositionList::from_pairs(terms.iter().map(|&(t, w)| (TermId(t), w as f64))).unwrap(),
                    );
                    next_id += 1;
                    let evals = e.stats().score_evaluations;
                    e.ingest(d).unwrap();
                    // Single consideration: at most one score per query per
                    // arrival, plus whatever resumed searches needed.
                    let resumes_work = e.stats().resumes > 0;
                    if !resumes_work {
                        assert!(e.stats().score_evaluations - evals <= e.query_ids().len() as u64);
                    }
                }
                Op::Feedback(i, r) => {
                    let docs: Vec<DocId> = e.window().store().iter().map(|d| d.id).collect();
                    if docs.is_empty() {
                        continue;
                    }
                    let target = docs[i % docs.len()];
                    e.record_feedback(target, *r as f64 / 4.0).unwrap();
                }
            }
            if step == ops.len() / 2 {
                for q in pending.drain(..) {
                    e.register(q).unwrap();
                }
            }
            assert_matches_oracle(&e);
        }
    }

    proptest! {
        #[test]
        fn count_window_matches_oracle(qs in queries(), ops in ops(), n in 1u64..8, late in any::<bool>()) {
            replay(WindowPolicy::count(n).unwrap(), &qs, &ops, late);
        }

        #[test]
        fn time_window_matches_oracle(qs in queries(), ops in ops(), n in 1u64..5) {
            replay(WindowPolicy::time(n).unwrap(), &qs, &ops, false);
        }
    }
}
