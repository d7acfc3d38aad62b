//! Full-rescan evaluators: the plain naive engine that recomputes every
//! query from scratch after each event, and a buffered variant that keeps
//! the top `k_max = c·k` documents per query and rescans only when the buffer
//! runs short.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::dedup::{check_duplicate, DedupConfig};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::feedback::FeedbackStore;
use crate::model::{score, DocId, Document, Query, QueryId, RankKey, ScoredDoc};
use crate::monitor::{Event, EventOutcome, Monitor};
use crate::window::Window;

pub const DEFAULT_KMAX_FACTOR: usize = 2;

/// Scores every non-duplicate document and returns the best `limit` with a
/// positive score, best first.
pub fn naive_top_n<'a>(query: &Query, docs: impl IntoIterator<Item = &'a Document>, limit: usize) -> (Vec<RankKey>, usize) {
    let mut heap: BinaryHeap<Reverse<RankKey>> = BinaryHeap::with_capacity(limit + 1);
    let mut matches = 0;
    for doc in docs {
        if doc.is_duplicate() {
            continue;
        }
        let s = score(doc, query);
        if s <= 0.0 {
            continue;
        }
        matches += 1;
        let key = RankKey::new(s, doc.id);
        if heap.len() < limit {
            heap.push(Reverse(key));
        } else if heap.peek().is_some_and(|Reverse(min)| key > *min) {
            heap.pop();
            heap.push(Reverse(key));
        }
    }
    let mut out: Vec<RankKey> = heap.into_iter().map(|Reverse(k)| k).collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    (out, matches)
}

/// The top-k of `query` over `docs` by exhaustive scoring.
pub fn naive_top_k<'a>(query: &Query, docs: impl IntoIterator<Item = &'a Document>) -> Vec<ScoredDoc> {
    naive_top_n(query, docs, query.k).0.into_iter().map(verified).collect()
}

fn verified(r: RankKey) -> ScoredDoc {
    ScoredDoc {
        doc_id: r.doc,
        score: r.score,
        verified: true,
    }
}

/// Window bookkeeping shared by both rescanning engines. Postings are only
/// maintained when duplicate detection needs them.
#[derive(Debug, Clone)]
struct RescanWindow {
    window: Window,
    dedup: DedupConfig,
    feedback: FeedbackStore,
}

impl RescanWindow {
    fn new(config: EngineConfig) -> Result<Self> {
        let window = if config.dedup.is_enabled() {
            Window::new(config.window)
        } else {
            Window::unindexed(config.window)
        };
        Ok(Self {
            window,
            dedup: config.dedup,
            feedback: FeedbackStore::new(config.alpha)?,
        })
    }

    /// Inserts the arrival and evicts; returns the evicted documents.
    fn arrive(&mut self, mut doc: Document, out: &mut EventOutcome) -> Result<Vec<Document>> {
        self.window.store().check_order(&doc)?;
        if doc.duplicate_of.is_none() {
            if let Some(m) = check_duplicate(&doc, self.window.store(), self.window.dictionary(), &self.dedup) {
                doc.duplicate_of = Some(m.doc_id);
            }
        }
        out.duplicate_of = doc.duplicate_of;
        let now = doc.arrival_time.max(self.window.store().clock());
        self.window.insert_document(doc)?;
        let gone = self.window.evict_expired(now);
        for d in &gone {
            self.feedback.forget(d.id);
            out.expired.push(d.id);
        }
        Ok(gone)
    }

    /// Applies feedback; returns true when indexed weights changed.
    fn feedback(&mut self, doc_id: DocId, rating: f64) -> Result<bool> {
        let doc = self.window.store().get(doc_id).ok_or(Error::UnknownDocument(doc_id))?;
        if doc.is_duplicate() {
            return Err(Error::DuplicateDocument(doc_id));
        }
        let Some(boosted) = self.feedback.apply(doc_id, &doc.composition, rating)? else {
            return Ok(false);
        };
        let indexed = self.window.is_indexed();
        let (store, dict) = self.window.parts_mut();
        let doc = store.get_mut(doc_id).expect("checked above");
        if indexed {
            dict.unindex_document(doc);
        }
        doc.composition = boosted;
        if indexed {
            dict.index_document(doc);
        }
        Ok(true)
    }

    fn docs(&self) -> impl Iterator<Item = &Document> {
        self.window.store().iter()
    }
}

/// Recomputes every query by full scan after every event.
#[derive(Debug, Clone)]
pub struct NaiveEngine {
    base: RescanWindow,
    queries: BTreeMap<QueryId, (Query, Vec<ScoredDoc>)>,
    rescans: u64,
}

impl NaiveEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        Ok(Self {
            base: RescanWindow::new(config)?,
            queries: BTreeMap::new(),
            rescans: 0,
        })
    }

    /// Number of per-query full rescans performed so far.
    pub fn rescans(&self) -> u64 {
        self.rescans
    }

    fn recompute_all(&mut self) -> BTreeSet<QueryId> {
        let mut changed = BTreeSet::new();
        for (qid, (query, result)) in self.queries.iter_mut() {
            let fresh = naive_top_k(query, self.base.docs());
            self.rescans += 1;
            if fresh != *result {
                *result = fresh;
                changed.insert(*qid);
            }
        }
        changed
    }
}

impl Monitor for NaiveEngine {
    fn register_query(&mut self, query: Query) -> Result<()> {
        if self.queries.contains_key(&query.id) {
            return Err(Error::DuplicateQuery(query.id));
        }
        let result = naive_top_k(&query, self.base.docs());
        self.rescans += 1;
        self.queries.insert(query.id, (query, result));
        Ok(())
    }

    fn unregister_query(&mut self, id: QueryId) -> Result<()> {
        self.queries.remove(&id).map(|_| ()).ok_or(Error::UnknownQuery(id))
    }

    fn process(&mut self, event: &Event) -> Result<EventOutcome> {
        let mut out = EventOutcome::default();
        match event {
            Event::Arrival(doc) => {
                self.base.arrive(doc.clone(), &mut out)?;
            }
            Event::Feedback { doc_id, rating } => {
                if !self.base.feedback(*doc_id, *rating)? {
                    return Ok(out);
                }
            }
        }
        out.changed = self.recompute_all();
        Ok(out)
    }

    fn current_result(&self, id: QueryId) -> Result<Vec<ScoredDoc>> {
        self.queries
            .get(&id)
            .map(|(_, r)| r.clone())
            .ok_or(Error::UnknownQuery(id))
    }

    fn query_ids(&self) -> Vec<QueryId> {
        self.queries.keys().copied().collect()
    }

    fn query(&self, id: QueryId) -> Option<&Query> {
        self.queries.get(&id).map(|(q, _)| q)
    }

    fn window_documents(&self) -> Vec<&Document> {
        self.base.docs().collect()
    }
}

/// Per-query buffer of the best `k_max` documents.
#[derive(Debug, Clone)]
pub struct KmaxBuffer {
    query: Query,
    k_max: usize,
    /// Best first. Always a prefix of the window's full ranking.
    entries: Vec<RankKey>,
    /// Whether `entries` holds every matching document of the window.
    complete: bool,
}

impl KmaxBuffer {
    fn rescan<'a>(query: Query, k_max: usize, docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let (entries, matches) = naive_top_n(&query, docs, k_max);
        Self {
            query,
            k_max,
            complete: matches <= k_max,
            entries,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn top_k(&self) -> Vec<ScoredDoc> {
        self.entries.iter().take(self.query.k).copied().map(verified).collect()
    }

    fn insert(&mut self, key: RankKey) {
        let pos = self.entries.partition_point(|e| *e > key);
        self.entries.insert(pos, key);
        if self.entries.len() > self.k_max {
            self.entries.truncate(self.k_max);
            self.complete = false;
        }
    }

    /// Offers a scored document. Documents ranking below an incomplete
    /// buffer's tail are left out, which keeps the buffer a prefix.
    fn offer(&mut self, key: RankKey) {
        if key.score <= 0.0 {
            return;
        }
        let fits = self.complete || self.entries.last().is_some_and(|last| key > *last);
        if fits {
            self.insert(key);
        }
    }

    fn remove(&mut self, doc: DocId) -> bool {
        match self.entries.iter().position(|e| e.doc == doc) {
            Some(i) => {
                self.entries.remove(i);
                true
            }
            None => false,
        }
    }

    fn needs_rescan(&self) -> bool {
        !self.complete && self.entries.len() < self.query.k
    }
}

/// Naive evaluation with `k_max`-buffered results.
#[derive(Debug, Clone)]
pub struct KmaxEngine {
    base: RescanWindow,
    factor: usize,
    buffers: BTreeMap<QueryId, KmaxBuffer>,
    rescans: u64,
}

impl KmaxEngine {
    pub fn new(config: EngineConfig, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("k_max factor must be at least 1".into()));
        }
        Ok(Self {
            base: RescanWindow::new(config)?,
            factor,
            buffers: BTreeMap::new(),
            rescans: 0,
        })
    }

    pub fn rescans(&self) -> u64 {
        self.rescans
    }

    pub fn buffer(&self, id: QueryId) -> Option<&KmaxBuffer> {
        self.buffers.get(&id)
    }

    /// Applies one event to every buffer, rescanning the ones that ran short.
    pub fn step(&mut self, event: &Event) -> Result<EventOutcome> {
        let mut out = EventOutcome::default();
        let before: BTreeMap<QueryId, Vec<ScoredDoc>> =
            self.buffers.iter().map(|(&q, b)| (q, b.top_k())).collect();
        match event {
            Event::Arrival(doc) => {
                let gone = self.base.arrive(doc.clone(), &mut out)?;
                let arrived = self.base.window.store().get(doc.id).filter(|d| !d.is_duplicate());
                for buf in self.buffers.values_mut() {
                    if let Some(d) = arrived {
                        buf.offer(RankKey::new(score(d, &buf.query), d.id));
                    }
                    for g in &gone {
                        buf.remove(g.id);
                    }
                }
            }
            Event::Feedback { doc_id, rating } => {
                if !self.base.feedback(*doc_id, *rating)? {
                    return Ok(out);
                }
                let d = self.base.window.store().get(*doc_id).expect("feedback target in window");
                for buf in self.buffers.values_mut() {
                    let was_in = buf.remove(d.id);
                    let key = RankKey::new(score(d, &buf.query), d.id);
                    if was_in {
                        // Scores only grow, so the document stays within the prefix.
                        buf.insert(key);
                    } else {
                        buf.offer(key);
                    }
                }
            }
        }
        for buf in self.buffers.values_mut() {
            if buf.needs_rescan() {
                *buf = KmaxBuffer::rescan(buf.query.clone(), buf.k_max, self.base.docs());
                self.rescans += 1;
            }
        }
        for (qid, buf) in &self.buffers {
            if before.get(qid) != Some(&buf.top_k()) {
                out.changed.insert(*qid);
            }
        }
        Ok(out)
    }
}

impl Monitor for KmaxEngine {
    fn register_query(&mut self, query: Query) -> Result<()> {
        if self.buffers.contains_key(&query.id) {
            return Err(Error::DuplicateQuery(query.id));
        }
        let k_max = query.k * self.factor;
        let id = query.id;
        self.buffers.insert(id, KmaxBuffer::rescan(query, k_max, self.base.docs()));
        self.rescans += 1;
        Ok(())
    }

    fn unregister_query(&mut self, id: QueryId) -> Result<()> {
        self.buffers.remove(&id).map(|_| ()).ok_or(Error::UnknownQuery(id))
    }

    fn process(&mut self, event: &Event) -> Result<EventOutcome> {
        self.step(event)
    }

    fn current_result(&self, id: QueryId) -> Result<Vec<ScoredDoc>> {
        self.buffers.get(&id).map(KmaxBuffer::top_k).ok_or(Error::UnknownQuery(id))
    }

    fn query_ids(&self) -> Vec<QueryId> {
        self.buffers.keys().copied().collect()
    }

    fn query(&self, id: QueryId) -> Option<&Query> {
        self.buffers.get(&id).map(|b| &b.query)
    }

    fn window_documents(&self) -> Vec<&Document> {
        self.base.docs().collect()
    }
}
