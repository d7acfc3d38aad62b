//! Document-partitioned scatter-gather evaluation. Each shard runs a full
//! incremental engine over its share of the window; the coordinator owns the
//! global FIFO, so expiration is decided once for the whole window, and merges
//! the per-shard top-k lists on demand.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::dedup::{check_duplicate, DedupConfig, DuplicateMatch};
use crate::engine::{EngineConfig, IncrementalEngine};
use crate::error::{Error, Result};
use crate::model::{DocId, Document, Query, QueryId, RankKey, ScoredDoc};
use crate::monitor::{Event, EventOutcome, Monitor};
use crate::window::WindowPolicy;

#[derive(Debug, Clone, Copy)]
struct Slot {
    id: DocId,
    time: u64,
}

/// Work routed to one shard for a single event.
#[derive(Debug, Default)]
struct ShardOps {
    arrival: Option<Document>,
    expirations: usize,
}

#[derive(Debug, Clone)]
pub struct ShardedEngine {
    shards: Vec<IncrementalEngine>,
    policy: WindowPolicy,
    dedup: DedupConfig,
    fifo: VecDeque<Slot>,
    last: Option<(DocId, u64)>,
    queries: BTreeMap<QueryId, Query>,
    parallel: bool,
}

impl ShardedEngine {
    pub fn new(config: EngineConfig, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        // Shards never expire on their own and never run dedup themselves.
        let shard_config = EngineConfig {
            window: WindowPolicy::count(u64::MAX)?,
            dedup: DedupConfig::disabled(),
            alpha: config.alpha,
        };
        let shards = (0..workers)
            .map(|_| IncrementalEngine::new(shard_config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shards,
            policy: config.window,
            dedup: config.dedup,
            fifo: VecDeque::new(),
            last: None,
            queries: BTreeMap::new(),
            parallel: false,
        })
    }

    /// Process routed work on all shards concurrently. Results are identical
    /// to sequential mode.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn workers(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, index: usize) -> Option<&IncrementalEngine> {
        self.shards.get(index)
    }

    pub fn shard_of(&self, doc: DocId) -> usize {
        (doc.0 % self.shards.len() as u64) as usize
    }

    pub fn window_len(&self) -> usize {
        self.fifo.len()
    }

    fn find_duplicate(&self, doc: &Document) -> Option<DuplicateMatch> {
        let mut best: Option<DuplicateMatch> = None;
        for shard in &self.shards {
            let w = shard.window();
            if let Some(m) = check_duplicate(doc, w.store(), w.dictionary(), &self.dedup) {
                if best.as_ref().is_none_or(|b| m.better_than(b)) {
                    best = Some(m);
                }
            }
        }
        best
    }

    fn check_order(&self, doc: &Document) -> Result<()> {
        if let Some((last, clock)) = self.last {
            if doc.id <= last {
                return Err(Error::OutOfOrderId { last, got: doc.id });
            }
            if doc.arrival_time < clock {
                return Err(Error::OutOfOrderTime {
                    doc: doc.id,
                    now: clock,
                    got: doc.arrival_time,
                });
            }
        }
        Ok(())
    }

    fn arrive(&mut self, mut doc: Document) -> Result<EventOutcome> {
        self.check_order(&doc)?;
        if doc.duplicate_of.is_none() {
            doc.duplicate_of = self.find_duplicate(&doc).map(|m| m.doc_id);
        }
        let mut out = EventOutcome {
            duplicate_of: doc.duplicate_of,
            ..EventOutcome::default()
        };
        let now = doc.arrival_time.max(self.last.map_or(0, |(_, c)| c));
        self.last = Some((doc.id, now));
        self.fifo.push_back(Slot {
            id: doc.id,
            time: doc.arrival_time,
        });

        let mut ops: Vec<ShardOps> = (0..self.shards.len()).map(|_| ShardOps::default()).collect();
        let owner = self.shard_of(doc.id);
        ops[owner].arrival = Some(doc);
        while let Some(head) = self.fifo.front() {
            if !self.policy.expires(head.time, self.fifo.len(), now) {
                break;
            }
            let head = self.fifo.pop_front().expect("front exists");
            let s = self.shard_of(head.id);
            ops[s].expirations += 1;
            out.expired.push(head.id);
        }

        let run = |(shard, op): (&mut IncrementalEngine, ShardOps)| -> Result<BTreeSet<QueryId>> {
            let mut changed = BTreeSet::new();
            if let Some(doc) = op.arrival {
                changed.extend(shard.handle_arrival(doc)?);
            }
            for _ in 0..op.expirations {
                if let Some((_, c)) = shard.expire_oldest()? {
                    changed.extend(c);
                }
            }
            Ok(changed)
        };
        let per_shard: Vec<Result<BTreeSet<QueryId>>> = if self.parallel {
            self.shards.par_iter_mut().zip(ops.into_par_iter()).map(run).collect()
        } else {
            self.shards.iter_mut().zip(ops).map(run).collect()
        };
        for r in per_shard {
            out.changed.extend(r?);
        }
        Ok(out)
    }

    fn feedback(&mut self, doc_id: DocId, rating: f64) -> Result<EventOutcome> {
        let s = self.shard_of(doc_id);
        Ok(EventOutcome {
            changed: self.shards[s].record_feedback(doc_id, rating)?,
            ..EventOutcome::default()
        })
    }

    /// Runs every shard's exhaustive invariant check.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, s) in self.shards.iter().enumerate() {
            s.check_invariants().map_err(|e| format!("shard {i}: {e}"))?;
        }
        Ok(())
    }
}

/// Merges per-shard top-k lists into the global top-k.
pub fn merge_results(partials: &[Vec<ScoredDoc>], k: usize) -> Vec<ScoredDoc> {
    let mut all: Vec<ScoredDoc> = partials.iter().flatten().copied().collect();
    all.sort_unstable_by_key(|s| std::cmp::Reverse(RankKey::new(s.score, s.doc_id)));
    all.truncate(k);
    all
}

impl Monitor for ShardedEngine {
    fn register_query(&mut self, query: Query) -> Result<()> {
        if self.queries.contains_key(&query.id) {
            return Err(Error::DuplicateQuery(query.id));
        }
        for shard in &mut self.shards {
            shard.register(query.clone())?;
        }
        self.queries.insert(query.id, query);
        Ok(())
    }

    fn unregister_query(&mut self, id: QueryId) -> Result<()> {
        self.queries.remove(&id).ok_or(Error::UnknownQuery(id))?;
        for shard in &mut self.shards {
            shard.unregister(id)?;
        }
        Ok(())
    }

    fn process(&mut self, event: &Event) -> Result<EventOutcome> {
        match event {
            Event::Arrival(doc) => self.arrive(doc.clone()),
            Event::Feedback { doc_id, rating } => self.feedback(*doc_id, *rating),
        }
    }

    fn current_result(&self, id: QueryId) -> Result<Vec<ScoredDoc>> {
        let q = self.queries.get(&id).ok_or(Error::UnknownQuery(id))?;
        let partials = self
            .shards
            .iter()
            .map(|s| s.current_result(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(merge_results(&partials, q.k))
    }

    fn query_ids(&self) -> Vec<QueryId> {
        self.queries.keys().copied().collect()
    }

    fn query(&self, id: QueryId) -> Option<&Query> {
        self.queries.get(&id)
    }

    fn window_documents(&self) -> Vec<&Document> {
        let mut docs: Vec<&Document> = self.shards.iter().flat_map(|s| s.window().store().iter()).collect();
        docs.sort_unstable_by_key(|d| d.id);
        docs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CompositionList, TermId};

    fn sd(doc: u64, score: f64) -> ScoredDoc {
        ScoredDoc {
            doc_id: DocId(doc),
            score,
            verified: true,
        }
    }

    fn doc(id: u64, terms: &[(u32, f64)]) -> Document {
        Document::new(
            DocId(id),
            id,
            CompositionList::from_pairs(terms.iter().map(|&(t, w)| (TermId(t), w))).unwrap(),
        )
    }

    fn config(n: u64) -> EngineConfig {
        EngineConfig::new(WindowPolicy::count(n).unwrap()).with_dedup(DedupConfig::disabled())
    }

    #[test]
    fn hand_merge() {
        let merged = merge_results(&[vec![sd(9, 5.0)], vec![sd(4, 7.0), sd(2, 1.0)]], 2);
        assert_eq!(merged, vec![sd(4, 7.0), sd(9, 5.0)]);
    }

    #[test]
    fn merge_ties_prefer_newer() {
        let merged = merge_results(&[vec![sd(3, 2.0)], vec![sd(8, 2.0)]], 2);
        assert_eq!(merged, vec![sd(8, 2.0), sd(3, 2.0)]);
    }

    #[test]
    fn single_shard_merge_is_identity() {
        let p = vec![sd(5, 3.0), sd(1, 1.0)];
        assert_eq!(merge_results(std::slice::from_ref(&p), 2), p);
    }

    #[test]
    fn partitioner_is_modulo() {
        let e = ShardedEngine::new(config(10), 4).unwrap();
        assert_eq!(e.shard_of(DocId(7)), 3);
    }

    #[test]
    fn full_window_routes_one_expiration() {
        let mut e = ShardedEngine::new(config(100), 4).unwrap();
        for i in 1..=100 {
            assert!(e.process(&Event::Arrival(doc(i, &[(1, 1.0)]))).unwrap().expired.is_empty());
        }
        let out = e.process(&Event::Arrival(doc(101, &[(1, 1.0)]))).unwrap();
        assert_eq!(out.expired, vec![DocId(1)]);
        assert_eq!(e.window_len(), 100);
        // Doc 1 lived in shard 1 while the arrival went to shard 1 as well;
        // shard 0 still holds its 25 documents.
        assert_eq!(e.shard(0).unwrap().window().store().len(), 25);
        assert_eq!(e.shard(1).unwrap().window().store().len(), 25);
    }

    #[test]
    fn matches_single_node() {
        let mut single = IncrementalEngine::new(config(5)).unwrap();
        let mut sharded = ShardedEngine::new(config(5), 3).unwrap().with_parallel(true);
        let q = Query::new(QueryId(1), [(TermId(1), 1.0), (TermId(2), 2.0)], 2).unwrap();
        single.register(q.clone()).unwrap();
        sharded.register_query(q).unwrap();
        for i in 1..=30u64 {
            let d = doc(i, &[(1, (i % 7 + 1) as f64), (2, (i % 3 + 1) as f64)]);
            single.process(&Event::Arrival(d.clone())).unwrap();
            sharded.process(&Event::Arrival(d)).unwrap();
            assert_eq!(single.current_result(QueryId(1)).unwrap(), sharded.current_result(QueryId(1)).unwrap());
        }
        sharded.check_invariants().unwrap();
    }

    #[test]
    fn duplicates_are_found_across_shards() {
        let mut e = ShardedEngine::new(EngineConfig::new(WindowPolicy::count(10).unwrap()), 2).unwrap();
        e.process(&Event::Arrival(doc(1, &[(1, 2.0), (2, 1.0)]))).unwrap();
        let out = e.process(&Event::Arrival(doc(2, &[(1, 2.0), (2, 1.0)]))).unwrap();
        assert_eq!(out.duplicate_of, Some(DocId(1)));
    }
}
