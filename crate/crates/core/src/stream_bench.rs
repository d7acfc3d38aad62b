//! Synthetic workloads and the per-event timing harness.
//!
//! Streams are Poisson arrivals over a Zipf-skewed synthetic vocabulary whose
//! term `i` is spelled `t{i}`. Arrival times are in milliseconds. Everything
//! is a pure function of the seeds.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};

use crate::baseline::{naive_top_k, KmaxEngine, NaiveEngine, DEFAULT_KMAX_FACTOR};
use crate::coordinator::ShardedEngine;
use crate::dedup::DedupConfig;
use crate::engine::{EngineConfig, Fault, IncrementalEngine};
use crate::error::{Error, Result};
use crate::model::{CompositionList, DocId, Document, Query, QueryId, ScoredDoc, TermId, Vocabulary};
use crate::monitor::{Event, Monitor};
use crate::window::WindowPolicy;

/// Ticks per second of generated arrival times.
pub const TICKS_PER_SECOND: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    /// Mean arrivals per second.
    pub rate: f64,
    /// Stream length in seconds.
    pub duration: f64,
    pub vocab_size: usize,
    /// Inclusive range of term draws per document.
    pub doc_len: (usize, usize),
    pub zipf_s: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            rate: 200.0,
            duration: 10.0,
            vocab_size: 1000,
            doc_len: (10, 100),
            zipf_s: 1.0,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!("arrival rate must be non-negative, got {}", self.rate)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be non-negative, got {}", self.duration)));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be at least 1".into()));
        }
        let (lo, hi) = self.doc_len;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad document length range [{lo}, {hi}]")));
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::Config(format!("zipf exponent must be non-negative, got {}", self.zipf_s)));
        }
        Ok(())
    }
}

/// Vocabulary where term id `i` is the token `t{i}`.
pub fn synthetic_vocabulary(size: usize) -> Vocabulary {
    let mut v = Vocabulary::new();
    for i in 0..size {
        v.intern(&format!("t{i}"));
    }
    v
}

struct DocSampler {
    zipf: Zipf<f64>,
    doc_len: (usize, usize),
    vocab_size: usize,
}

impl DocSampler {
    fn new(config: &StreamConfig) -> Result<Self> {
        config.validate()?;
        let zipf = Zipf::new(config.vocab_size as f64, config.zipf_s)
            .map_err(|e| Error::Config(format!("zipf distribution: {e}")))?;
        Ok(Self {
            zipf,
            doc_len: config.doc_len,
            vocab_size: config.vocab_size,
        })
    }

    fn composition(&self, rng: &mut ChaCha8Rng) -> CompositionList {
        let len = rng.random_range(self.doc_len.0..=self.doc_len.1);
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for _ in 0..len {
            let rank = self.zipf.sample(rng) as usize;
            let term = rank.clamp(1, self.vocab_size) - 1;
            *counts.entry(term as u32).or_default() += 1.0;
        }
        CompositionList::from_pairs(counts.into_iter().map(|(t, w)| (TermId(t), w))).expect("counts are positive")
    }
}

/// Poisson arrivals over `[0, duration)`, ids from 1.
pub fn generate_stream(config: &StreamConfig) -> Result<Vec<Document>> {
    let sampler = DocSampler::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut docs = Vec::new();
    if config.rate == 0.0 {
        return Ok(docs);
    }
    let gaps = Exp::new(config.rate).map_err(|e| Error::Config(format!("exponential distribution: {e}")))?;
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= config.duration {
            break;
        }
        let id = docs.len() as u64 + 1;
        let time = (t * TICKS_PER_SECOND).floor() as u64;
        docs.push(Document::new(DocId(id), time, sampler.composition(&mut rng)));
    }
    Ok(docs)
}

/// Exactly `count` documents with logical arrival times equal to their ids.
pub fn generate_documents(config: &StreamConfig, count: usize) -> Result<Vec<Document>> {
    let sampler = DocSampler::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((1..=count as u64)
        .map(|id| Document::new(DocId(id), id, sampler.composition(&mut rng)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryConfig {
    pub count: usize,
    pub terms: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            terms: 4,
            k: 10,
            seed: 1,
        }
    }
}

/// `count` queries of `terms` distinct uniformly drawn terms, unit weights.
pub fn generate_queries(config: &QueryConfig, vocab_size: usize) -> Result<Vec<Query>> {
    if config.terms == 0 || config.k == 0 {
        return Err(Error::Config("queries need at least one term and k ≥ 1".into()));
    }
    if config.terms > vocab_size {
        return Err(Error::Config(format!(
            "{} terms per query exceeds vocabulary of {vocab_size}",
            config.terms
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.count)
        .map(|i| {
            let picks = index::sample(&mut rng, vocab_size, config.terms);
            Query::new(
                QueryId(i as u64 + 1),
                picks.into_iter().map(|t| (TermId(t as u32), 1.0)),
                config.k,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EngineKind {
    Ita,
    Naive,
    NaiveKmax,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Ita => "ita",
            EngineKind::Naive => "naive",
            EngineKind::NaiveKmax => "naive-kmax",
        }
    }
}

impl std::str::FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ita" => Ok(EngineKind::Ita),
            "naive" => Ok(EngineKind::Naive),
            "naive-kmax" => Ok(EngineKind::NaiveKmax),
            other => Err(Error::Config(format!("unknown engine {other:?}"))),
        }
    }
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds an engine. More than one worker is only meaningful for `Ita`.
pub fn build_engine(kind: EngineKind, config: EngineConfig, workers: usize) -> Result<Box<dyn Monitor + Send>> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    if workers > 1 && kind != EngineKind::Ita {
        return Err(Error::Config(format!("engine {kind} does not support multiple workers")));
    }
    Ok(match kind {
        EngineKind::Ita if workers > 1 => Box::new(ShardedEngine::new(config, workers)?.with_parallel(true)),
        EngineKind::Ita => Box::new(IncrementalEngine::new(config)?),
        EngineKind::Naive => Box::new(NaiveEngine::new(config)?),
        EngineKind::NaiveKmax => Box::new(KmaxEngine::new(config, DEFAULT_KMAX_FACTOR)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub event: usize,
    /// `arrival`, `arrival+expiration` or `feedback`.
    pub kind: &'static str,
    pub micros: f64,
    pub queries_updated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    /// Events that entered the statistics, after warm-up.
    pub events: usize,
    pub mean_micros: f64,
    pub p95_micros: f64,
}

/// Mean and 95th percentile (nearest rank) after dropping the first 10% of
/// records as warm-up.
pub fn summarize(records: &[MetricsRecord]) -> Summary {
    let skip = records.len() / 10;
    let mut times: Vec<f64> = records[skip..].iter().map(|r| r.micros).collect();
    if times.is_empty() {
        return Summary::default();
    }
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let rank = ((0.95 * times.len() as f64).ceil() as usize).clamp(1, times.len());
    Summary {
        events: times.len(),
        mean_micros: mean,
        p95_micros: times[rank - 1],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub event: usize,
    pub query: QueryId,
    pub expected: Vec<ScoredDoc>,
    pub got: Vec<ScoredDoc>,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids = |v: &[ScoredDoc]| v.iter().map(|s| s.doc_id.0.to_string()).collect::<Vec<_>>().join(",");
        write!(
            f,
            "event {}: query {} expected [{}] got [{}]",
            self.event,
            self.query,
            ids(&self.expected),
            ids(&self.got)
        )
    }
}

/// Whether two result lists agree: same ids in the same order, scores within
/// `1e-9`.
pub fn results_match(a: &[ScoredDoc], b: &[ScoredDoc]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.doc_id == y.doc_id && (x.score - y.score).abs() <= 1e-9)
}

/// Order-sensitive digest of every query's current result.
pub fn result_digest(engine: &dyn Monitor) -> Result<u64> {
    let mut h = DefaultHasher::new();
    for qid in engine.query_ids() {
        qid.hash(&mut h);
        for s in engine.current_result(qid)? {
            s.doc_id.hash(&mut h);
            s.score.to_bits().hash(&mut h);
        }
    }
    Ok(h.finish())
}

/// Compares every query of `engine` with a full rescan of its window.
pub fn verify_against_oracle(engine: &dyn Monitor, event: usize) -> Result<Vec<Mismatch>> {
    let docs = engine.window_documents();
    let mut out = Vec::new();
    for qid in engine.query_ids() {
        let q = engine.query(qid).expect("listed query exists");
        let expected = naive_top_k(q, docs.iter().copied());
        let got = engine.current_result(qid)?;
        if !results_match(&expected, &got) {
            out.push(Mismatch {
                event,
                query: qid,
                expected,
                got,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct BenchRun {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
    /// `(event index, digest)` at each verified event.
    pub digests: Vec<(usize, u64)>,
    pub mismatches: Vec<Mismatch>,
}

/// Replays `prefill` untimed, registers `queries`, then times every event of
/// `events` end to end. With `verify_every = Some(m)`, every m-th timed event
/// (and the last) is checked against the naive oracle outside the timed
/// region.
pub fn run_benchmark(
    engine: &mut dyn Monitor,
    prefill: &[Event],
    queries: &[Query],
    events: &[Event],
    verify_every: Option<usize>,
) -> Result<BenchRun> {
    for e in prefill {
        engine.process(e)?;
    }
    for q in queries {
        engine.register_query(q.clone())?;
    }
    let mut run = BenchRun {
        records: Vec::with_capacity(events.len()),
        ..BenchRun::default()
    };
    for (i, event) in events.iter().enumerate() {
        let start = Instant::now();
        let out = engine.process(event)?;
        let micros = start.elapsed().as_secs_f64() * 1e6;
        let kind = match event {
            Event::Arrival(_) if out.expired.is_empty() => "arrival",
            Event::Arrival(_) => "arrival+expiration",
            Event::Feedback { .. } => "feedback",
        };
        run.records.push(MetricsRecord {
            event: i,
            kind,
            micros,
            queries_updated: out.changed.len(),
        });
        if let Some(m) = verify_every {
            if (i + 1) % m.max(1) == 0 || i + 1 == events.len() {
                run.digests.push((i, result_digest(engine)?));
                run.mismatches.extend(verify_against_oracle(engine, i)?);
            }
        }
    }
    run.summary = summarize(&run.records);
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Terms per query.
    QueryLength,
    /// Window capacity.
    WindowSize,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::QueryLength => "n",
            SweepParam::WindowSize => "N",
        }
    }
}

/// Fixed parameters of a sweep. The swept one overrides `queries.terms` or
/// `window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub stream: StreamConfig,
    pub queries: QueryConfig,
    pub window: u64,
    /// Timed events per run.
    pub events: usize,
    /// Runs per (value, engine); the fastest mean is reported.
    pub repeats: usize,
    pub verify_every: Option<usize>,
    pub dedup: DedupConfig,
    pub alpha: f64,
    pub workers: usize,
    /// Defect injected into single-node ITA engines, for testing the
    /// verification path.
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::default(),
            queries: QueryConfig::default(),
            window: 1000,
            events: 200,
            repeats: 1,
            verify_every: None,
            dedup: DedupConfig::disabled(),
            alpha: crate::feedback::DEFAULT_ALPHA,
            workers: 1,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: u64,
    pub engine: EngineKind,
    pub summary: Summary,
    pub mismatches: Vec<Mismatch>,
}

/// One benchmark per (value, engine) on a count-based window, with streams
/// and queries shared across engines for each value.
pub fn sweep(param: SweepParam, values: &[u64], base: &SweepConfig, engines: &[EngineKind]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if engines.is_empty() {
        return Err(Error::Config("sweep needs at least one engine".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = *base;
        match param {
            SweepParam::QueryLength => cfg.queries.terms = value as usize,
            SweepParam::WindowSize => cfg.window = value,
        }
        let policy = WindowPolicy::count(cfg.window)?;
        let docs = generate_documents(&cfg.stream, cfg.window as usize + cfg.events)?;
        let (prefill, timed) = docs.split_at(cfg.window as usize);
        let prefill: Vec<Event> = prefill.iter().cloned().map(Event::Arrival).collect();
        let timed: Vec<Event> = timed.iter().cloned().map(Event::Arrival).collect();
        let queries = generate_queries(&cfg.queries, cfg.stream.vocab_size)?;
        let engine_config = EngineConfig::new(policy).with_dedup(cfg.dedup).with_alpha(cfg.alpha);
        for &kind in engines {
            let workers = if kind == EngineKind::Ita { cfg.workers } else { 1 };
            let mut best: Option<BenchRun> = None;
            for _ in 0..cfg.repeats.max(1) {
                let mut engine = match cfg.fault {
                    Some(fault) if kind == EngineKind::Ita && workers == 1 => {
                        let mut e = IncrementalEngine::new(engine_config)?;
                        e.inject_fault(fault);
                        Box::new(e)
                    }
                    _ => build_engine(kind, engine_config, workers)?,
                };
                let run = run_benchmark(engine.as_mut(), &prefill, &queries, &timed, cfg.verify_every)?;
                if best.as_ref().is_none_or(|b| run.summary.mean_micros < b.summary.mean_micros) {
                    best = Some(run);
                }
            }
            let best = best.expect("at least one repeat");
            rows.push(SweepRow {
                param,
                value,
                engine: kind,
                summary: best.summary,
                mismatches: best.mismatches,
            });
        }
    }
    Ok(rows)
}

/// Spearman rank correlation, average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = avg;
        }
        i = j + 1;
    }
    out
}
