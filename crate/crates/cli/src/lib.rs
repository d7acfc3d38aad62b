//! Command-line driver: replay stream files, generate synthetic workloads and
//! run benchmark sweeps.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 verification
//! mismatch.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use window_topk::io::{
    format_feedback, parse_queries, parse_stream, write_metrics, write_queries, write_results, write_stream,
    write_summary,
};
use window_topk::model::load_stopwords;
use window_topk::stream_bench::{
    build_engine, generate_queries, generate_stream, summarize, sweep, synthetic_vocabulary, verify_against_oracle,
    EngineKind, MetricsRecord, QueryConfig, StreamConfig, SweepConfig, SweepParam,
};
use window_topk::{DedupConfig, DocId, EngineConfig, Error, Event, Fault, Vocabulary, WindowKind, WindowPolicy};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Io(_) | Error::InvalidQuery(_) | Error::DuplicateQuery(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "window-topk", version, about = "Continuous top-k text queries over a sliding window")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a stream file against a query file.
    Ingest(IngestArgs),
    /// Generate a synthetic stream file and query file.
    Gen(GenArgs),
    /// Time engines over a parameter sweep.
    Bench(BenchArgs),
    /// Append a feedback record to a stream file.
    Feedback(FeedbackArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Ita,
    Naive,
    NaiveKmax,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Ita => EngineKind::Ita,
            EngineArg::Naive => EngineKind::Naive,
            EngineArg::NaiveKmax => EngineKind::NaiveKmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Count,
    Time,
}

#[derive(Debug, Clone, Args)]
pub struct EngineOpts {
    #[arg(long, value_enum, default_value = "ita")]
    pub engine: EngineArg,
    #[arg(long, value_enum, default_value = "count")]
    pub window: WindowArg,
    /// Window size: documents for count windows, ticks for time windows.
    #[arg(long = "n", default_value_t = 1000)]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Cosine at or above which an arrival is a duplicate; above 1 disables.
    #[arg(long, default_value_t = 0.95)]
    pub dedup_threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub dedup_candidates: usize,
    /// Feedback boost factor.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
}

impl EngineOpts {
    fn engine_config(&self) -> CliResult<EngineConfig> {
        let kind = match self.window {
            WindowArg::Count => WindowKind::CountBased,
            WindowArg::Time => WindowKind::TimeBased,
        };
        let policy = WindowPolicy::new(kind, self.n)?;
        let dedup = DedupConfig::new(self.dedup_threshold, self.dedup_candidates)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CliError::config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(EngineConfig::new(policy).with_dedup(dedup).with_alpha(self.alpha))
    }
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub engine: EngineOpts,
    /// Check results against a full rescan every M events (default 100).
    #[arg(long, num_args = 0..=1, default_missing_value = "100", value_name = "M")]
    pub verify: Option<usize>,
    /// Results file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-event metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// One stopword per line, applied to free-text records.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Mean arrivals per second.
    #[arg(long, default_value_t = 200.0)]
    pub rate: f64,
    /// Seconds of stream to generate.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 10)]
    pub doc_len_min: usize,
    #[arg(long, default_value_t = 100)]
    pub doc_len_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
    /// Number of queries.
    #[arg(long = "q", default_value_t = 100)]
    pub q: usize,
    /// Terms per query.
    #[arg(long = "terms", default_value_t = 4)]
    pub terms: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stream_out: PathBuf,
    #[arg(long)]
    pub queries_out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// `n=v1,v2,...` (terms per query) or `N=v1,v2,...` (window size).
    #[arg(long)]
    pub sweep: Option<String>,
    /// Comma-separated engines among ita, naive, naive-kmax.
    #[arg(long, default_value = "ita,naive")]
    pub engines: String,
    #[command(flatten)]
    pub engine: EngineOpts,
    /// Number of queries.
    #[arg(long = "q", default_value_t = 100)]
    pub q: usize,
    /// Terms per query.
    #[arg(long = "terms", default_value_t = 4)]
    pub terms: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 10)]
    pub doc_len_min: usize,
    #[arg(long, default_value_t = 100)]
    pub doc_len_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
    /// Timed events per run, after the window is prefilled.
    #[arg(long, default_value_t = 200)]
    pub events: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, num_args = 0..=1, default_missing_value = "100", value_name = "M")]
    pub verify: Option<usize>,
    /// Summary CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FeedbackArgs {
    pub doc_id: u64,
    pub rating: f64,
    #[arg(long)]
    pub stream: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Gen(a) => generate(&a),
        Command::Bench(a) => bench(&a),
        Command::Feedback(a) => feedback(&a),
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> window_topk::Result<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush().map_err(|e| CliError::config(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            Ok(())
        }
    }
}

fn in_file(path: &Path, e: Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

fn ingest(a: &IngestArgs) -> CliResult<()> {
    let config = a.engine.engine_config()?;
    let stopwords = match &a.stopwords {
        Some(p) => load_stopwords(p)?,
        None => HashSet::new(),
    };
    let mut vocab = Vocabulary::new();
    let queries = parse_queries(open(&a.queries)?, &mut vocab).map_err(|e| in_file(&a.queries, e))?;
    let records = parse_stream(open(&a.stream)?, &mut vocab, &stopwords).map_err(|e| in_file(&a.stream, e))?;

    let mut engine = build_engine(a.engine.engine.into(), config, a.engine.workers)?;
    for q in queries {
        engine.register_query(q)?;
    }
    let mut metrics = Vec::with_capacity(records.len());
    let mut mismatches = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let start = Instant::now();
        let outcome = engine.process(&rec.event);
        let micros = start.elapsed().as_secs_f64() * 1e6;
        let outcome = match outcome {
            Ok(o) => o,
            // Feedback may name a document that has already left the window.
            Err(Error::UnknownDocument(d)) if matches!(rec.event, Event::Feedback { .. }) => {
                eprintln!("line {}: document {d} is not in the window; feedback ignored", rec.line);
                Default::default()
            }
            Err(e) => {
                return Err(CliError {
                    code: EXIT_DATA,
                    message: format!("{}: line {}: {e}", a.stream.display(), rec.line),
                })
            }
        };
        let kind = match &rec.event {
            Event::Arrival(_) if outcome.expired.is_empty() => "arrival",
            Event::Arrival(_) => "arrival+expiration",
            Event::Feedback { .. } => "feedback",
        };
        metrics.push(MetricsRecord {
            event: i,
            kind,
            micros,
            queries_updated: outcome.changed.len(),
        });
        if let Some(m) = a.verify {
            if (i + 1) % m.max(1) == 0 || i + 1 == records.len() {
                mismatches.extend(verify_against_oracle(engine.as_ref(), i)?);
            }
        }
    }
    with_output(a.out.as_deref(), |w| write_results(w, engine.as_ref()))?;
    if let Some(p) = &a.metrics {
        with_output(Some(p), |w| write_metrics(w, &metrics))?;
    }
    let s = summarize(&metrics);
    eprintln!(
        "{} events, mean {:.1}us, p95 {:.1}us",
        metrics.len(),
        s.mean_micros,
        s.p95_micros
    );
    report_mismatches(&mismatches)
}

fn report_mismatches(mismatches: &[window_topk::stream_bench::Mismatch]) -> CliResult<()> {
    if mismatches.is_empty() {
        return Ok(());
    }
    for m in mismatches.iter().take(20) {
        eprintln!("mismatch: {m}");
    }
    Err(CliError {
        code: EXIT_MISMATCH,
        message: format!("{} result mismatches against the full-rescan oracle", mismatches.len()),
    })
}

fn stream_config(
    rate: f64,
    duration: f64,
    vocab: usize,
    doc_len: (usize, usize),
    zipf: f64,
    seed: u64,
) -> CliResult<StreamConfig> {
    let c = StreamConfig {
        rate,
        duration,
        vocab_size: vocab,
        doc_len,
        zipf_s: zipf,
        seed,
    };
    c.validate()?;
    Ok(c)
}

/// Query seeds are derived from the single run seed.
fn query_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn generate(a: &GenArgs) -> CliResult<()> {
    let sc = stream_config(
        a.rate,
        a.duration,
        a.vocab,
        (a.doc_len_min, a.doc_len_max),
        a.zipf,
        a.seed,
    )?;
    let qc = QueryConfig {
        count: a.q,
        terms: a.terms,
        k: a.k,
        seed: query_seed(a.seed),
    };
    let docs = generate_stream(&sc)?;
    let queries = generate_queries(&qc, a.vocab)?;
    let vocab = synthetic_vocabulary(a.vocab);
    let events: Vec<Event> = docs.into_iter().map(Event::Arrival).collect();
    with_output(Some(&a.stream_out), |w| write_stream(w, &events, &vocab))?;
    with_output(Some(&a.queries_out), |w| write_queries(w, &queries, &vocab))?;
    eprintln!("{} documents, {} queries", events.len(), queries.len());
    Ok(())
}

/// Parses `n=3,8,13` or `N=10,100`.
pub fn parse_sweep(spec: &str) -> CliResult<(SweepParam, Vec<u64>)> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("sweep {spec:?} must look like n=1,2,3 or N=10,100")))?;
    let param = match name.trim() {
        "n" => SweepParam::QueryLength,
        "N" => SweepParam::WindowSize,
        other => return Err(CliError::config(format!("unknown sweep parameter {other:?}"))),
    };
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<u64>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| CliError::config(format!("bad sweep value {v:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("sweep values must be strictly ascending"));
    }
    Ok((param, values))
}

fn bench(a: &BenchArgs) -> CliResult<()> {
    let engine_config = a.engine.engine_config()?;
    if engine_config.window.kind != WindowKind::CountBased {
        return Err(CliError::config("benchmarks use count-based windows"));
    }
    let engines = a
        .engines
        .split(',')
        .map(|s| s.trim().parse::<EngineKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let (param, values) = match &a.sweep {
        Some(s) => parse_sweep(s)?,
        None => (SweepParam::WindowSize, vec![a.engine.n]),
    };
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("skip-refill") => Some(Fault::SkipRefill),
        Some(other) => return Err(CliError::config(format!("unknown fault {other:?}"))),
    };
    let base = SweepConfig {
        stream: stream_config(
            1.0,
            0.0,
            a.vocab,
            (a.doc_len_min, a.doc_len_max),
            a.zipf,
            a.seed,
        )?,
        queries: QueryConfig {
            count: a.q,
            terms: a.terms,
            k: a.k,
            seed: query_seed(a.seed),
        },
        window: a.engine.n,
        events: a.events,
        repeats: a.repeats,
        verify_every: a.verify,
        dedup: engine_config.dedup,
        alpha: engine_config.alpha,
        workers: a.engine.workers,
        fault,
    };
    let rows = sweep(param, &values, &base, &engines)?;
    with_output(a.out.as_deref(), |w| write_summary(w, &rows))?;
    let mismatches: Vec<_> = rows.iter().flat_map(|r| r.mismatches.iter().cloned()).collect();
    report_mismatches(&mismatches)
}

fn feedback(a: &FeedbackArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.rating) {
        return Err(CliError::config(format!("rating must lie in [0, 1], got {}", a.rating)));
    }
    let mut f = OpenOptions::new()
        .append(true)
        .open(&a.stream)
        .map_err(|e| CliError::config(format!("cannot append to {}: {e}", a.stream.display())))?;
    writeln!(f, "{}", format_feedback(DocId(a.doc_id), a.rating))
        .map_err(|e| CliError::config(format!("cannot append to {}: {e}", a.stream.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parsing() {
        let (p, v) = parse_sweep("n=3,8,13,18,23").unwrap();
        assert_eq!(p, SweepParam::QueryLength);
        assert_eq!(v, vec![3, 8, 13, 18, 23]);
        assert_eq!(parse_sweep("N=10").unwrap().0, SweepParam::WindowSize);
        assert!(parse_sweep("k=1").is_err());
        assert!(parse_sweep("n=3,3").is_err());
        assert!(parse_sweep("n=").is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).code, EXIT_CONFIG);
        assert_eq!(
            CliError::from(Error::Parse {
                line: 3,
                message: "x".into()
            })
            .code,
            EXIT_DATA
        );
    }
}
