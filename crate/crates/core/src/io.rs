//! Line-oriented file formats.
//!
//! Stream files hold one record per line:
//!
//! ```text
//! 17<TAB>1200<TAB>free text to tokenize
//! 18<TAB>1203<TAB>@red:2 rose:1
//! !feedback<TAB>17<TAB>0.8
//! ```
//!
//! Query files hold `query_id<TAB>k<TAB>term[:weight],term[:weight],...`.
//! Blank lines and lines starting with `#` are ignored in both.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{CompositionList, DocId, Document, Query, QueryId, Vocabulary};
use crate::monitor::{Event, Monitor};
use crate::stream_bench::{MetricsRecord, SweepRow};

pub const FEEDBACK_TAG: &str = "!feedback";
pub const METRICS_HEADER: &str = "event,kind,micros,queries_updated";
pub const SUMMARY_HEADER: &str = "param,engine,mean_micros,p95_micros";
pub const RESULTS_HEADER: &str = "query_id\trank\tdoc_id\tscore";

/// A parsed stream line with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub line: usize,
    pub event: Event,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn content_lines(reader: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::Io(e))),
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} {s:?}")))
}

fn check_term(term: &str, line: usize) -> Result<()> {
    if term.is_empty() || term.chars().any(char::is_whitespace) {
        return Err(parse_err(line, format!("invalid term {term:?}")));
    }
    Ok(())
}

fn parse_pairs(spec: &str, line: usize, vocab: &mut Vocabulary) -> Result<CompositionList> {
    let mut pairs = Vec::new();
    for tok in spec.split_whitespace() {
        let (term, w) = tok
            .rsplit_once(':')
            .ok_or_else(|| parse_err(line, format!("expected term:weight, got {tok:?}")))?;
        check_term(term, line)?;
        let w: f64 = parse_num(w, line, "weight")?;
        pairs.push((vocab.intern(&term.to_lowercase()), w));
    }
    CompositionList::from_pairs(pairs).map_err(|e| parse_err(line, e.to_string()))
}

/// Parses one stream line.
pub fn parse_stream_line(
    text: &str,
    line: usize,
    vocab: &mut Vocabulary,
    stopwords: &HashSet<String>,
) -> Result<Event> {
    let fields: Vec<&str> = text.splitn(3, '\t').collect();
    if fields.len() != 3 {
        return Err(parse_err(line, "expected three tab-separated fields"));
    }
    if fields[0] == FEEDBACK_TAG {
        let doc_id = DocId(parse_num(fields[1], line, "document id")?);
        let rating: f64 = parse_num(fields[2], line, "rating")?;
        if !(0.0..=1.0).contains(&rating) {
            return Err(parse_err(line, format!("rating {rating} outside [0, 1]")));
        }
        return Ok(Event::Feedback { doc_id, rating });
    }
    let id = DocId(parse_num(fields[0], line, "document id")?);
    let time: u64 = parse_num(fields[1], line, "timestamp")?;
    let body = fields[2];
    let doc = match body.strip_prefix('@') {
        Some(pairs) => Document::new(id, time, parse_pairs(pairs, line, vocab)?),
        None => Document::from_text(id, time, body, stopwords, vocab),
    };
    Ok(Event::Arrival(doc))
}

/// Parses a whole stream, checking that document ids strictly increase and
/// timestamps never decrease.
pub fn parse_stream(
    reader: impl BufRead,
    vocab: &mut Vocabulary,
    stopwords: &HashSet<String>,
) -> Result<Vec<StreamRecord>> {
    let mut out = Vec::new();
    let mut last: Option<(DocId, u64)> = None;
    for item in content_lines(reader) {
        let (line, text) = item?;
        let event = parse_stream_line(&text, line, vocab, stopwords)?;
        if let Event::Arrival(d) = &event {
            if let Some((id, time)) = last {
                if d.id <= id {
                    return Err(parse_err(line, format!("document id {} not greater than {id}", d.id)));
                }
                if d.arrival_time < time {
                    return Err(parse_err(line, format!("timestamp {} earlier than {time}", d.arrival_time)));
                }
            }
            last = Some((d.id, d.arrival_time));
        }
        out.push(StreamRecord { line, event });
    }
    Ok(out)
}

fn write_pairs(out: &mut impl Write, comp: &CompositionList, vocab: &Vocabulary) -> Result<()> {
    let mut first = true;
    for (t, w) in comp.iter() {
        let name = vocab
            .text(t)
            .ok_or_else(|| Error::Config(format!("term {t:?} missing from vocabulary")))?;
        if !first {
            write!(out, " ")?;
        }
        write!(out, "{name}:{w}")?;
        first = false;
    }
    Ok(())
}

/// Writes a stream in the pre-tokenized `@term:weight` form, which parses
/// back to identical compositions.
pub fn write_stream(mut out: impl Write, events: &[Event], vocab: &Vocabulary) -> Result<()> {
    for e in events {
        match e {
            Event::Arrival(d) => {
                write!(out, "{}\t{}\t@", d.id, d.arrival_time)?;
                write_pairs(&mut out, &d.composition, vocab)?;
                writeln!(out)?;
            }
            Event::Feedback { doc_id, rating } => writeln!(out, "{}", format_feedback(*doc_id, *rating))?,
        }
    }
    Ok(())
}

pub fn format_feedback(doc_id: DocId, rating: f64) -> String {
    format!("{FEEDBACK_TAG}\t{doc_id}\t{rating}")
}

/// Parses a query file. Terms are lowercased and interned; missing weights
/// default to 1.
pub fn parse_queries(reader: impl BufRead, vocab: &mut Vocabulary) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in content_lines(reader) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(line, "expected query_id, k and terms separated by tabs"));
        }
        let id = QueryId(parse_num(fields[0], line, "query id")?);
        if !seen.insert(id) {
            return Err(parse_err(line, format!("query id {id} repeated")));
        }
        let k: usize = parse_num(fields[1], line, "k")?;
        let mut terms = Vec::new();
        for spec in fields[2].split(',') {
            let spec = spec.trim();
            let (term, w) = match spec.rsplit_once(':') {
                Some((t, w)) => (t, parse_num(w, line, "weight")?),
                None => (spec, 1.0),
            };
            check_term(term, line)?;
            terms.push((vocab.intern(&term.to_lowercase()), w));
        }
        out.push(Query::new(id, terms, k).map_err(|e| parse_err(line, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_queries(mut out: impl Write, queries: &[Query], vocab: &Vocabulary) -> Result<()> {
    for q in queries {
        write!(out, "{}\t{}\t", q.id, q.k)?;
        for (i, &(t, w)) in q.terms().iter().enumerate() {
            let name = vocab
                .text(t)
                .ok_or_else(|| Error::Config(format!("term {t:?} missing from vocabulary")))?;
            if i > 0 {
                write!(out, ",")?;
            }
            if w == 1.0 {
                write!(out, "{name}")?;
            } else {
                write!(out, "{name}:{w}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes every query's current result, ranks from 1.
pub fn write_results(mut out: impl Write, engine: &dyn Monitor) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for qid in engine.query_ids() {
        for (rank, s) in engine.current_result(qid)?.iter().enumerate() {
            writeln!(out, "{qid}\t{}\t{}\t{}", rank + 1, s.doc_id, s.score)?;
        }
    }
    Ok(())
}

pub fn write_metrics(mut out: impl Write, records: &[MetricsRecord]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{:.3},{}", r.event, r.kind, r.micros, r.queries_updated)?;
    }
    Ok(())
}

pub fn write_summary(mut out: impl Write, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{}={},{},{:.3},{:.3}",
            r.param.label(),
            r.value,
            r.engine,
            r.summary.mean_micros,
            r.summary.p95_micros
        )?;
    }
    Ok(())
}
