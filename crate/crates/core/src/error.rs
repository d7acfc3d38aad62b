use thiserror::Error;

use crate::model::{DocId, QueryId, TermId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("document {got} arrived after {last}; ids must be strictly increasing")]
    OutOfOrderId { last: DocId, got: DocId },

    #[error("document {doc} has arrival time {got} earlier than the window clock {now}")]
    OutOfOrderTime { doc: DocId, now: u64, got: u64 },

    #[error("invalid weight {weight} for term {term:?}")]
    InvalidWeight { term: TermId, weight: f64 },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("query {0} is already registered")]
    DuplicateQuery(QueryId),

    #[error("query {0} is not registered")]
    UnknownQuery(QueryId),

    #[error("document {0} is not in the window")]
    UnknownDocument(DocId),

    #[error("document {0} is a duplicate and cannot receive feedback")]
    DuplicateDocument(DocId),

    #[error("threshold registry has no entry for query {query} on term {term:?}")]
    MissingThreshold { query: QueryId, term: TermId },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cosine similarity is undefined for an empty composition list")]
    EmptyComposition,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
