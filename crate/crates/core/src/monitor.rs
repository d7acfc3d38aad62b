//! The event vocabulary shared by every engine and the common engine trait.

use std::collections::BTreeSet;

use crate::error::Result;
use crate::model::{DocId, Document, Query, QueryId, ScoredDoc};

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Arrival(Document),
    Feedback { doc_id: DocId, rating: f64 },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Arrival(_) => "arrival",
            Event::Feedback { .. } => "feedback",
        }
    }
}

/// What a single event did to the monitored state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventOutcome {
    /// Queries whose verified top-k changed.
    pub changed: BTreeSet<QueryId>,
    /// Documents that left the window, oldest first.
    pub expired: Vec<DocId>,
    /// Set when the arriving document was flagged as a duplicate.
    pub duplicate_of: Option<DocId>,
}

impl EventOutcome {
    pub fn merge(&mut self, other: EventOutcome) {
        self.changed.extend(other.changed);
        self.expired.extend(other.expired);
        if other.duplicate_of.is_some() {
            self.duplicate_of = other.duplicate_of;
        }
    }
}

/// A continuous top-k monitor over a document stream.
pub trait Monitor {
    fn register_query(&mut self, query: Query) -> Result<()>;

    fn unregister_query(&mut self, id: QueryId) -> Result<()>;

    fn process(&mut self, event: &Event) -> Result<EventOutcome>;

    /// Verified top-k of `id`, best first.
    fn current_result(&self, id: QueryId) -> Result<Vec<ScoredDoc>>;

    fn query_ids(&self) -> Vec<QueryId>;

    fn query(&self, id: QueryId) -> Option<&Query>;

    /// Every document currently in the window, ascending by id.
    fn window_documents(&self) -> Vec<&Document>;
}
