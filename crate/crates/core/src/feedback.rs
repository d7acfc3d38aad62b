//! Relevance feedback. A document with accumulated feedback `f_d` is indexed
//! with weights `w_dt · (1 + α·f_d)`, so boosted documents rank higher while
//! the posting lists stay sorted.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{CompositionList, DocId};

pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone)]
struct Level {
    rating: f64,
    raw: CompositionList,
}

#[derive(Debug, Clone)]
pub struct FeedbackStore {
    alpha: f64,
    levels: HashMap<DocId, Level>,
}

impl Default for FeedbackStore {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            levels: HashMap::new(),
        }
    }
}

impl FeedbackStore {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("feedback alpha must be non-negative, got {alpha}")));
        }
        Ok(Self {
            alpha,
            levels: HashMap::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Accumulated feedback for `doc`, 0 when none was recorded.
    pub fn level(&self, doc: DocId) -> f64 {
        self.levels.get(&doc).map_or(0.0, |l| l.rating)
    }

    pub fn boost(&self, doc: DocId) -> f64 {
        1.0 + self.alpha * self.level(doc)
    }

    /// Folds `rating` into the document's level by max. Returns the new
    /// effective composition when the indexed weights must change.
    ///
    /// `current` is the composition as currently indexed; on first feedback it
    /// is taken to be the raw one.
    pub fn apply(&mut self, doc: DocId, current: &CompositionList, rating: f64) -> Result<Option<CompositionList>> {
        if !(0.0..=1.0).contains(&rating) {
            return Err(Error::Config(format!("feedback rating must lie in [0, 1], got {rating}")));
        }
        let level = self.levels.entry(doc).or_insert_with(|| Level {
            rating: 0.0,
            raw: current.clone(),
        });
        if rating <= level.rating {
            return Ok(None);
        }
        level.rating = rating;
        if self.alpha == 0.0 {
            return Ok(None);
        }
        Ok(Some(level.raw.scaled(1.0 + self.alpha * rating)))
    }

    /// Drops state for a document that left the window.
    pub fn forget(&mut self, doc: DocId) {
        self.levels.remove(&doc);
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TermId;

    fn comp(w: f64) -> CompositionList {
        CompositionList::from_pairs([(TermId(1), w)]).unwrap()
    }

    #[test]
    fn zero_rating_changes_nothing() {
        let mut f = FeedbackStore::default();
        assert_eq!(f.apply(DocId(1), &comp(5.0), 0.0).unwrap(), None);
    }

    #[test]
    fn full_rating_boosts_by_alpha() {
        let mut f = FeedbackStore::new(0.2).unwrap();
        let boosted = f.apply(DocId(1), &comp(5.0), 1.0).unwrap().unwrap();
        assert!((boosted.weight(TermId(1)) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_feedback_aggregates_by_max_from_raw() {
        let mut f = FeedbackStore::new(0.5).unwrap();
        let first = f.apply(DocId(1), &comp(4.0), 0.5).unwrap().unwrap();
        assert_eq!(first.weight(TermId(1)), 5.0);
        assert_eq!(f.apply(DocId(1), &first, 0.3).unwrap(), None);
        let second = f.apply(DocId(1), &first, 1.0).unwrap().unwrap();
        assert_eq!(second.weight(TermId(1)), 6.0);
        assert_eq!(f.level(DocId(1)), 1.0);
    }

    #[test]
    fn alpha_zero_never_reweights() {
        let mut f = FeedbackStore::new(0.0).unwrap();
        assert_eq!(f.apply(DocId(1), &comp(5.0), 1.0).unwrap(), None);
    }

    #[test]
    fn rejects_out_of_range() {
        let mut f = FeedbackStore::default();
        assert!(f.apply(DocId(1), &comp(1.0), 1.5).is_err());
        assert!(FeedbackStore::new(-1.0).is_err());
    }
}
