//! Near-duplicate suppression for arriving documents.
//!
//! A document is a duplicate when its cosine similarity to some windowed,
//! non-duplicate document reaches the configured threshold. Comparison
//! candidates come from the posting lists of the arriving document's
//! heaviest terms.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::model::{CompositionList, DocId, Document};
use crate::window::{Dictionary, DocumentStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupConfig {
    /// Minimum cosine for a match. Values above 1 disable detection.
    pub threshold: f64,
    /// How many of the arriving document's highest-weight terms seed the
    /// candidate set.
    pub candidate_terms: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: 0.95,
            candidate_terms: 5,
        }
    }
}

impl DedupConfig {
    pub fn new(threshold: f64, candidate_terms: usize) -> Result<Self> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::Config(format!("dedup threshold must be positive, got {threshold}")));
        }
        if candidate_terms == 0 {
            return Err(Error::Config("dedup candidate terms must be at least 1".into()));
        }
        Ok(Self {
            threshold,
            candidate_terms,
        })
    }

    pub fn disabled() -> Self {
        Self {
            threshold: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.threshold <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuplicateMatch {
    pub doc_id: DocId,
    pub cosine: f64,
}

impl DuplicateMatch {
    /// Higher cosine wins; ties go to the newer document.
    pub fn better_than(&self, other: &DuplicateMatch) -> bool {
        self.cosine > other.cosine || (self.cosine == other.cosine && self.doc_id > other.doc_id)
    }
}

pub fn cosine(a: &CompositionList, b: &CompositionList) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyComposition);
    }
    let (ea, eb) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < ea.len() && j < eb.len() {
        match ea[i].0.cmp(&eb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += ea[i].1 * eb[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let na: f64 = ea.iter().map(|&(_, w)| w * w).sum();
    let nb: f64 = eb.iter().map(|&(_, w)| w * w).sum();
    Ok((dot / (na * nb).sqrt()).clamp(0.0, 1.0))
}

fn best_match<'a>(
    doc: &Document,
    candidates: impl Iterator<Item = &'a Document>,
    config: &DedupConfig,
) -> Option<DuplicateMatch> {
    if !config.is_enabled() || doc.composition.is_empty() {
        return None;
    }
    let mut best: Option<DuplicateMatch> = None;
    for cand in candidates {
        if cand.is_duplicate() || cand.composition.is_empty() || cand.id == doc.id {
            continue;
        }
        let Ok(c) = cosine(&doc.composition, &cand.composition) else {
            continue;
        };
        if c < config.threshold {
            continue;
        }
        let m = DuplicateMatch {
            doc_id: cand.id,
            cosine: c,
        };
        if best.as_ref().is_none_or(|b| m.better_than(b)) {
            best = Some(m);
        }
    }
    best
}

/// Finds the windowed document `doc` duplicates, using the posting lists of
/// its `candidate_terms` heaviest terms to pick comparison candidates.
pub fn check_duplicate(
    doc: &Document,
    store: &DocumentStore,
    dict: &Dictionary,
    config: &DedupConfig,
) -> Option<DuplicateMatch> {
    if !config.is_enabled() {
        return None;
    }
    let mut terms: Vec<_> = doc.composition.iter().collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for &(term, _) in terms.iter().take(config.candidate_terms) {
        if let Some(list) = dict.postings(term) {
            for e in list.iter() {
                if seen.insert(e.doc_id) {
                    if let Some(d) = store.get(e.doc_id) {
                        candidates.push(d);
                    }
                }
            }
        }
    }
    best_match(doc, candidates.into_iter(), config)
}

/// Reference implementation comparing against every windowed document.
pub fn check_duplicate_brute_force(doc: &Document, store: &DocumentStore, config: &DedupConfig) -> Option<DuplicateMatch> {
    best_match(doc, store.iter(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TermId;
    use crate::window::{Window, WindowPolicy};

    fn comp(pairs: &[(u32, f64)]) -> CompositionList {
        CompositionList::from_pairs(pairs.iter().map(|&(t, w)| (TermId(t), w))).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = comp(&[(1, 1.0), (2, 1.0)]);
        let b = comp(&[(1, 1.0), (3, 1.0)]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &comp(&[(7, 2.0)])).unwrap(), 0.0);
        assert!((cosine(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!(cosine(&a, &CompositionList::empty()).is_err());
    }

    #[test]
    fn cosine_is_exactly_one_for_identical_lists() {
        let a = comp(&[(1, 3.0), (2, 7.0), (9, 1.5)]);
        assert_eq!(cosine(&a, &a.clone()).unwrap(), 1.0);
    }

    fn window_with(docs: &[(u64, CompositionList)]) -> Window {
        let mut w = Window::new(WindowPolicy::count(100).unwrap());
        for (id, c) in docs {
            w.insert_document(Document::new(DocId(*id), 0, c.clone())).unwrap();
        }
        w
    }

    #[test]
    fn exact_repost_is_flagged() {
        let c = comp(&[(1, 2.0), (2, 1.0), (3, 1.0)]);
        let w = window_with(&[(1, c.clone()), (2, comp(&[(5, 1.0)]))]);
        let d = Document::new(DocId(3), 0, c);
        let m = check_duplicate(&d, w.store(), w.dictionary(), &DedupConfig::default()).unwrap();
        assert_eq!(m.doc_id, DocId(1));
    }

    #[test]
    fn disjoint_doc_is_not_flagged() {
        let w = window_with(&[(1, comp(&[(1, 1.0)]))]);
        let d = Document::new(DocId(2), 0, comp(&[(2, 1.0)]));
        assert!(check_duplicate(&d, w.store(), w.dictionary(), &DedupConfig::default()).is_none());
    }

    #[test]
    fn highest_cosine_candidate_wins() {
        // Hand-built so that cos(probe, a) ≈ 0.97 and cos(probe, b) ≈ 0.96.
        let probe = comp(&[(1, 4.0), (2, 1.0)]);
        let a = comp(&[(1, 4.0), (2, 1.0), (3, 1.0)]);
        let b = comp(&[(1, 4.0), (2, 1.0), (4, 1.2)]);
        let ca = cosine(&probe, &a).unwrap();
        let cb = cosine(&probe, &b).unwrap();
        assert!(ca > 0.965 && ca < 0.975, "{ca}");
        assert!(cb > 0.955 && cb < 0.965, "{cb}");
        let w = window_with(&[(1, a), (2, b)]);
        let d = Document::new(DocId(3), 0, probe);
        let m = check_duplicate(&d, w.store(), w.dictionary(), &DedupConfig::default()).unwrap();
        assert_eq!(m.doc_id, DocId(1));
    }

    #[test]
    fn ties_prefer_newest() {
        let c = comp(&[(1, 1.0), (2, 1.0)]);
        let w = window_with(&[(1, c.clone()), (2, c.clone())]);
        let d = Document::new(DocId(3), 0, c);
        assert_eq!(
            check_duplicate(&d, w.store(), w.dictionary(), &DedupConfig::default()).unwrap().doc_id,
            DocId(2)
        );
    }

    #[test]
    fn threshold_above_one_disables() {
        let c = comp(&[(1, 1.0)]);
        let w = window_with(&[(1, c.clone())]);
        let d = Document::new(DocId(2), 0, c);
        let off = DedupConfig::new(1.0 + 1e-9, 5).unwrap();
        assert!(!off.is_enabled());
        assert!(check_duplicate(&d, w.store(), w.dictionary(), &off).is_none());
        assert!(check_duplicate_brute_force(&d, w.store(), &off).is_none());
    }

    #[test]
    fn config_validation() {
        assert!(DedupConfig::new(0.0, 5).is_err());
        assert!(DedupConfig::new(0.9, 0).is_err());
    }
}
