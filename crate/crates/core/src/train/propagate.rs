//! Rule-based label propagation baseline: token-level majority voting over
//! all occurrences of a surface, within a document or across the corpus.

use std::collections::HashMap;

use crate::corpus::{Corpus, TagId};
use crate::model::Predictions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteLevel {
    Document,
    Corpus,
}

/// Relabel every occurrence of a surface with the majority token-level label
/// among its occurrences in the scope. Ties leave the original labels.
pub fn majority_vote_propagate(preds: &Predictions, corpus: &Corpus, level: VoteLevel) -> Predictions {
    let mut out = preds.clone();
    match level {
        VoteLevel::Document => {
            for di in 0..corpus.documents.len() {
                vote_scope(&mut out, corpus, &[di]);
            }
        }
        VoteLevel::Corpus => {
            let all: Vec<usize> = (0..corpus.documents.len()).collect();
            vote_scope(&mut out, corpus, &all);
        }
    }
    out
}

fn vote_scope(preds: &mut Predictions, corpus: &Corpus, docs: &[usize]) {
    let mut counts: HashMap<&str, HashMap<TagId, usize>> = HashMap::new();
    for &di in docs {
        for (si, sent) in corpus.documents[di].sentences.iter().enumerate() {
            for (ti, tok) in sent.tokens.iter().enumerate() {
                *counts
                    .entry(tok.surface.as_str())
                    .or_default()
                    .entry(preds[di][si][ti])
                    .or_default() += 1;
            }
        }
    }

    // Majority label per surface; None when the top count is shared.
    let mut majority: HashMap<&str, Option<TagId>> = HashMap::new();
    for (surface, tags) in &counts {
        let top = tags.values().copied().max().unwrap_or(0);
        let mut leaders = tags.iter().filter(|(_, &c)| c == top).map(|(&t, _)| t);
        let first = leaders.next();
        let unique = leaders.next().is_none();
        majority.insert(surface, if unique { first } else { None });
    }

    for &di in docs {
        for (si, sent) in corpus.documents[di].sentences.iter().enumerate() {
            for (ti, tok) in sent.tokens.iter().enumerate() {
                if let Some(Some(tag)) = majority.get(tok.surface.as_str()) {
                    preds[di][si][ti] = *tag;
                }
            }
        }
    }
}
