//! Supporting-sentence retrieval.
//!
//! Document level: exact (case-sensitive) token match against an inverted
//! index of the query's own document, capped at 4 supporting positions.
//! Corpus level: the same exact match against topically related documents
//! (the query document's LDA cluster), capped at 5.

mod lda;
mod stats;

pub use lda::{fit_lda, LdaConfig, TopicModel};
pub use stats::{corpus_stats, CorpusStats};

use std::collections::HashMap;

use crate::corpus::{Corpus, TokenPos};

pub const DOC_EVIDENCE_CAP: usize = 4;
pub const CORPUS_EVIDENCE_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceLevel {
    Document,
    Corpus,
}

/// Supporting positions for one query token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceSet {
    pub query: TokenPos,
    pub refs: Vec<TokenPos>,
    pub level: EvidenceLevel,
}

impl EvidenceSet {
    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}

/// Per-document inverted index: surface -> (sent_index, token_position)
/// postings in document order.
#[derive(Debug, Clone)]
pub struct DocIndex {
    docs: Vec<HashMap<String, Vec<(usize, usize)>>>,
}

pub fn build_doc_index(corpus: &Corpus) -> DocIndex {
    let mut docs = Vec::with_capacity(corpus.documents.len());
    for doc in &corpus.documents {
        let mut map: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (si, sent) in doc.sentences.iter().enumerate() {
            for (ti, tok) in sent.tokens.iter().enumerate() {
                map.entry(tok.surface.clone()).or_default().push((si, ti));
            }
        }
        docs.push(map);
    }
    DocIndex { docs }
}

impl DocIndex {
    pub fn postings(&self, doc: usize, surface: &str) -> &[(usize, usize)] {
        self.docs[doc].get(surface).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }
}

/// All occurrences of the query surface in *other* sentences of the same
/// document, in document order, truncated to `cap`. Occurrences inside the
/// query sentence itself (including the query token) are excluded.
pub fn retrieve_document_evidence(
    index: &DocIndex,
    corpus: &Corpus,
    query: TokenPos,
    cap: usize,
) -> EvidenceSet {
    let surface = &corpus.token(query).surface;
    let refs = index
        .postings(query.doc, surface)
        .iter()
        .filter(|(si, _)| *si != query.sent)
        .take(cap)
        .map(|&(sent, tok)| TokenPos { doc: query.doc, sent, tok })
        .collect();
    EvidenceSet { query, refs, level: EvidenceLevel::Document }
}

/// Occurrences of the query surface in the other documents of the query
/// document's topic cluster. Candidate documents are ranked by cosine
/// similarity of topic distributions (descending, ties broken by document
/// ordinal); within that ranking matches are taken in document order until
/// `cap` is reached.
pub fn retrieve_corpus_evidence(
    topics: &TopicModel,
    index: &DocIndex,
    corpus: &Corpus,
    query: TokenPos,
    cap: usize,
) -> EvidenceSet {
    let surface = &corpus.token(query).surface;
    let cluster = topics.cluster_of_doc[query.doc];
    let qvec = &topics.doc_topic[query.doc];

    let mut candidates: Vec<(usize, f64)> = (0..index.n_docs())
        .filter(|&d| d != query.doc && topics.cluster_of_doc[d] == cluster)
        .map(|d| (d, cosine(qvec, &topics.doc_topic[d])))
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let mut refs = Vec::new();
    'outer: for (d, _) in candidates {
        for &(sent, tok) in index.postings(d, surface) {
            refs.push(TokenPos { doc: d, sent, tok });
            if refs.len() == cap {
                break 'outer;
            }
        }
    }
    EvidenceSet { query, refs, level: EvidenceLevel::Corpus }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
