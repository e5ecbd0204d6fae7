//! Corpus-level mention statistics: how often name mentions repeat within a
//! document, and how consistently repeated mentions keep one type.

use std::collections::HashMap;

use crate::corpus::{extract_entity_spans, Corpus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    /// Average per-document percentage of mentions whose surface occurs as
    /// two or more mentions in that document.
    pub repeat_rate: f64,
    /// Among repeated surfaces, average percentage of same-document mention
    /// pairs that share a type.
    pub type_consistency: f64,
    pub documents_with_mentions: usize,
    pub documents_with_repeats: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut repeat_sum = 0.0;
    let mut repeat_docs = 0usize;
    let mut consistency_sum = 0.0;
    let mut consistency_docs = 0usize;

    for doc in &corpus.documents {
        // Mention = BIO span; surface = tokens joined by a single space.
        let mut mentions: Vec<(String, String)> = Vec::new();
        for sent in &doc.sentences {
            let tags: Vec<usize> = sent.tokens.iter().map(|t| t.gold_tag).collect();
            for span in extract_entity_spans(&tags, &corpus.tag_scheme) {
                let surface = sent.tokens[span.start..span.end]
                    .iter()
                    .map(|t| t.surface.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                mentions.push((surface, span.ty));
            }
        }
        if mentions.is_empty() {
            continue;
        }

        let mut by_surface: HashMap<&str, Vec<&str>> = HashMap::new();
        for (s, ty) in &mentions {
            by_surface.entry(s.as_str()).or_default().push(ty.as_str());
        }

        let repeated: usize = by_surface
            .values()
            .filter(|v| v.len() >= 2)
            .map(|v| v.len())
            .sum();
        repeat_sum += repeated as f64 / mentions.len() as f64;
        repeat_docs += 1;

        let mut pairs = 0usize;
        let mut same = 0usize;
        for types in by_surface.values().filter(|v| v.len() >= 2) {
            for i in 0..types.len() {
                for j in i + 1..types.len() {
                    pairs += 1;
                    if types[i] == types[j] {
                        same += 1;
                    }
                }
            }
        }
        if pairs > 0 {
            consistency_sum += same as f64 / pairs as f64;
            consistency_docs += 1;
        }
    }

    CorpusStats {
        repeat_rate: if repeat_docs > 0 { 100.0 * repeat_sum / repeat_docs as f64 } else { 0.0 },
        type_consistency: if consistency_docs > 0 {
            100.0 * consistency_sum / consistency_docs as f64
        } else {
            0.0
        },
        documents_with_mentions: repeat_docs,
        documents_with_repeats: consistency_docs,
    }
}
