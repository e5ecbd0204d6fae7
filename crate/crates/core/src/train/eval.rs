//! Entity-level evaluation: an entity is correct only on exact span and
//! type match. Also reports token accuracy and per-type breakdowns.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::corpus::{extract_entity_spans, Corpus};
use crate::error::{Error, Result};
use crate::model::Predictions;

#[derive(Debug, Clone, Serialize)]
pub struct TypeScore {
    pub ty: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token_accuracy: f64,
    pub tokens: usize,
    pub gold_entities: usize,
    pub pred_entities: usize,
    pub correct_entities: usize,
    pub per_type: Vec<TypeScore>,
}

fn prf(correct: usize, pred: usize, gold: usize) -> (f64, f64, f64) {
    let p = if pred > 0 { 100.0 * correct as f64 / pred as f64 } else { 0.0 };
    let r = if gold > 0 { 100.0 * correct as f64 / gold as f64 } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

pub fn evaluate(preds: &Predictions, gold: &Corpus) -> Result<EvalReport> {
    if preds.len() != gold.documents.len() {
        return Err(Error::Argument(format!(
            "prediction/gold document count mismatch: {} vs {}",
            preds.len(),
            gold.documents.len()
        )));
    }

    let mut tokens = 0usize;
    let mut token_hits = 0usize;
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new(); // gold, pred, correct

    for (doc, doc_preds) in gold.documents.iter().zip(preds) {
        if doc.sentences.len() != doc_preds.len() {
            return Err(Error::Argument("prediction/gold sentence count mismatch".into()));
        }
        for (sent, sent_preds) in doc.sentences.iter().zip(doc_preds) {
            if sent.tokens.len() != sent_preds.len() {
                return Err(Error::Argument("prediction/gold token count mismatch".into()));
            }
            let gold_tags: Vec<usize> = sent.tokens.iter().map(|t| t.gold_tag).collect();
            tokens += gold_tags.len();
            token_hits += gold_tags.iter().zip(sent_preds).filter(|(g, p)| g == p).count();

            let gold_spans = extract_entity_spans(&gold_tags, &gold.tag_scheme);
            let pred_spans = extract_entity_spans(sent_preds, &gold.tag_scheme);
            let gold_set: HashSet<_> =
                gold_spans.iter().map(|s| (s.start, s.end, s.ty.clone())).collect();
            for s in &gold_spans {
                counts.entry(s.ty.clone()).or_default().0 += 1;
            }
            for s in &pred_spans {
                let e = counts.entry(s.ty.clone()).or_default();
                e.1 += 1;
                if gold_set.contains(&(s.start, s.end, s.ty.clone())) {
                    e.2 += 1;
                }
            }
        }
    }

    let (gold_n, pred_n, correct_n) = counts
        .values()
        .fold((0, 0, 0), |acc, &(g, p, c)| (acc.0 + g, acc.1 + p, acc.2 + c));
    let (precision, recall, f1) = prf(correct_n, pred_n, gold_n);
    let per_type = counts
        .into_iter()
        .map(|(ty, (g, p, c))| {
            let (tp, tr, tf) = prf(c, p, g);
            TypeScore { ty, precision: tp, recall: tr, f1: tf, gold: g, pred: p, correct: c }
        })
        .collect();

    Ok(EvalReport {
        precision,
        recall,
        f1,
        token_accuracy: if tokens > 0 { 100.0 * token_hits as f64 / tokens as f64 } else { 0.0 },
        tokens,
        gold_entities: gold_n,
        pred_entities: pred_n,
        correct_entities: correct_n,
        per_type,
    })
}

impl EvalReport {
    /// conlleval-style report text.
    pub fn conlleval_text(&self) -> String {
        let mut out = format!(
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.\n",
            self.tokens, self.gold_entities, self.pred_entities, self.correct_entities
        );
        out.push_str(&format!(
            "accuracy: {:6.2}%; precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}\n",
            self.token_accuracy, self.precision, self.recall, self.f1
        ));
        for t in &self.per_type {
            out.push_str(&format!(
                "{:>17}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}\n",
                t.ty, t.precision, t.recall, t.f1, t.pred
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_conll;
    use std::io::Write;

    fn corpus_from(content: &str) -> Corpus {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        load_conll(f.path(), 0, 1).unwrap().corpus
    }

    fn gold_preds(corpus: &Corpus) -> Predictions {
        corpus
            .documents
            .iter()
            .map(|d| {
                d.sentences
                    .iter()
                    .map(|s| s.tokens.iter().map(|t| t.gold_tag).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_predictions_score_hundred() {
        let c = corpus_from("EU B-ORG\nrejects O\nGerman B-MISC\n");
        let p = gold_preds(&c);
        let r = evaluate(&p, &c).unwrap();
        assert_eq!(r.precision, 100.0);
        assert_eq!(r.recall, 100.0);
        assert_eq!(r.f1, 100.0);
        assert_eq!(r.token_accuracy, 100.0);
    }

    #[test]
    fn half_correct_entities_score_fifty() {
        let c = corpus_from("A B-PER\nx O\nB B-ORG\n");
        let mut p = gold_preds(&c);
        // Spoil type of the second entity: predicted B-PER instead of B-ORG.
        p[0][0][2] = c.tag_scheme.id("B-PER").unwrap();
        let r = evaluate(&p, &c).unwrap();
        assert_eq!(r.gold_entities, 2);
        assert_eq!(r.pred_entities, 2);
        assert_eq!(r.correct_entities, 1);
        assert_eq!(r.precision, 50.0);
        assert_eq!(r.recall, 50.0);
        assert_eq!(r.f1, 50.0);
    }

    #[test]
    fn boundary_error_counts_as_both_fp_and_fn() {
        let c = corpus_from("New B-LOC\nYork I-LOC\nnow O\n");
        let mut p = gold_preds(&c);
        // Predict the span one token short: [New] instead of [New York].
        p[0][0][1] = c.tag_scheme.id("O").unwrap();
        let r = evaluate(&p, &c).unwrap();
        assert_eq!(r.gold_entities, 1);
        assert_eq!(r.pred_entities, 1);
        assert_eq!(r.correct_entities, 0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn misaligned_inputs_error() {
        let c = corpus_from("A B-PER\n");
        let p: Predictions = vec![vec![vec![0, 0]]];
        assert!(evaluate(&p, &c).is_err());
        let p2: Predictions = vec![];
        assert!(evaluate(&p2, &c).is_err());
    }

    #[test]
    fn per_type_breakdown_is_sorted_and_consistent() {
        let c = corpus_from("A B-PER\nB B-ORG\nC B-LOC\n");
        let p = gold_preds(&c);
        let r = evaluate(&p, &c).unwrap();
        let names: Vec<&str> = r.per_type.iter().map(|t| t.ty.as_str()).collect();
        assert_eq!(names, vec!["LOC", "ORG", "PER"]);
        assert!(r.per_type.iter().all(|t| t.f1 == 100.0));
        let text = r.conlleval_text();
        assert!(text.contains("precision:"), "report: {text}");
    }
}
