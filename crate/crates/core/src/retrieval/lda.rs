//! Latent Dirichlet allocation via collapsed Gibbs sampling, used to group
//! documents into topic clusters for corpus-level retrieval.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LdaConfig {
    pub n_topics: usize,
    /// Document-topic smoothing; defaults to 50/n_topics when unset.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Remove this many of the highest document-frequency surfaces.
    pub stopword_top: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            n_topics: 20,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            seed: 0,
            stopword_top: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopicModel {
    pub n_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Per-document topic distribution; each row sums to 1.
    pub doc_topic: Vec<Vec<f64>>,
    /// argmax of doc_topic, lowest index on ties.
    pub cluster_of_doc: Vec<usize>,
    /// LDA-internal vocabulary (post stopword removal).
    pub vocab: Vec<String>,
    /// (n_topics, vocab) assignment counts from the final sweep.
    pub topic_word: Vec<Vec<usize>>,
    pub topic_totals: Vec<usize>,
    pub warnings: Vec<String>,
}

impl TopicModel {
    /// Numeric state as named tensors for the checkpoint container:
    /// per-document topic distributions, cluster assignments, and
    /// hyperparameters. Enough to reproduce corpus-level retrieval over the
    /// fitted corpus; the LDA vocabulary and counts stay out (the container
    /// holds tensors only).
    pub fn to_tensors(&self) -> Vec<(String, crate::numeric::Tensor)> {
        use crate::numeric::Tensor;
        let d = self.doc_topic.len();
        let k = self.n_topics;
        let flat: Vec<f64> = self.doc_topic.iter().flatten().copied().collect();
        let clusters: Vec<f64> = self.cluster_of_doc.iter().map(|&c| c as f64).collect();
        vec![
            ("lda.doc_topic".to_string(), Tensor::from_values(d, k, flat).unwrap()),
            ("lda.cluster".to_string(), Tensor::from_values(d, 1, clusters).unwrap()),
            (
                "lda.hyper".to_string(),
                Tensor::from_values(3, 1, vec![k as f64, self.alpha, self.beta]).unwrap(),
            ),
        ]
    }

    /// Rebuild a retrieval-capable model from checkpoint tensors. Returns
    /// None when the container carries no topic model.
    pub fn from_tensors(tensors: &[(String, crate::numeric::Tensor)]) -> Option<TopicModel> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let doc_topic_t = find("lda.doc_topic")?;
        let cluster_t = find("lda.cluster")?;
        let hyper = find("lda.hyper")?;
        let k = hyper.values[0] as usize;
        let doc_topic: Vec<Vec<f64>> =
            doc_topic_t.values.chunks(k.max(1)).map(|c| c.to_vec()).collect();
        Some(TopicModel {
            n_topics: k,
            alpha: hyper.values[1],
            beta: hyper.values[2],
            doc_topic,
            cluster_of_doc: cluster_t.values.iter().map(|&c| c as usize).collect(),
            vocab: Vec::new(),
            topic_word: vec![Vec::new(); k],
            topic_totals: vec![0; k],
            warnings: Vec::new(),
        })
    }

    /// The `n` highest-count words of a topic (count desc, word asc).
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<&str> {
        let mut pairs: Vec<(usize, &str)> = self.topic_word[topic]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(w, &c)| (c, self.vocab[w].as_str()))
            .collect();
        pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        pairs.into_iter().take(n).map(|(_, w)| w).collect()
    }

    pub fn total_assignments(&self) -> usize {
        self.topic_totals.iter().sum()
    }
}

/// Tokenize the corpus for topic modeling: drop single-character tokens and
/// the `stopword_top` surfaces with the highest document frequency
/// (ties broken by surface string so the removal set is deterministic).
fn build_bags(corpus: &Corpus, stopword_top: usize) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    let mut per_doc_surfaces: Vec<Vec<&str>> = Vec::with_capacity(corpus.documents.len());
    for doc in &corpus.documents {
        let mut seen: Vec<&str> = Vec::new();
        let mut surfaces = Vec::new();
        for sent in &doc.sentences {
            for tok in &sent.tokens {
                if tok.surface.chars().count() <= 1 {
                    continue;
                }
                surfaces.push(tok.surface.as_str());
                if !seen.contains(&tok.surface.as_str()) {
                    seen.push(tok.surface.as_str());
                }
            }
        }
        for s in seen {
            *doc_freq.entry(s).or_default() += 1;
        }
        per_doc_surfaces.push(surfaces);
    }

    let mut by_df: Vec<(&str, usize)> = doc_freq.iter().map(|(&s, &c)| (s, c)).collect();
    by_df.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let stop: std::collections::HashSet<&str> =
        by_df.iter().take(stopword_top).map(|(s, _)| *s).collect();

    let mut vocab: Vec<String> = Vec::new();
    let mut vocab_idx: HashMap<String, usize> = HashMap::new();
    let mut bags = Vec::with_capacity(per_doc_surfaces.len());
    for surfaces in &per_doc_surfaces {
        let mut bag = Vec::new();
        for &s in surfaces {
            if stop.contains(s) {
                continue;
            }
            let id = match vocab_idx.get(s) {
                Some(&i) => i,
                None => {
                    let i = vocab.len();
                    vocab.push(s.to_string());
                    vocab_idx.insert(s.to_string(), i);
                    i
                }
            };
            bag.push(id);
        }
        bags.push(bag);
    }
    (vocab, bags)
}

pub fn fit_lda(corpus: &Corpus, config: &LdaConfig) -> Result<TopicModel> {
    if corpus.documents.is_empty() {
        return Err(Error::Argument("LDA requires at least one document".into()));
    }
    if config.n_topics == 0 {
        return Err(Error::Argument("n_topics must be positive".into()));
    }
    let k = config.n_topics;
    let alpha = config.alpha.unwrap_or(50.0 / k as f64);
    let beta = config.beta;
    let mut warnings = Vec::new();
    if k > corpus.documents.len() {
        warnings.push(format!(
            "n_topics={k} exceeds the number of documents ({}); proceeding",
            corpus.documents.len()
        ));
    }

    let (vocab, bags) = build_bags(corpus, config.stopword_top);
    let v = vocab.len();
    let n_docs = bags.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut n_dk = vec![vec![0usize; k]; n_docs];
    let mut n_kw = vec![vec![0usize; v]; k];
    let mut n_k = vec![0usize; k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(n_docs);
    for (d, bag) in bags.iter().enumerate() {
        let mut zs = Vec::with_capacity(bag.len());
        for &w in bag {
            let t = rng.gen_range(0..k);
            n_dk[d][t] += 1;
            n_kw[t][w] += 1;
            n_k[t] += 1;
            zs.push(t);
        }
        z.push(zs);
    }
    let total: usize = bags.iter().map(|b| b.len()).sum();

    let mut weights = vec![0.0f64; k];
    for _sweep in 0..config.iterations {
        for d in 0..n_docs {
            for (i, &w) in bags[d].iter().enumerate() {
                let old = z[d][i];
                n_dk[d][old] -= 1;
                n_kw[old][w] -= 1;
                n_k[old] -= 1;

                let mut sum = 0.0;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (n_dk[d][t] as f64 + alpha) * (n_kw[t][w] as f64 + beta)
                        / (n_k[t] as f64 + v as f64 * beta);
                    sum += *wt;
                }
                let mut pick = rng.gen::<f64>() * sum;
                let mut new = k - 1;
                for (t, &wt) in weights.iter().enumerate() {
                    pick -= wt;
                    if pick <= 0.0 {
                        new = t;
                        break;
                    }
                }

                z[d][i] = new;
                n_dk[d][new] += 1;
                n_kw[new][w] += 1;
                n_k[new] += 1;
            }
        }
        debug_assert_eq!(n_k.iter().sum::<usize>(), total, "topic counts drifted");
    }

    let mut doc_topic = Vec::with_capacity(n_docs);
    let mut cluster_of_doc = Vec::with_capacity(n_docs);
    for row in &n_dk {
        let n_d: usize = row.iter().sum();
        let denom = n_d as f64 + k as f64 * alpha;
        let dist: Vec<f64> = row.iter().map(|&c| (c as f64 + alpha) / denom).collect();
        let mut best = 0;
        for (t, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = t;
            }
        }
        cluster_of_doc.push(best);
        doc_topic.push(dist);
    }

    Ok(TopicModel {
        n_topics: k,
        alpha,
        beta,
        doc_topic,
        cluster_of_doc,
        vocab,
        topic_word: n_kw,
        topic_totals: n_k,
        warnings,
    })
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

    /// Two groups of documents over disjoint vocabularies.
    fn two_group_corpus(docs_per_group: usize, words_per_doc: usize) -> Corpus {
        let mut text = String::new();
        for g in 0..2 {
            for d in 0..docs_per_group {
                text.push_str("-DOCSTART- O\n\n");
                for w in 0..words_per_doc {
                    let word = format!("group{}word{:02}", g, (d * 7 + w * 3) % 40);
                    text.push_str(&format!("{word} O\n"));
                }
                text.push('\n');
            }
        }
        corpus_from(&text)
    }

    fn purity(model: &TopicModel, docs_per_group: usize) -> f64 {
        // Best-cluster purity against the construction labels.
        let n = model.cluster_of_doc.len();
        let mut counts = HashMap::new();
        for (d, &c) in model.cluster_of_doc.iter().enumerate() {
            let label = d / docs_per_group;
            *counts.entry((c, label)).or_insert(0usize) += 1;
        }
        let mut clusters: Vec<usize> = model.cluster_of_doc.clone();
        clusters.sort_unstable();
        clusters.dedup();
        let majority: usize = clusters
            .iter()
            .map(|&c| (0..2).map(|l| counts.get(&(c, l)).copied().unwrap_or(0)).max().unwrap())
            .sum();
        majority as f64 / n as f64
    }

    #[test]
    fn disjoint_vocabularies_separate_with_high_purity() {
        let c = two_group_corpus(10, 30);
        let cfg = LdaConfig { n_topics: 2, iterations: 200, seed: 13, ..Default::default() };
        let model = fit_lda(&c, &cfg).unwrap();
        let p = purity(&model, 10);
        assert!(p >= 0.95, "cluster purity {p} below 0.95");
    }

    #[test]
    fn doc_topic_rows_are_distributions() {
        let c = two_group_corpus(3, 12);
        let cfg = LdaConfig { n_topics: 4, iterations: 50, seed: 1, ..Default::default() };
        let model = fit_lda(&c, &cfg).unwrap();
        for row in &model.doc_topic {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-9, "row sums to {s}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn single_document_still_yields_valid_distribution() {
        let c = corpus_from("alpha O\nbeta O\ngamma O\n");
        let cfg = LdaConfig { n_topics: 3, iterations: 20, seed: 5, stopword_top: 0, ..Default::default() };
        let model = fit_lda(&c, &cfg).unwrap();
        assert_eq!(model.doc_topic.len(), 1);
        let s: f64 = model.doc_topic[0].iter().sum();
        assert!((s - 1.0).abs() <= 1e-9);
        assert!(!model.warnings.is_empty(), "n_topics > n_docs should warn");
    }

    #[test]
    fn fit_is_deterministic_for_fixed_seed() {
        let c = two_group_corpus(4, 10);
        let cfg = LdaConfig { n_topics: 2, iterations: 30, seed: 77, ..Default::default() };
        let a = fit_lda(&c, &cfg).unwrap();
        let b = fit_lda(&c, &cfg).unwrap();
        assert_eq!(a.doc_topic, b.doc_topic);
        assert_eq!(a.cluster_of_doc, b.cluster_of_doc);
    }

    #[test]
    fn counts_remain_consistent_after_fit() {
        let c = two_group_corpus(4, 10);
        let cfg = LdaConfig { n_topics: 3, iterations: 25, seed: 3, stopword_top: 5, ..Default::default() };
        let model = fit_lda(&c, &cfg).unwrap();
        let from_words: usize = model.topic_word.iter().map(|r| r.iter().sum::<usize>()).sum();
        assert_eq!(from_words, model.total_assignments());
    }

    #[test]
    fn stopwords_and_single_chars_are_removed() {
        let c = corpus_from("a O\ncommon O\nrare O\n\ncommon O\nother O\n\n-DOCSTART- O\n\ncommon O\nmore O\n");
        let cfg = LdaConfig { n_topics: 1, iterations: 5, seed: 0, stopword_top: 1, ..Default::default() };
        let model = fit_lda(&c, &cfg).unwrap();
        // "a" is a single char; "common" has the highest document frequency.
        assert!(!model.vocab.iter().any(|w| w == "a"));
        assert!(!model.vocab.iter().any(|w| w == "common"));
        assert!(model.vocab.iter().any(|w| w == "rare"));
    }
}
