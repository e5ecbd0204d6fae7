//! Data model for tagged corpora: documents, sentences, BIO-tagged tokens,
//! plus CoNLL-style column ingestion and embedding-file loading.

mod conll;
mod embeddings;
mod vocab;

pub use conll::{load_conll, write_tagged, CorpusLoad};
pub use embeddings::{embedding_word_set, load_embeddings, EmbeddingLoad};
pub use vocab::{CharVocab, Vocab, PAD_CHAR, UNK_CHAR, UNK_WORD};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type TagId = usize;

/// BIO tag inventory with deterministic ordering: "O" first, then B-X/I-X
/// pairs sorted by type name. START/STOP are virtual ids past the end used
/// only by the CRF transition matrix, never as emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct TagScheme {
    tags: Vec<String>,
    index: HashMap<String, TagId>,
}

impl TagScheme {
    /// Build from the set of entity type names (e.g. ["PER", "ORG"]).
    pub fn from_types<'a>(types: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<&str> = types.into_iter().collect();
        names.sort_unstable();
        names.dedup();
        let mut tags = vec!["O".to_string()];
        for t in names {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        TagScheme { tags, index }
    }

    /// The CoNLL four-type scheme: PER/ORG/LOC/MISC -> 9 tags.
    pub fn conll() -> Self {
        Self::from_types(["PER", "ORG", "LOC", "MISC"])
    }

    pub fn id(&self, tag: &str) -> Option<TagId> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: TagId) -> &str {
        &self.tags[id]
    }

    /// Number of emission tags (START/STOP excluded).
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn start_id(&self) -> TagId {
        self.tags.len()
    }

    pub fn stop_id(&self) -> TagId {
        self.tags.len() + 1
    }

    pub fn outside_id(&self) -> TagId {
        0
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.tags.iter()
    }

    /// Split "B-ORG" into (prefix, type). "O" yields ('O', "").
    pub fn parts(&self, id: TagId) -> (char, &str) {
        let t = &self.tags[id];
        if t == "O" {
            ('O', "")
        } else {
            (t.as_bytes()[0] as char, &t[2..])
        }
    }

    pub fn fingerprint(&self) -> u64 {
        crate::numeric::fnv1a_strings(self.tags.iter().map(|s| s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub surface: String,
    pub gold_tag: TagId,
    pub word_id: usize,
    pub char_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub doc_index: usize,
    pub sent_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub tag_scheme: TagScheme,
    pub word_vocab: Vocab,
    pub char_vocab: CharVocab,
}

/// Position of a token inside a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenPos {
    pub doc: usize,
    pub sent: usize,
    pub tok: usize,
}

impl Corpus {
    pub fn n_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn n_tokens(&self) -> usize {
        self.documents
            .iter()
            .flat_map(|d| &d.sentences)
            .map(|s| s.tokens.len())
            .sum()
    }

    pub fn sentence(&self, doc: usize, sent: usize) -> &Sentence {
        &self.documents[doc].sentences[sent]
    }

    pub fn token(&self, pos: TokenPos) -> &Token {
        &self.documents[pos.doc].sentences[pos.sent].tokens[pos.tok]
    }

    pub fn iter_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    /// Re-resolve every token against new vocabularies and tag scheme
    /// (used to put several splits on one shared index space).
    pub fn remap(&self, word_vocab: &Vocab, char_vocab: &CharVocab, tags: &TagScheme) -> Result<Corpus> {
        let mut documents = Vec::with_capacity(self.documents.len());
        for doc in &self.documents {
            let mut sentences = Vec::with_capacity(doc.sentences.len());
            for sent in &doc.sentences {
                let mut tokens = Vec::with_capacity(sent.tokens.len());
                for tok in &sent.tokens {
                    let tag_str = self.tag_scheme.tag(tok.gold_tag);
                    let gold_tag = tags.id(tag_str).ok_or_else(|| {
                        Error::Argument(format!("tag {tag_str} missing from target scheme"))
                    })?;
                    tokens.push(Token {
                        surface: tok.surface.clone(),
                        gold_tag,
                        word_id: word_vocab.lookup(&tok.surface),
                        char_ids: char_vocab.encode(&tok.surface),
                    });
                }
                sentences.push(Sentence { tokens, doc_index: sent.doc_index, sent_index: sent.sent_index });
            }
            documents.push(Document { doc_id: doc.doc_id.clone(), sentences });
        }
        Ok(Corpus {
            documents,
            tag_scheme: tags.clone(),
            word_vocab: word_vocab.clone(),
            char_vocab: char_vocab.clone(),
        })
    }
}

/// A decoded entity: token span [start, end) within one sentence plus type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub ty: String,
}

/// Decode BIO tags into entity spans. Follows conlleval semantics: B-X
/// always opens a span, and an I-X without a compatible predecessor opens
/// one as well.
pub fn extract_entity_spans(tags: &[TagId], scheme: &TagScheme) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, &t) in tags.iter().enumerate() {
        let (prefix, ty) = scheme.parts(t);
        match prefix {
            'B' => {
                if let Some((start, oty)) = open.take() {
                    spans.push(EntitySpan { start, end: i, ty: oty });
                }
                open = Some((i, ty.to_string()));
            }
            'I' => match open.as_ref() {
                Some((_, oty)) if oty == ty => {}
                _ => {
                    if let Some((start, oty)) = open.take() {
                        spans.push(EntitySpan { start, end: i, ty: oty });
                    }
                    open = Some((i, ty.to_string()));
                }
            },
            _ => {
                if let Some((start, oty)) = open.take() {
                    spans.push(EntitySpan { start, end: i, ty: oty });
                }
            }
        }
    }
    if let Some((start, ty)) = open {
        spans.push(EntitySpan { start, end: tags.len(), ty });
    }
    spans
}

/// Shuffle all sentences with a seeded RNG, then regroup them into
/// consecutive blocks of `sentences_per_doc` (the last block may be short).
pub fn split_into_documents(corpus: &Corpus, sentences_per_doc: usize, seed: u64) -> Result<Corpus> {
    if sentences_per_doc == 0 {
        return Err(Error::Argument("sentences_per_doc must be positive".into()));
    }
    if corpus.n_sentences() == 0 {
        return Err(Error::Argument("corpus has no sentences".into()));
    }
    let mut all: Vec<Sentence> = corpus.iter_sentences().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);

    let mut documents = Vec::new();
    for (di, chunk) in all.chunks(sentences_per_doc).enumerate() {
        let sentences = chunk
            .iter()
            .enumerate()
            .map(|(si, s)| Sentence { tokens: s.tokens.clone(), doc_index: di, sent_index: si })
            .collect();
        documents.push(Document { doc_id: format!("split{di:04}"), sentences });
    }
    Ok(Corpus {
        documents,
        tag_scheme: corpus.tag_scheme.clone(),
        word_vocab: corpus.word_vocab.clone(),
        char_vocab: corpus.char_vocab.clone(),
    })
}
