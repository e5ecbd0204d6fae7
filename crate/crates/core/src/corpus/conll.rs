//! CoNLL column-file reader and writer.
//!
//! One token per line, columns whitespace-separated, blank line ends a
//! sentence, and a line whose first column is `-DOCSTART-` starts a new
//! document (the marker line itself is dropped).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{CharVocab, Corpus, Document, Sentence, TagId, TagScheme, Token, Vocab};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct CorpusLoad {
    pub corpus: Corpus,
    /// Number of ill-formed I-X tags repaired to B-X.
    pub repaired_tags: usize,
}

struct RawToken {
    surface: String,
    tag: String,
}

pub fn load_conll(path: &Path, column_word: usize, column_tag: usize) -> Result<CorpusLoad> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let needed = column_word.max(column_tag) + 1;

    let mut docs: Vec<Vec<Vec<RawToken>>> = vec![Vec::new()];
    let mut sentence: Vec<RawToken> = Vec::new();

    let flush_sentence = |docs: &mut Vec<Vec<Vec<RawToken>>>, sentence: &mut Vec<RawToken>| {
        if !sentence.is_empty() {
            docs.last_mut().unwrap().push(std::mem::take(sentence));
        }
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush_sentence(&mut docs, &mut sentence);
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            flush_sentence(&mut docs, &mut sentence);
            if !docs.last().unwrap().is_empty() {
                docs.push(Vec::new());
            }
            continue;
        }
        if cols.len() < needed {
            return Err(Error::Load {
                path: path_str,
                line: lineno,
                msg: format!("expected at least {needed} columns, found {}", cols.len()),
            });
        }
        let tag = cols[column_tag];
        if !valid_tag(tag) {
            return Err(Error::Load {
                path: path_str,
                line: lineno,
                msg: format!("unknown tag string {tag:?}"),
            });
        }
        sentence.push(RawToken { surface: cols[column_word].to_string(), tag: tag.to_string() });
    }
    flush_sentence(&mut docs, &mut sentence);
    if docs.last().is_some_and(|d| d.is_empty()) && docs.len() > 1 {
        docs.pop();
    }

    build_corpus(docs)
}

fn valid_tag(tag: &str) -> bool {
    tag == "O"
        || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.len() > 2)
}

fn build_corpus(docs: Vec<Vec<Vec<RawToken>>>) -> Result<CorpusLoad> {
    let mut types = BTreeSet::new();
    for sent in docs.iter().flatten() {
        for tok in sent {
            if tok.tag != "O" {
                types.insert(tok.tag[2..].to_string());
            }
        }
    }
    let tag_scheme = TagScheme::from_types(types.iter().map(|s| s.as_str()));

    let surfaces: Vec<&str> = docs
        .iter()
        .flatten()
        .flatten()
        .map(|t| t.surface.as_str())
        .collect();
    let word_vocab = Vocab::from_surfaces(surfaces.iter().copied());
    let char_vocab = CharVocab::from_chars(surfaces.iter().flat_map(|s| s.chars()));

    let mut repaired = 0usize;
    let mut documents = Vec::new();
    for raw_doc in docs {
        if raw_doc.is_empty() {
            continue;
        }
        let di = documents.len();
        let mut sentences = Vec::with_capacity(raw_doc.len());
        for (si, raw_sent) in raw_doc.into_iter().enumerate() {
            let tag_ids = repair_bio(&raw_sent, &tag_scheme, &mut repaired);
            let tokens = raw_sent
                .into_iter()
                .zip(tag_ids)
                .map(|(t, gold_tag)| Token {
                    word_id: word_vocab.lookup(&t.surface),
                    char_ids: char_vocab.encode(&t.surface),
                    surface: t.surface,
                    gold_tag,
                })
                .collect();
            sentences.push(Sentence { tokens, doc_index: di, sent_index: si });
        }
        documents.push(Document { doc_id: format!("doc{di:04}"), sentences });
    }

    Ok(CorpusLoad {
        corpus: Corpus { documents, tag_scheme, word_vocab, char_vocab },
        repaired_tags: repaired,
    })
}

/// An I-X tag not preceded by B-X or I-X becomes B-X; the repair count is
/// surfaced in the load report.
fn repair_bio(sent: &[RawToken], scheme: &TagScheme, repaired: &mut usize) -> Vec<TagId> {
    let mut out = Vec::with_capacity(sent.len());
    let mut prev: Option<&str> = None;
    for tok in sent {
        let tag = tok.tag.as_str();
        let fixed = if let Some(ty) = tag.strip_prefix("I-") {
            let legal = matches!(prev, Some(p) if p.len() > 2 && &p[2..] == ty && (p.starts_with("B-") || p.starts_with("I-")));
            if legal {
                tag.to_string()
            } else {
                *repaired += 1;
                format!("B-{ty}")
            }
        } else {
            tag.to_string()
        };
        out.push(scheme.id(&fixed).expect("tag scheme covers observed tags"));
        prev = Some(tag);
    }
    out
}

/// Write `word gold [pred]` columns, with `-DOCSTART-` markers between
/// documents and blank lines between sentences. With `preds = None` the
/// output round-trips through `load_conll`.
pub fn write_tagged(
    corpus: &Corpus,
    preds: Option<&[Vec<Vec<TagId>>]>,
    w: &mut impl Write,
) -> Result<()> {
    for (di, doc) in corpus.documents.iter().enumerate() {
        if corpus.documents.len() > 1 {
            writeln!(w, "-DOCSTART- O")?;
            writeln!(w)?;
        }
        for (si, sent) in doc.sentences.iter().enumerate() {
            for (ti, tok) in sent.tokens.iter().enumerate() {
                let gold = corpus.tag_scheme.tag(tok.gold_tag);
                match preds {
                    Some(p) => {
                        let pred = corpus.tag_scheme.tag(p[di][si][ti]);
                        writeln!(w, "{} {} {}", tok.surface, gold, pred)?;
                    }
                    None => writeln!(w, "{} {}", tok.surface, gold)?,
                }
            }
            if si + 1 < doc.sentences.len() || di + 1 < corpus.documents.len() {
                writeln!(w)?;
            }
        }
    }
    Ok(())
}
