//! Shared fixtures for the integration suites: synthetic corpora written as
//! CoNLL files, loaded through the production pipeline.
#![allow(dead_code)] // each test target uses a different subset

use std::fs;
use std::path::{Path, PathBuf};

use nametag::corpus::Corpus;
use nametag::model::Predictions;

pub const ORG_MARKERS: [&str; 4] = ["shares", "profit", "merger", "factory"];
pub const PER_MARKERS: [&str; 4] = ["smiled", "spoke", "married", "wedding"];
pub const FILLER_A: [&str; 3] = ["riverbank", "meadow", "stones"];
pub const FILLER_B: [&str; 3] = ["harbor", "vessel", "cargo"];

fn name_surface(i: usize) -> String {
    format!("name{i:02}")
}

/// One document: `n_clear` marker sentences for (name, ty), two "neutral"
/// mentions whose context says nothing about the type (decoy evidence the
/// attention must learn to downweight), one filler sentence, and finally
/// the ambiguous query sentence whose local context is identical for both
/// types.
fn push_doc(out: &mut String, name: &str, ty: &str, n_clear: usize, variant: usize) {
    out.push_str("-DOCSTART- O\n\n");
    let markers: &[&str] = if ty == "ORG" { &ORG_MARKERS } else { &PER_MARKERS };
    for k in 0..n_clear {
        let m1 = markers[(variant + k) % markers.len()];
        let m2 = markers[(variant + k + 1) % markers.len()];
        out.push_str(&format!("{name} B-{ty}\n{m1} O\n{m2} O\n\n"));
    }
    for _ in 0..2 {
        out.push_str(&format!("about O\n{name} B-{ty}\ntoday O\n\n"));
    }
    let filler: &[&str] = if variant.is_multiple_of(2) { &FILLER_A } else { &FILLER_B };
    out.push_str(&format!("{} O\n{} O\n{} O\n\n", filler[0], filler[1], filler[2]));
    // Ambiguous query context: the <name> said report
    out.push_str(&format!("the O\n{name} B-{ty}\nsaid O\nreport O\n\n"));
}

/// Training split: every name occurs in several documents with its type
/// alternating, so the surface alone carries no type signal.
pub fn write_disambig_train(path: &Path, n_names: usize, docs_per_name: usize) {
    let mut text = String::new();
    for occ in 0..docs_per_name {
        for i in 0..n_names {
            let ty = if (i + occ) % 2 == 0 { "ORG" } else { "PER" };
            let global = occ * n_names + i;
            let n_clear = 2 + global % 2;
            push_doc(&mut text, &name_surface(i), ty, n_clear, global);
        }
    }
    fs::write(path, text).unwrap();
}

/// Dev split: each name appears in two documents of opposite types with
/// different occurrence counts (2 vs 4 clear sentences), so corpus-level
/// majority voting always has a strict majority that tramples the smaller
/// document's correct labels.
pub fn write_disambig_dev(path: &Path, n_names: usize) {
    let mut text = String::new();
    for i in 0..n_names {
        for occ in 0..2 {
            let first_ty = if i.is_multiple_of(2) { "ORG" } else { "PER" };
            let ty = if occ == 0 { first_ty } else if first_ty == "ORG" { "PER" } else { "ORG" };
            let n_clear = if occ == 0 { 2 } else { 4 };
            push_doc(&mut text, &name_surface(i), ty, n_clear, 2 * i + occ);
        }
    }
    fs::write(path, text).unwrap();
}

/// Restrict a corpus and matching predictions to the query sentence (the
/// last one) of every document, for scoring the ambiguous subset.
pub fn query_subset(corpus: &Corpus, preds: &Predictions) -> (Corpus, Predictions) {
    let mut documents = Vec::new();
    let mut sub_preds = Vec::new();
    for (di, doc) in corpus.documents.iter().enumerate() {
        let last = doc.sentences.len() - 1;
        let mut sent = doc.sentences[last].clone();
        sent.doc_index = di;
        sent.sent_index = 0;
        documents.push(nametag::corpus::Document {
            doc_id: doc.doc_id.clone(),
            sentences: vec![sent],
        });
        sub_preds.push(vec![preds[di][last].clone()]);
    }
    (
        Corpus {
            documents,
            tag_scheme: corpus.tag_scheme.clone(),
            word_vocab: corpus.word_vocab.clone(),
            char_vocab: corpus.char_vocab.clone(),
        },
        sub_preds,
    )
}

/// A 10-sentence two-document corpus with repeated mentions, for overfit
/// checks in every mode.
pub fn write_overfit_corpus(path: &Path) -> PathBuf {
    let text = "\
-DOCSTART- O

Altron B-ORG
posted O
profit O

the O
firm O
Altron B-ORG

Novak B-PER
smiled O

mr O
Novak B-PER
spoke O

Marbella B-LOC
is O
sunny O

-DOCSTART- O

visit O
Marbella B-LOC

Altron B-ORG
shares O
rose O

she O
spoke O

Novak B-PER
married O

stones O
meadow O
";
    fs::write(path, text).unwrap();
    path.to_path_buf()
}
