//! The assembled tagger: encoder, optional attention blocks for the two
//! evidence levels, fusion Bi-LSTM, and CRF output layer.
//!
//! A batch is one document. Supporting sentences are encoded in eval mode
//! and, by default, treated as constants (no gradient flows into them);
//! `freeze_evidence = false` lets gradients flow for experimentation.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::attention::AttentionBlock;
use crate::corpus::{Corpus, TagId, TokenPos};
use crate::crf::{CrfModel, Fusion, FusionConfig, TransitionMask};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::numeric::{
    checkpoint_bytes, load_checkpoint, save_checkpoint, NodeId, ParamSet, Tape, Tensor, VocabHashes,
};
use crate::retrieval::{
    build_doc_index, retrieve_corpus_evidence, retrieve_document_evidence, TopicModel,
};

pub type Predictions = Vec<Vec<Vec<TagId>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Doc,
    Corpus,
    Both,
}

impl Mode {
    pub fn uses_doc(&self) -> bool {
        matches!(self, Mode::Doc | Mode::Both)
    }

    pub fn uses_corpus(&self) -> bool {
        matches!(self, Mode::Corpus | Mode::Both)
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "doc" => Ok(Mode::Doc),
            "corpus" => Ok(Mode::Corpus),
            "both" => Ok(Mode::Both),
            other => Err(Error::Argument(format!(
                "unknown mode {other:?} (expected baseline|doc|corpus|both)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Doc => "doc",
            Mode::Corpus => "corpus",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attn_dim: usize,
    pub fusion_hidden: usize,
    /// Treat supporting-sentence encodings as constants during training.
    pub freeze_evidence: bool,
    /// Apply the BIO transition mask at decode time.
    pub decode_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            attn_dim: 100,
            fusion_hidden: 100,
            freeze_evidence: true,
            decode_mask: false,
        }
    }
}

/// Precomputed evidence references for every token of a corpus.
#[derive(Debug, Clone, Default)]
pub struct EvidencePlan {
    /// [doc][sent][tok] -> supporting positions, document level.
    pub doc_refs: Vec<Vec<Vec<Vec<TokenPos>>>>,
    /// [doc][sent][tok] -> supporting positions, corpus level.
    pub corpus_refs: Vec<Vec<Vec<Vec<TokenPos>>>>,
}

impl EvidencePlan {
    pub fn empty_for(corpus: &Corpus) -> Self {
        let shape: Vec<Vec<Vec<Vec<TokenPos>>>> = corpus
            .documents
            .iter()
            .map(|d| {
                d.sentences
                    .iter()
                    .map(|s| vec![Vec::new(); s.tokens.len()])
                    .collect()
            })
            .collect();
        EvidencePlan { doc_refs: shape.clone(), corpus_refs: shape }
    }
}

/// Retrieve evidence for every token, as far as the mode requires.
pub fn build_evidence_plan(
    corpus: &Corpus,
    mode: Mode,
    topics: Option<&TopicModel>,
    doc_cap: usize,
    corpus_cap: usize,
) -> Result<EvidencePlan> {
    let mut plan = EvidencePlan::empty_for(corpus);
    if !mode.uses_doc() && !mode.uses_corpus() {
        return Ok(plan);
    }
    let index = build_doc_index(corpus);
    if mode.uses_corpus() && topics.is_none() {
        return Err(Error::Argument("corpus-level evidence requires a topic model".into()));
    }
    for (di, doc) in corpus.documents.iter().enumerate() {
        for (si, sent) in doc.sentences.iter().enumerate() {
            for ti in 0..sent.tokens.len() {
                let pos = TokenPos { doc: di, sent: si, tok: ti };
                if mode.uses_doc() {
                    let ev = retrieve_document_evidence(&index, corpus, pos, doc_cap);
                    plan.doc_refs[di][si][ti] = ev.refs;
                }
                if mode.uses_corpus() {
                    let ev =
                        retrieve_corpus_evidence(topics.unwrap(), &index, corpus, pos, corpus_cap);
                    plan.corpus_refs[di][si][ti] = ev.refs;
                }
            }
        }
    }
    Ok(plan)
}

/// One token's attention weights, exportable as a JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionRecord {
    pub doc_id: String,
    pub sent: usize,
    pub tok: usize,
    pub surface: String,
    pub level: &'static str,
    pub alphas: Vec<f64>,
    pub evidence: Vec<(usize, usize, usize)>,
}

pub struct Model {
    pub params: ParamSet,
    pub cfg: ModelConfig,
    pub mode: Mode,
    pub encoder: Encoder,
    pub fusion: Fusion,
    pub crf: CrfModel,
    pub doc_attention: Option<AttentionBlock>,
    pub corpus_attention: Option<AttentionBlock>,
}

impl Model {
    /// Phase-1 model: encoder, fusion and CRF only. Attention parameters are
    /// attached later by [`Model::attach_attention`].
    pub fn new(
        cfg: &ModelConfig,
        mode: Mode,
        word_vocab_size: usize,
        char_vocab_size: usize,
        n_tags: usize,
        word_matrix: Option<Tensor>,
        rng: &mut impl Rng,
    ) -> Self {
        let mut params = ParamSet::new();
        let encoder = Encoder::init(&mut params, &cfg.encoder, word_vocab_size, char_vocab_size, word_matrix, rng);
        let fusion_cfg = FusionConfig::for_rep_dim(cfg.encoder.output_dim(), cfg.fusion_hidden);
        let fusion = Fusion::init(&mut params, &fusion_cfg, rng);
        let crf = CrfModel::init(&mut params, n_tags, fusion_cfg.output_dim(), rng);
        Model {
            params,
            cfg: cfg.clone(),
            mode,
            encoder,
            fusion,
            crf,
            doc_attention: None,
            corpus_attention: None,
        }
    }

    /// Instantiate the attention/gate parameter sets the mode calls for
    /// (Xavier-uniform). No-op for baseline mode or when already attached.
    pub fn attach_attention(&mut self, rng: &mut impl Rng) {
        let rep = self.cfg.encoder.output_dim();
        if self.mode.uses_doc() && self.doc_attention.is_none() {
            self.doc_attention =
                Some(AttentionBlock::init(&mut self.params, "doc", rep, self.cfg.attn_dim, rng));
        }
        if self.mode.uses_corpus() && self.corpus_attention.is_none() {
            self.corpus_attention =
                Some(AttentionBlock::init(&mut self.params, "corpus", rep, self.cfg.attn_dim, rng));
        }
    }

    pub fn attention_attached(&self) -> bool {
        self.doc_attention.is_some() || self.corpus_attention.is_some()
    }

    pub fn set_decode_mask(&mut self, mask: Option<TransitionMask>) {
        self.crf.decode_mask = mask;
    }

    fn transitions_tensor(&self) -> &Tensor {
        &self.params.get(self.crf.transitions).value
    }

    /// Encode one supporting sentence in eval mode and return per-token
    /// representation values (a scratch tape keeps gradients out).
    fn encode_frozen(&self, corpus: &Corpus, doc: usize, sent: usize) -> Result<Vec<Vec<f64>>> {
        let mut scratch = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reps = self.encoder.encode_sentence(
            &mut scratch,
            &self.params,
            corpus.sentence(doc, sent),
            false,
            &mut rng,
        )?;
        Ok(reps.iter().map(|&r| scratch.values(r).to_vec()).collect())
    }

    /// Mean per-sentence CRF loss over one document. Returns the tape so the
    /// caller can run backward and harvest gradients.
    pub fn document_loss(
        &self,
        corpus: &Corpus,
        plan: &EvidencePlan,
        doc_idx: usize,
        rng: &mut impl Rng,
    ) -> Result<(Tape, NodeId)> {
        let mut tape = Tape::new();
        let rep_dim = self.cfg.encoder.output_dim();
        let doc = &corpus.documents[doc_idx];

        // Evidence nodes, cached per supporting sentence.
        let mut frozen: HashMap<(usize, usize), Vec<Vec<f64>>> = HashMap::new();
        let mut live: HashMap<(usize, usize), Vec<NodeId>> = HashMap::new();

        let mut sentence_losses = Vec::with_capacity(doc.sentences.len());
        for (si, sent) in doc.sentences.iter().enumerate() {
            let h = self.encoder.encode_sentence(&mut tape, &self.params, sent, true, rng)?;

            let mut d_vecs = Vec::with_capacity(h.len());
            let mut c_vecs = Vec::with_capacity(h.len());
            for (ti, &h_t) in h.iter().enumerate() {
                let d = match &self.doc_attention {
                    Some(block) => {
                        let refs = &plan.doc_refs[doc_idx][si][ti];
                        let ev = self.evidence_nodes(&mut tape, corpus, refs, &mut frozen, &mut live, rng)?;
                        block.evidence_vector(&mut tape, &self.params, h_t, &ev)?.0
                    }
                    None => tape.zeros(rep_dim, 1),
                };
                let c = match &self.corpus_attention {
                    Some(block) => {
                        let refs = &plan.corpus_refs[doc_idx][si][ti];
                        let ev = self.evidence_nodes(&mut tape, corpus, refs, &mut frozen, &mut live, rng)?;
                        block.evidence_vector(&mut tape, &self.params, h_t, &ev)?.0
                    }
                    None => tape.zeros(rep_dim, 1),
                };
                d_vecs.push(d);
                c_vecs.push(c);
            }

            let fused = self.fusion.fuse(&mut tape, &self.params, &h, &d_vecs, &c_vecs)?;
            let emissions = self.crf.emissions(&mut tape, &self.params, &fused)?;
            let gold: Vec<TagId> = sent.tokens.iter().map(|t| t.gold_tag).collect();
            sentence_losses.push(self.crf.log_likelihood_loss(&mut tape, &self.params, &emissions, &gold)?);
        }

        let total = tape.add_list(&sentence_losses)?;
        let mean = tape.affine(total, 1.0 / sentence_losses.len() as f64, 0.0)?;
        Ok((tape, mean))
    }

    fn evidence_nodes(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        refs: &[TokenPos],
        frozen: &mut HashMap<(usize, usize), Vec<Vec<f64>>>,
        live: &mut HashMap<(usize, usize), Vec<NodeId>>,
        rng: &mut impl Rng,
    ) -> Result<Vec<NodeId>> {
        let rep_dim = self.cfg.encoder.output_dim();
        let mut nodes = Vec::with_capacity(refs.len());
        for r in refs {
            let key = (r.doc, r.sent);
            if self.cfg.freeze_evidence {
                if let Entry::Vacant(e) = frozen.entry(key) {
                    e.insert(self.encode_frozen(corpus, r.doc, r.sent)?);
                }
                let vals = &frozen[&key][r.tok];
                nodes.push(tape.leaf(rep_dim, 1, vals.clone())?);
            } else {
                if let Entry::Vacant(e) = live.entry(key) {
                    let reps = self.encoder.encode_sentence(
                        tape,
                        &self.params,
                        corpus.sentence(r.doc, r.sent),
                        false,
                        rng,
                    )?;
                    e.insert(reps);
                }
                nodes.push(live[&key][r.tok]);
            }
        }
        Ok(nodes)
    }

    /// Decode every sentence of the corpus in eval mode. Optionally collects
    /// attention weights for inspection.
    pub fn decode_corpus(
        &self,
        corpus: &Corpus,
        plan: &EvidencePlan,
        mut attention_out: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<Predictions> {
        let rep_dim = self.cfg.encoder.output_dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        // Eval-mode encodings double as evidence representations; cache them
        // corpus-wide since parameters are fixed during decoding.
        let mut cache: HashMap<(usize, usize), Vec<Vec<f64>>> = HashMap::new();

        let mut out = Vec::with_capacity(corpus.documents.len());
        for (di, doc) in corpus.documents.iter().enumerate() {
            let mut doc_preds = Vec::with_capacity(doc.sentences.len());
            for (si, sent) in doc.sentences.iter().enumerate() {
                let mut tape = Tape::new();
                let h = self.encoder.encode_sentence(&mut tape, &self.params, sent, false, &mut rng)?;

                let mut d_vecs = Vec::with_capacity(h.len());
                let mut c_vecs = Vec::with_capacity(h.len());
                for (ti, &h_t) in h.iter().enumerate() {
                    for (block, refs, level) in [
                        (&self.doc_attention, &plan.doc_refs[di][si][ti], "document"),
                        (&self.corpus_attention, &plan.corpus_refs[di][si][ti], "corpus"),
                    ] {
                        let vec = match block {
                            Some(b) => {
                                let mut ev = Vec::with_capacity(refs.len());
                                for r in refs {
                                    let key = (r.doc, r.sent);
                                    if let Entry::Vacant(e) = cache.entry(key) {
                                        e.insert(self.encode_frozen(corpus, r.doc, r.sent)?);
                                    }
                                    ev.push(tape.leaf(rep_dim, 1, cache[&key][r.tok].clone())?);
                                }
                                let (gated, alphas) =
                                    b.evidence_vector(&mut tape, &self.params, h_t, &ev)?;
                                if let Some(records) = attention_out.as_deref_mut() {
                                    if !alphas.is_empty() {
                                        records.push(AttentionRecord {
                                            doc_id: doc.doc_id.clone(),
                                            sent: si,
                                            tok: ti,
                                            surface: sent.tokens[ti].surface.clone(),
                                            level,
                                            alphas,
                                            evidence: refs.iter().map(|r| (r.doc, r.sent, r.tok)).collect(),
                                        });
                                    }
                                }
                                gated
                            }
                            None => tape.zeros(rep_dim, 1),
                        };
                        if level == "document" {
                            d_vecs.push(vec);
                        } else {
                            c_vecs.push(vec);
                        }
                    }
                }

                let fused = self.fusion.fuse(&mut tape, &self.params, &h, &d_vecs, &c_vecs)?;
                let emissions = self.crf.emissions(&mut tape, &self.params, &fused)?;
                let emission_values: Vec<Vec<f64>> =
                    emissions.iter().map(|&e| tape.values(e).to_vec()).collect();
                let (path, _) = self.crf.viterbi_decode(&emission_values, self.transitions_tensor());
                doc_preds.push(path);
            }
            out.push(doc_preds);
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path, hashes: VocabHashes) -> Result<()> {
        save_checkpoint(path, &self.params, hashes)
    }

    pub fn to_bytes(&self, hashes: VocabHashes) -> Result<Vec<u8>> {
        checkpoint_bytes(&self.params, hashes)
    }

    /// Restore parameters into a freshly bound model. The mode is inferred
    /// from which attention parameter sets the checkpoint contains.
    pub fn load(path: &std::path::Path, cfg: &ModelConfig, n_tags: usize) -> Result<(Model, VocabHashes)> {
        let (tensors, hashes) = load_checkpoint(path)?;
        Self::from_tensors(tensors, cfg, n_tags).map(|m| (m, hashes))
    }

    pub fn load_bytes(bytes: &[u8], cfg: &ModelConfig, n_tags: usize) -> Result<(Model, VocabHashes)> {
        let (tensors, hashes) = crate::numeric::read_checkpoint(&mut std::io::Cursor::new(bytes))?;
        Self::from_tensors(tensors, cfg, n_tags).map(|m| (m, hashes))
    }

    fn from_tensors(tensors: Vec<(String, Tensor)>, cfg: &ModelConfig, n_tags: usize) -> Result<Model> {
        let mut params = ParamSet::new();
        for (name, tensor) in tensors {
            params.register(&name, tensor);
        }
        let word_dim_found = params
            .id("embed.word")
            .map(|id| params.get(id).value.cols())
            .ok_or_else(|| Error::Checkpoint("missing parameter embed.word".into()))?;
        if word_dim_found != cfg.encoder.word_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint word dim {word_dim_found} does not match configured {}",
                cfg.encoder.word_dim
            )));
        }

        let encoder = Encoder::bind(&params, &cfg.encoder)?;
        let fusion_cfg = FusionConfig::for_rep_dim(cfg.encoder.output_dim(), cfg.fusion_hidden);
        let fusion = Fusion::bind(&params, &fusion_cfg)?;
        let crf = CrfModel::bind(&params, n_tags)?;
        let rep = cfg.encoder.output_dim();
        let doc_attention = if params.id("attn.doc.w_query").is_some() {
            Some(AttentionBlock::bind(&params, "doc", rep, cfg.attn_dim)?)
        } else {
            None
        };
        let corpus_attention = if params.id("attn.corpus.w_query").is_some() {
            Some(AttentionBlock::bind(&params, "corpus", rep, cfg.attn_dim)?)
        } else {
            None
        };
        let mode = match (doc_attention.is_some(), corpus_attention.is_some()) {
            (true, true) => Mode::Both,
            (true, false) => Mode::Doc,
            (false, true) => Mode::Corpus,
            (false, false) => Mode::Baseline,
        };
        Ok(Model { params, cfg: cfg.clone(), mode, encoder, fusion, crf, doc_attention, corpus_attention })
    }
}

use rand::SeedableRng;
