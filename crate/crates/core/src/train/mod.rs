//! Two-phase training schedule and run bookkeeping.
//!
//! Phase 1 trains the baseline pipeline (encoder, fusion, CRF) with the
//! evidence slots zeroed. At the transition epoch the attention/gate
//! parameter sets called for by the mode are instantiated and the whole
//! model is fine-tuned. Each batch is one document; the per-batch loss is
//! the mean of sentence losses. Dev F1 is recorded every epoch and the
//! best-dev checkpoint is retained.

mod eval;
mod propagate;

pub use eval::{evaluate, EvalReport, TypeScore};
pub use propagate::{majority_vote_propagate, VoteLevel};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{build_evidence_plan, EvidencePlan, Mode, Model, ModelConfig};
use crate::numeric::{SgdOptimizer, Tensor, VocabHashes};
use crate::retrieval::{fit_lda, LdaConfig, TopicModel};

#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl TrainSchedule {
    pub fn new(mode: Mode) -> Self {
        TrainSchedule {
            pretrain_epochs: 50,
            finetune_epochs: 50,
            learning_rate: 0.005,
            clip_norm: 5.0,
            seed: 0,
            mode,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.finetune_epochs
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    pub model_cfg: ModelConfig,
    pub doc_cap: usize,
    pub corpus_cap: usize,
    pub lda: LdaConfig,
}

impl TrainOptions {
    pub fn new(mode: Mode) -> Self {
        TrainOptions {
            schedule: TrainSchedule::new(mode),
            model_cfg: ModelConfig::default(),
            doc_cap: crate::retrieval::DOC_EVIDENCE_CAP,
            corpus_cap: crate::retrieval::CORPUS_EVIDENCE_CAP,
            lda: LdaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub curve: Vec<EpochStat>,
    pub best_dev_f1: Option<f64>,
    pub best_epoch: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    pub stats: RunStats,
    /// Serialized parameters at the best dev epoch (final epoch without dev).
    pub best_checkpoint: Vec<u8>,
    pub hashes: VocabHashes,
    /// Evidence plan for the training corpus (reusable for decoding it).
    pub train_plan: EvidencePlan,
    pub train_topics: Option<TopicModel>,
}

pub fn corpus_hashes(corpus: &Corpus) -> VocabHashes {
    VocabHashes {
        word: corpus.word_vocab.fingerprint(),
        chars: corpus.char_vocab.fingerprint(),
        tags: corpus.tag_scheme.fingerprint(),
    }
}

/// Build the evidence plan a corpus needs under `mode`, fitting a topic
/// model over that same corpus when corpus-level evidence is requested.
pub fn plan_for(
    corpus: &Corpus,
    mode: Mode,
    opts: &TrainOptions,
) -> Result<(EvidencePlan, Option<TopicModel>)> {
    let topics = if mode.uses_corpus() {
        Some(fit_lda(corpus, &opts.lda)?)
    } else {
        None
    };
    let plan = build_evidence_plan(corpus, mode, topics.as_ref(), opts.doc_cap, opts.corpus_cap)?;
    Ok((plan, topics))
}

pub fn train(
    train_corpus: &Corpus,
    dev_corpus: Option<&Corpus>,
    word_matrix: Option<Tensor>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if train_corpus.documents.is_empty() || train_corpus.n_sentences() == 0 {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    let schedule = &opts.schedule;
    let mode = schedule.mode;
    let hashes = corpus_hashes(train_corpus);

    let (train_plan, train_topics) = plan_for(train_corpus, mode, opts)?;
    let dev_artifacts = match dev_corpus {
        Some(dev) => Some(plan_for(dev, mode, opts)?),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut model = Model::new(
        &opts.model_cfg,
        mode,
        train_corpus.word_vocab.len(),
        train_corpus.char_vocab.len(),
        train_corpus.tag_scheme.len(),
        word_matrix,
        &mut rng,
    );
    // The fitted topic model rides along in every checkpoint. The tensors
    // are never touched by the tape, so training leaves them as-is.
    if let Some(topics) = &train_topics {
        for (name, tensor) in topics.to_tensors() {
            model.params.register(&name, tensor);
        }
    }
    let optimizer = SgdOptimizer::new(schedule.learning_rate, schedule.clip_norm);

    let mut curve = Vec::with_capacity(schedule.total_epochs());
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_bytes = model.to_bytes(hashes)?;

    let n_docs = train_corpus.documents.len();
    for epoch in 1..=schedule.total_epochs() {
        if epoch == schedule.pretrain_epochs + 1 {
            model.attach_attention(&mut rng);
        }

        let mut order: Vec<usize> = (0..n_docs).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &di in &order {
            let (mut tape, loss) = model.document_loss(train_corpus, &train_plan, di, &mut rng)?;
            loss_sum += tape.scalar_value(loss);
            tape.backward(loss)?;
            tape.apply_param_grads(&mut model.params);
            optimizer.step(&mut model.params);
        }
        let train_loss = loss_sum / n_docs as f64;

        let dev_f1 = match (&dev_artifacts, dev_corpus) {
            (Some((plan, _)), Some(dev)) => {
                let preds = model.decode_corpus(dev, plan, None)?;
                Some(evaluate(&preds, dev)?.f1)
            }
            _ => None,
        };
        curve.push(EpochStat { epoch, train_loss, dev_f1 });

        match dev_f1 {
            Some(f1) if f1 > best_f1 => {
                best_f1 = f1;
                best_epoch = epoch;
                best_bytes = model.to_bytes(hashes)?;
            }
            None => {
                best_epoch = epoch;
                best_bytes = model.to_bytes(hashes)?;
            }
            _ => {}
        }
    }

    Ok(TrainOutcome {
        model,
        stats: RunStats {
            curve,
            best_dev_f1: if best_f1.is_finite() { Some(best_f1) } else { None },
            best_epoch,
        },
        best_checkpoint: best_bytes,
        hashes,
        train_plan,
        train_topics,
    })
}

/// Mean and max of the best dev F1 across seeded reruns.
pub fn seed_summary(best_f1s: &[f64]) -> (f64, f64) {
    let mean = best_f1s.iter().sum::<f64>() / best_f1s.len().max(1) as f64;
    let max = best_f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, max)
}
