//! Command-line surface: train, tag, eval, stats, lda.
//!
//! Configuration resolves in three layers: built-in defaults, then a
//! `key = value` config file, then command-line flags. Diagnostics go to
//! stderr, data to stdout; the process exits nonzero on any error.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    load_conll, split_into_documents, write_tagged, CharVocab, Corpus, TagScheme, Vocab,
};
use crate::crf::TransitionMask;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelConfig, Predictions};
use crate::numeric::Tensor;
use crate::retrieval::{corpus_stats, fit_lda, LdaConfig};
use crate::train::{self, evaluate, plan_for, TrainOptions, TrainSchedule};

/// Every tunable, with defaults matching the reference setup: 100-dim word
/// and 25-dim char embeddings, CharCNN widths [2,3,4] with 25 filters,
/// Bi-LSTM hidden 100 (both levels), dropout 0.5, SGD at 0.005 with one
/// document per batch, 50 pretrain + 50 fine-tune epochs, evidence caps 4
/// (document) and 5 (corpus), 20 LDA topics, 30-sentence random splits.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub checkpoint_path: PathBuf,
    pub input_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub attention_out: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub mode: Mode,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_widths: Vec<usize>,
    pub lstm_hidden: usize,
    pub upper_hidden: usize,
    pub attn_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub seeds: usize,
    pub doc_evidence_cap: usize,
    pub corpus_evidence_cap: usize,
    pub n_topics: usize,
    pub lda_beta: f64,
    pub lda_iterations: usize,
    pub lda_stopwords: usize,
    pub split_block: usize,
    pub split_docs: bool,
    pub column_word: usize,
    pub column_tag: usize,
    pub unfreeze_evidence: bool,
    pub decode_mask: bool,
    pub json: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_path: None,
            dev_path: None,
            test_path: None,
            embeddings_path: None,
            checkpoint_path: PathBuf::from("model.ckpt"),
            input_path: None,
            output_path: None,
            attention_out: None,
            out_dir: PathBuf::from("."),
            mode: Mode::Both,
            word_dim: 100,
            char_dim: 25,
            char_filters: 25,
            char_widths: vec![2, 3, 4],
            lstm_hidden: 100,
            upper_hidden: 100,
            attn_dim: 100,
            dropout: 0.5,
            learning_rate: 0.005,
            clip_norm: 5.0,
            pretrain_epochs: 50,
            finetune_epochs: 50,
            seed: 0,
            seeds: 1,
            doc_evidence_cap: 4,
            corpus_evidence_cap: 5,
            n_topics: 20,
            lda_beta: 0.01,
            lda_iterations: 1000,
            lda_stopwords: 30,
            split_block: 30,
            split_docs: false,
            column_word: 0,
            column_tag: 1,
            unfreeze_evidence: false,
            decode_mask: false,
            json: false,
        }
    }
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file and then to the defaults documented on [`RunConfig`].
#[derive(Debug, Args, Default)]
pub struct CliOpts {
    /// Config file with `key = value` lines (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus (CoNLL columns)
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development corpus
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test corpus
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pretrained word embeddings (word2vec text format)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint file to write (train) or read (tag)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input file for tag/eval/stats/lda
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file (default stdout)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write per-token attention weights as JSON lines (tag)
    #[arg(long)]
    pub attention_out: Option<PathBuf>,
    /// Directory for curves and reports
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// baseline | doc | corpus | both
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub char_dim: Option<usize>,
    #[arg(long)]
    pub char_filters: Option<usize>,
    /// Comma-separated CharCNN widths, e.g. 2,3,4
    #[arg(long)]
    pub char_widths: Option<String>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    #[arg(long)]
    pub upper_hidden: Option<usize>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeded reruns; reports mean and max dev F1
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub doc_evidence_cap: Option<usize>,
    #[arg(long)]
    pub corpus_evidence_cap: Option<usize>,
    #[arg(long)]
    pub n_topics: Option<usize>,
    #[arg(long)]
    pub lda_beta: Option<f64>,
    #[arg(long)]
    pub lda_iterations: Option<usize>,
    #[arg(long)]
    pub lda_stopwords: Option<usize>,
    /// Sentences per document for random document splitting
    #[arg(long)]
    pub split_block: Option<usize>,
    /// Randomly split corpora into documents of --split-block sentences
    #[arg(long)]
    pub split_docs: bool,
    #[arg(long)]
    pub column_word: Option<usize>,
    #[arg(long)]
    pub column_tag: Option<usize>,
    /// Let gradients flow into supporting-sentence encodings
    #[arg(long)]
    pub unfreeze_evidence: bool,
    /// Forbid illegal BIO transitions at decode time
    #[arg(long)]
    pub decode_mask: bool,
    /// Emit reports as JSON instead of text
    #[arg(long)]
    pub json: bool,
}

impl RunConfig {
    /// defaults <- config file <- flags.
    pub fn resolve(opts: &CliOpts) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &opts.config {
            let text = fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Load {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "expected key = value".into(),
                })?;
                cfg.set(key.trim(), value.trim()).map_err(|e| Error::Load {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: e.to_string(),
                })?;
            }
        }
        cfg.apply_flags(opts)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Argument(format!("bad value for {what}: {value:?}"));
        match key {
            "train" => self.train_path = Some(value.into()),
            "dev" => self.dev_path = Some(value.into()),
            "test" => self.test_path = Some(value.into()),
            "embeddings" => self.embeddings_path = Some(value.into()),
            "checkpoint" => self.checkpoint_path = value.into(),
            "input" => self.input_path = Some(value.into()),
            "output" => self.output_path = Some(value.into()),
            "attention_out" => self.attention_out = Some(value.into()),
            "out_dir" => self.out_dir = value.into(),
            "mode" => self.mode = Mode::parse(value)?,
            "word_dim" => self.word_dim = value.parse().map_err(|_| bad(key))?,
            "char_dim" => self.char_dim = value.parse().map_err(|_| bad(key))?,
            "char_filters" => self.char_filters = value.parse().map_err(|_| bad(key))?,
            "char_widths" => self.char_widths = parse_widths(value)?,
            "lstm_hidden" => self.lstm_hidden = value.parse().map_err(|_| bad(key))?,
            "upper_hidden" => self.upper_hidden = value.parse().map_err(|_| bad(key))?,
            "attn_dim" => self.attn_dim = value.parse().map_err(|_| bad(key))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad(key))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad(key))?,
            "pretrain_epochs" => self.pretrain_epochs = value.parse().map_err(|_| bad(key))?,
            "finetune_epochs" => self.finetune_epochs = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "seeds" => self.seeds = value.parse().map_err(|_| bad(key))?,
            "doc_evidence_cap" => self.doc_evidence_cap = value.parse().map_err(|_| bad(key))?,
            "corpus_evidence_cap" => {
                self.corpus_evidence_cap = value.parse().map_err(|_| bad(key))?
            }
            "n_topics" => self.n_topics = value.parse().map_err(|_| bad(key))?,
            "lda_beta" => self.lda_beta = value.parse().map_err(|_| bad(key))?,
            "lda_iterations" => self.lda_iterations = value.parse().map_err(|_| bad(key))?,
            "lda_stopwords" => self.lda_stopwords = value.parse().map_err(|_| bad(key))?,
            "split_block" => self.split_block = value.parse().map_err(|_| bad(key))?,
            "split_docs" => self.split_docs = value.parse().map_err(|_| bad(key))?,
            "column_word" => self.column_word = value.parse().map_err(|_| bad(key))?,
            "column_tag" => self.column_tag = value.parse().map_err(|_| bad(key))?,
            "unfreeze_evidence" => self.unfreeze_evidence = value.parse().map_err(|_| bad(key))?,
            "decode_mask" => self.decode_mask = value.parse().map_err(|_| bad(key))?,
            "json" => self.json = value.parse().map_err(|_| bad(key))?,
            other => return Err(Error::Argument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    fn apply_flags(&mut self, o: &CliOpts) -> Result<()> {
        macro_rules! take {
            ($field:ident, $opt:expr) => {
                if let Some(v) = &$opt {
                    self.$field = v.clone().into();
                }
            };
        }
        if let Some(v) = &o.train {
            self.train_path = Some(v.clone());
        }
        if let Some(v) = &o.dev {
            self.dev_path = Some(v.clone());
        }
        if let Some(v) = &o.test {
            self.test_path = Some(v.clone());
        }
        if let Some(v) = &o.embeddings {
            self.embeddings_path = Some(v.clone());
        }
        if let Some(v) = &o.input {
            self.input_path = Some(v.clone());
        }
        if let Some(v) = &o.output {
            self.output_path = Some(v.clone());
        }
        if let Some(v) = &o.attention_out {
            self.attention_out = Some(v.clone());
        }
        take!(checkpoint_path, o.checkpoint);
        take!(out_dir, o.out_dir);
        if let Some(m) = &o.mode {
            self.mode = Mode::parse(m)?;
        }
        take!(word_dim, o.word_dim);
        take!(char_dim, o.char_dim);
        take!(char_filters, o.char_filters);
        if let Some(w) = &o.char_widths {
            self.char_widths = parse_widths(w)?;
        }
        take!(lstm_hidden, o.lstm_hidden);
        take!(upper_hidden, o.upper_hidden);
        take!(attn_dim, o.attn_dim);
        take!(dropout, o.dropout);
        take!(learning_rate, o.learning_rate);
        take!(clip_norm, o.clip_norm);
        take!(pretrain_epochs, o.pretrain_epochs);
        take!(finetune_epochs, o.finetune_epochs);
        take!(seed, o.seed);
        take!(seeds, o.seeds);
        take!(doc_evidence_cap, o.doc_evidence_cap);
        take!(corpus_evidence_cap, o.corpus_evidence_cap);
        take!(n_topics, o.n_topics);
        take!(lda_beta, o.lda_beta);
        take!(lda_iterations, o.lda_iterations);
        take!(lda_stopwords, o.lda_stopwords);
        take!(split_block, o.split_block);
        take!(column_word, o.column_word);
        take!(column_tag, o.column_tag);
        if o.split_docs {
            self.split_docs = true;
        }
        if o.unfreeze_evidence {
            self.unfreeze_evidence = true;
        }
        if o.decode_mask {
            self.decode_mask = true;
        }
        if o.json {
            self.json = true;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                word_dim: self.word_dim,
                char_dim: self.char_dim,
                char_filters: self.char_filters,
                char_widths: self.char_widths.clone(),
                lstm_hidden: self.lstm_hidden,
                dropout: self.dropout,
                dropout_input: true,
                dropout_output: true,
            },
            attn_dim: self.attn_dim,
            fusion_hidden: self.upper_hidden,
            freeze_evidence: !self.unfreeze_evidence,
            decode_mask: self.decode_mask,
        }
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            n_topics: self.n_topics,
            alpha: None,
            beta: self.lda_beta,
            iterations: self.lda_iterations,
            seed: self.seed,
            stopword_top: self.lda_stopwords,
        }
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        let mut lda = self.lda_config();
        lda.seed = seed;
        TrainOptions {
            schedule: TrainSchedule {
                pretrain_epochs: self.pretrain_epochs,
                finetune_epochs: self.finetune_epochs,
                learning_rate: self.learning_rate,
                clip_norm: self.clip_norm,
                seed,
                mode: self.mode,
            },
            model_cfg: self.model_config(),
            doc_cap: self.doc_evidence_cap,
            corpus_cap: self.corpus_evidence_cap,
            lda,
        }
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    let widths: std::result::Result<Vec<usize>, _> =
        s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    let widths = widths.map_err(|_| Error::Argument(format!("bad char widths {s:?}")))?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Argument("char widths must be positive".into()));
    }
    Ok(widths)
}

/// Shared corpus preparation: load the splits, build the joint vocabulary
/// (train surfaces plus dev/test surfaces covered by the embedding file),
/// remap everything onto it, and load the embedding matrix.
pub struct PreparedData {
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub test: Option<Corpus>,
    pub word_matrix: Option<Tensor>,
    pub coverage: Option<f64>,
}

fn load_split(cfg: &RunConfig, path: &Path, label: &str) -> Result<Corpus> {
    let load = load_conll(path, cfg.column_word, cfg.column_tag)?;
    if load.repaired_tags > 0 {
        eprintln!("{label}: repaired {} ill-formed inside tags", load.repaired_tags);
    }
    let corpus = if cfg.split_docs {
        split_into_documents(&load.corpus, cfg.split_block, cfg.seed)?
    } else {
        load.corpus
    };
    Ok(corpus)
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let train_path = cfg
        .train_path
        .as_ref()
        .ok_or_else(|| Error::Argument("a training corpus is required (--train)".into()))?;
    let train_raw = load_split(cfg, train_path, "train")?;
    let dev_raw = cfg.dev_path.as_ref().map(|p| load_split(cfg, p, "dev")).transpose()?;
    let test_raw = cfg.test_path.as_ref().map(|p| load_split(cfg, p, "test")).transpose()?;

    // Joint tag scheme across splits.
    let mut types: Vec<String> = Vec::new();
    for corpus in [Some(&train_raw), dev_raw.as_ref(), test_raw.as_ref()].into_iter().flatten() {
        for tag in corpus.tag_scheme.iter() {
            if let Some(ty) = tag.strip_prefix("B-") {
                if !types.iter().any(|t| t == ty) {
                    types.push(ty.to_string());
                }
            }
        }
    }
    let tag_scheme = TagScheme::from_types(types.iter().map(|s| s.as_str()));

    // Word vocabulary: all training surfaces, plus dev/test surfaces that
    // the embedding file covers (exact or lowercase).
    let emb_words: Option<HashSet<String>> = match &cfg.embeddings_path {
        Some(p) => Some(crate::corpus::embedding_word_set(p)?),
        None => None,
    };
    let mut vocab = Vocab::new();
    vocab.extend(train_raw.iter_sentences().flat_map(|s| s.tokens.iter().map(|t| t.surface.as_str())));
    if let Some(words) = &emb_words {
        for corpus in [dev_raw.as_ref(), test_raw.as_ref()].into_iter().flatten() {
            for sent in corpus.iter_sentences() {
                for tok in &sent.tokens {
                    if words.contains(&tok.surface) || words.contains(&tok.surface.to_lowercase()) {
                        vocab.extend([tok.surface.as_str()]);
                    }
                }
            }
        }
    }
    let char_vocab = CharVocab::from_chars(
        train_raw
            .iter_sentences()
            .flat_map(|s| s.tokens.iter())
            .flat_map(|t| t.surface.chars()),
    );

    let (word_matrix, coverage) = match &cfg.embeddings_path {
        Some(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e3779b97f4a7c15);
            let load = crate::corpus::load_embeddings(p, cfg.word_dim, &vocab, &mut rng)?;
            (Some(load.matrix), Some(load.coverage))
        }
        None => (None, None),
    };

    Ok(PreparedData {
        train: train_raw.remap(&vocab, &char_vocab, &tag_scheme)?,
        dev: dev_raw.map(|c| c.remap(&vocab, &char_vocab, &tag_scheme)).transpose()?,
        test: test_raw.map(|c| c.remap(&vocab, &char_vocab, &tag_scheme)).transpose()?,
        word_matrix,
        coverage,
    })
}

pub fn cmd_train(opts: &CliOpts) -> Result<()> {
    let cfg = RunConfig::resolve(opts)?;
    if cfg.embeddings_path.is_none() {
        eprintln!("warning: no embeddings file given; word vectors are randomly initialized");
    }
    let data = prepare_data(&cfg)?;
    if let Some(cov) = data.coverage {
        eprintln!("embedding coverage: {:.1}% of vocabulary", 100.0 * cov);
    }
    fs::create_dir_all(&cfg.out_dir)?;

    let mut best_f1s = Vec::new();
    for run in 0..cfg.seeds.max(1) {
        let seed = cfg.seed + run as u64;
        let opts_run = cfg.train_options(seed);
        eprintln!(
            "training mode={} seed={seed}: {} pretrain + {} fine-tune epochs over {} documents",
            cfg.mode.name(),
            opts_run.schedule.pretrain_epochs,
            opts_run.schedule.finetune_epochs,
            data.train.documents.len()
        );
        let outcome = train::train(&data.train, data.dev.as_ref(), data.word_matrix.clone(), &opts_run)?;

        let suffix = if cfg.seeds > 1 { format!(".seed{seed}") } else { String::new() };
        let ckpt_path = with_suffix(&cfg.checkpoint_path, &suffix);
        fs::write(&ckpt_path, &outcome.best_checkpoint)?;
        eprintln!(
            "wrote {} (best epoch {}, dev F1 {})",
            ckpt_path.display(),
            outcome.stats.best_epoch,
            outcome
                .stats
                .best_dev_f1
                .map(|f| format!("{f:.2}"))
                .unwrap_or_else(|| "n/a".into())
        );

        let curve_path = cfg.out_dir.join(format!("curves{suffix}.csv"));
        let mut csv = String::from("epoch,train_loss,dev_f1\n");
        for s in &outcome.stats.curve {
            csv.push_str(&format!(
                "{},{:.6},{}\n",
                s.epoch,
                s.train_loss,
                s.dev_f1.map(|f| format!("{f:.4}")).unwrap_or_default()
            ));
        }
        fs::write(&curve_path, csv)?;

        let stats_path = cfg.out_dir.join(format!("run_stats{suffix}.json"));
        fs::write(&stats_path, serde_json::to_string_pretty(&outcome.stats)?)?;

        if let Some(test) = &data.test {
            let (model, _) = Model::load_bytes(
                &outcome.best_checkpoint,
                &cfg.model_config(),
                data.train.tag_scheme.len(),
            )?;
            let (plan, _) = plan_for(test, model.mode, &opts_run)?;
            let preds = model.decode_corpus(test, &plan, None)?;
            let report = evaluate(&preds, test)?;
            let report_path = cfg.out_dir.join(format!("test_report{suffix}.json"));
            fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            println!("test:\n{}", report.conlleval_text());
        }

        if let Some(f1) = outcome.stats.best_dev_f1 {
            best_f1s.push(f1);
        }
    }

    if best_f1s.len() > 1 {
        let (mean, max) = train::seed_summary(&best_f1s);
        println!("dev F1 over {} seeds: mean {mean:.2}, max {max:.2}", best_f1s.len());
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return path.to_path_buf();
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn cmd_tag(opts: &CliOpts) -> Result<()> {
    let cfg = RunConfig::resolve(opts)?;
    let input_path = cfg
        .input_path
        .as_ref()
        .ok_or_else(|| Error::Argument("an input file is required (--input)".into()))?;

    let data = prepare_data(&cfg)?;
    let expected = train::corpus_hashes(&data.train);
    let model_cfg = cfg.model_config();
    let (mut model, stored) =
        Model::load(&cfg.checkpoint_path, &model_cfg, data.train.tag_scheme.len())?;
    if stored.word != expected.word {
        return Err(Error::VocabHash("word"));
    }
    if stored.chars != expected.chars {
        return Err(Error::VocabHash("character"));
    }
    if stored.tags != expected.tags {
        return Err(Error::VocabHash("tag"));
    }
    if cfg.decode_mask {
        model.set_decode_mask(Some(TransitionMask::from_scheme(&data.train.tag_scheme)));
    }

    let input_load = load_conll(input_path, cfg.column_word, cfg.column_tag)?;
    let input = input_load
        .corpus
        .remap(&data.train.word_vocab, &data.train.char_vocab, &data.train.tag_scheme)?;

    let run_opts = cfg.train_options(cfg.seed);
    let (plan, _) = plan_for(&input, model.mode, &run_opts)?;
    let mut records = Vec::new();
    let preds = model.decode_corpus(
        &input,
        &plan,
        cfg.attention_out.as_ref().map(|_| &mut records),
    )?;

    let mut out: Box<dyn Write> = match &cfg.output_path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    write_tagged(&input, Some(&preds), &mut out)?;

    if let Some(path) = &cfg.attention_out {
        let mut f = fs::File::create(path)?;
        for rec in &records {
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
        }
        eprintln!("wrote {} attention records to {}", records.len(), path.display());
    }
    Ok(())
}

pub fn cmd_eval(opts: &CliOpts) -> Result<()> {
    let cfg = RunConfig::resolve(opts)?;
    let input = cfg
        .input_path
        .as_ref()
        .ok_or_else(|| Error::Argument("an input file is required (--input)".into()))?;
    // Tagged file: word, gold, predicted.
    let gold = load_conll(input, cfg.column_word, cfg.column_tag)?.corpus;
    let pred_col = cfg.column_tag + 1;
    let pred_corpus = load_conll(input, cfg.column_word, pred_col)?.corpus;
    let pred_remapped =
        pred_corpus.remap(&gold.word_vocab, &gold.char_vocab, &gold.tag_scheme)?;
    let preds: Predictions = pred_remapped
        .documents
        .iter()
        .map(|d| {
            d.sentences
                .iter()
                .map(|s| s.tokens.iter().map(|t| t.gold_tag).collect())
                .collect()
        })
        .collect();
    let report = evaluate(&preds, &gold)?;
    if cfg.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.conlleval_text());
    }
    Ok(())
}

pub fn cmd_stats(opts: &CliOpts) -> Result<()> {
    let cfg = RunConfig::resolve(opts)?;
    let input = cfg
        .input_path
        .as_ref()
        .ok_or_else(|| Error::Argument("an input file is required (--input)".into()))?;
    let corpus = load_split(&cfg, input, "input")?;
    let stats = corpus_stats(&corpus);
    if cfg.json {
        println!(
            "{}",
            serde_json::json!({
                "repeat_rate": stats.repeat_rate,
                "type_consistency": stats.type_consistency,
                "documents_with_mentions": stats.documents_with_mentions,
                "documents_with_repeats": stats.documents_with_repeats,
            })
        );
    } else {
        println!("repeated mentions per document: {:.2}%", stats.repeat_rate);
        println!("type consistency among repeats: {:.2}%", stats.type_consistency);
    }
    Ok(())
}

pub fn cmd_lda(opts: &CliOpts) -> Result<()> {
    let cfg = RunConfig::resolve(opts)?;
    let input = cfg
        .input_path
        .as_ref()
        .ok_or_else(|| Error::Argument("an input file is required (--input)".into()))?;
    let corpus = load_split(&cfg, input, "input")?;
    let model = fit_lda(&corpus, &cfg.lda_config())?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    let mut out: Box<dyn Write> = match &cfg.output_path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    for (di, doc) in corpus.documents.iter().enumerate() {
        let cluster = model.cluster_of_doc[di];
        let words = model.top_words(cluster, 10).join(" ");
        writeln!(out, "{}\t{}\t{}", doc.doc_id, cluster, words)?;
    }
    Ok(())
}
