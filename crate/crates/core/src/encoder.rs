//! Local contextual encoder: per-token character CNN concatenated with the
//! word embedding, fed through a bidirectional LSTM. Each token comes out
//! as the concatenation of the forward and backward hidden states.
//!
//! One parameter set serves both query sentences and retrieved supporting
//! sentences, so query-side and evidence-side representations live in the
//! same space.

use rand::Rng;

use crate::corpus::{Sentence, PAD_CHAR};
use crate::error::Result;
use crate::numeric::{NodeId, ParamId, ParamSet, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Filters per convolution width.
    pub char_filters: usize,
    pub char_widths: Vec<usize>,
    /// Hidden size per direction.
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub dropout_input: bool,
    pub dropout_output: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 100,
            char_dim: 25,
            char_filters: 25,
            char_widths: vec![2, 3, 4],
            lstm_hidden: 100,
            dropout: 0.5,
            dropout_input: true,
            dropout_output: true,
        }
    }
}

impl EncoderConfig {
    pub fn char_feature_dim(&self) -> usize {
        self.char_filters * self.char_widths.len()
    }

    pub fn token_input_dim(&self) -> usize {
        self.word_dim + self.char_feature_dim()
    }

    /// Size of one local contextual representation (both directions).
    pub fn output_dim(&self) -> usize {
        2 * self.lstm_hidden
    }
}

/// One LSTM direction: a fused gate matrix over [x; h_prev] plus bias.
/// Gate layout along rows: input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub(crate) fn init_named(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = params.register(&format!("{name}.w"), Tensor::xavier(4 * hidden, input + hidden, rng));
        // Forget-gate bias starts at 1.0 to keep early memory open.
        let mut bias = Tensor::zeros(4 * hidden, 1);
        for i in hidden..2 * hidden {
            bias.values[i] = 1.0;
        }
        let b = params.register(&format!("{name}.b"), bias);
        LstmCell { w, b, hidden }
    }

    pub(crate) fn bind_named(params: &ParamSet, name: &str, hidden: usize) -> Result<Self> {
        let missing = |n: &str| crate::Error::Checkpoint(format!("missing parameter {n}"));
        Ok(LstmCell {
            w: params.id(&format!("{name}.w")).ok_or_else(|| missing(&format!("{name}.w")))?,
            b: params.id(&format!("{name}.b")).ok_or_else(|| missing(&format!("{name}.b")))?,
            hidden,
        })
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: NodeId,
        state: (NodeId, NodeId),
    ) -> Result<(NodeId, NodeId)> {
        let (h_prev, c_prev) = state;
        let h = self.hidden;
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let xs = tape.concat_rows(&[x, h_prev])?;
        let lin = tape.matmul(w, xs)?;
        let gates = tape.add(lin, b)?;
        let i_raw = tape.slice_rows(gates, 0, h)?;
        let f_raw = tape.slice_rows(gates, h, h)?;
        let g_raw = tape.slice_rows(gates, 2 * h, h)?;
        let o_raw = tape.slice_rows(gates, 3 * h, h)?;
        let i = tape.sigmoid(i_raw)?;
        let f = tape.sigmoid(f_raw)?;
        let g = tape.tanh(g_raw)?;
        let o = tape.sigmoid(o_raw)?;
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let ct = tape.tanh(c)?;
        let h_new = tape.mul(o, ct)?;
        Ok((h_new, c))
    }
}

#[derive(Debug, Clone)]
struct ConvBank {
    width: usize,
    /// (width * char_dim, char_filters), applied as windows x filter.
    filter: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub word_emb: ParamId,
    pub char_emb: ParamId,
    conv: Vec<ConvBank>,
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl Encoder {
    /// Register all encoder parameters. `word_matrix`, when given, supplies
    /// pretrained rows (shape must be (vocab, word_dim)); otherwise rows are
    /// sampled uniformly in +-sqrt(3/word_dim).
    pub fn init(
        params: &mut ParamSet,
        cfg: &EncoderConfig,
        word_vocab_size: usize,
        char_vocab_size: usize,
        word_matrix: Option<Tensor>,
        rng: &mut impl Rng,
    ) -> Self {
        let word_bound = (3.0 / cfg.word_dim as f64).sqrt();
        let word = word_matrix.unwrap_or_else(|| {
            Tensor::uniform(word_vocab_size, cfg.word_dim, -word_bound, word_bound, rng)
        });
        assert_eq!(word.shape(), (word_vocab_size, cfg.word_dim), "word matrix shape");
        let word_emb = params.register("embed.word", word);

        let char_bound = (3.0 / cfg.char_dim as f64).sqrt();
        let char_emb = params.register(
            "embed.char",
            Tensor::uniform(char_vocab_size, cfg.char_dim, -char_bound, char_bound, rng),
        );

        let mut conv = Vec::new();
        for &w in &cfg.char_widths {
            let filter = params.register(
                &format!("charcnn.w{w}.filter"),
                Tensor::xavier(w * cfg.char_dim, cfg.char_filters, rng),
            );
            let bias =
                params.register(&format!("charcnn.w{w}.bias"), Tensor::zeros(cfg.char_filters, 1));
            conv.push(ConvBank { width: w, filter, bias });
        }

        let input = cfg.token_input_dim();
        let fwd = LstmCell::init_named(params, "encoder.fwd", input, cfg.lstm_hidden, rng);
        let bwd = LstmCell::init_named(params, "encoder.bwd", input, cfg.lstm_hidden, rng);

        Encoder { cfg: cfg.clone(), word_emb, char_emb, conv, fwd, bwd }
    }

    /// Re-attach to parameters loaded from a checkpoint.
    pub fn bind(params: &ParamSet, cfg: &EncoderConfig) -> Result<Self> {
        let missing = |n: &str| crate::Error::Checkpoint(format!("missing parameter {n}"));
        let mut conv = Vec::new();
        for &w in &cfg.char_widths {
            conv.push(ConvBank {
                width: w,
                filter: params
                    .id(&format!("charcnn.w{w}.filter"))
                    .ok_or_else(|| missing(&format!("charcnn.w{w}.filter")))?,
                bias: params
                    .id(&format!("charcnn.w{w}.bias"))
                    .ok_or_else(|| missing(&format!("charcnn.w{w}.bias")))?,
            });
        }
        Ok(Encoder {
            cfg: cfg.clone(),
            word_emb: params.id("embed.word").ok_or_else(|| missing("embed.word"))?,
            char_emb: params.id("embed.char").ok_or_else(|| missing("embed.char"))?,
            conv,
            fwd: LstmCell::bind_named(params, "encoder.fwd", cfg.lstm_hidden)?,
            bwd: LstmCell::bind_named(params, "encoder.bwd", cfg.lstm_hidden)?,
        })
    }

    /// Character feature vector for one token: per width, convolve the char
    /// embeddings and max-pool over time, then concatenate the widths.
    /// Tokens shorter than a filter width are right-padded with PAD.
    pub fn char_cnn(&self, tape: &mut Tape, params: &ParamSet, char_ids: &[usize]) -> Result<NodeId> {
        let max_width = self.conv.iter().map(|c| c.width).max().unwrap_or(1);
        let mut ids = char_ids.to_vec();
        while ids.len() < max_width {
            ids.push(PAD_CHAR);
        }
        let emb = tape.embed_rows(params, self.char_emb, &ids)?;
        let cd = self.cfg.char_dim;

        let mut pooled = Vec::with_capacity(self.conv.len());
        for bank in &self.conv {
            let w = bank.width;
            let n_win = ids.len() - w + 1;
            let mut windows = Vec::with_capacity(n_win);
            for t in 0..n_win {
                let blk = tape.block(emb, t, 0, w, cd)?;
                windows.push(tape.reshape(blk, 1, w * cd)?);
            }
            let stacked = tape.concat_rows(&windows)?;
            let filter = tape.param(params, bank.filter);
            let bias = tape.param(params, bank.bias);
            let scores = tape.matmul(stacked, filter)?;
            let biased = tape.add_row_broadcast(scores, bias)?;
            pooled.push(tape.max_over_time(biased)?);
        }
        tape.concat_rows(&pooled)
    }

    /// Encode a sentence into per-token local contextual representations of
    /// size `2 * lstm_hidden`. Dropout applies only in train mode.
    pub fn encode_sentence(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        sentence: &Sentence,
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<Vec<NodeId>> {
        let n = sentence.tokens.len();
        let mut inputs = Vec::with_capacity(n);
        for tok in &sentence.tokens {
            let wrow = tape.embed_rows(params, self.word_emb, &[tok.word_id])?;
            let wvec = tape.reshape(wrow, self.cfg.word_dim, 1)?;
            let cvec = self.char_cnn(tape, params, &tok.char_ids)?;
            let mut x = tape.concat_rows(&[wvec, cvec])?;
            if self.cfg.dropout_input {
                x = tape.dropout(x, self.cfg.dropout, train_mode, rng)?;
            }
            inputs.push(x);
        }

        let h = self.cfg.lstm_hidden;
        let mut fwd_states = Vec::with_capacity(n);
        let mut state = (tape.zeros(h, 1), tape.zeros(h, 1));
        for &x in &inputs {
            state = self.fwd.step(tape, params, x, state)?;
            fwd_states.push(state.0);
        }
        let mut bwd_states = vec![NodeId::default(); n];
        let mut state = (tape.zeros(h, 1), tape.zeros(h, 1));
        for t in (0..n).rev() {
            state = self.bwd.step(tape, params, inputs[t], state)?;
            bwd_states[t] = state.0;
        }

        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let mut rep = tape.concat_rows(&[fwd_states[t], bwd_states[t]])?;
            if self.cfg.dropout_output {
                rep = tape.dropout(rep, self.cfg.dropout, train_mode, rng)?;
            }
            out.push(rep);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use crate::numeric::{central_diff_param, grads_close};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            word_dim: 4,
            char_dim: 3,
            char_filters: 2,
            char_widths: vec![2, 3],
            lstm_hidden: 5,
            dropout: 0.5,
            dropout_input: true,
            dropout_output: true,
        }
    }

    fn token(word_id: usize, char_ids: Vec<usize>) -> Token {
        Token { surface: format!("w{word_id}"), gold_tag: 0, word_id, char_ids }
    }

    fn sentence(tokens: Vec<Token>) -> Sentence {
        Sentence { tokens, doc_index: 0, sent_index: 0 }
    }

    #[test]
    fn char_cnn_output_dim_is_filters_times_widths() {
        let cfg = EncoderConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 10, 8, None, &mut rng);
        let mut tape = Tape::new();
        let v = enc.char_cnn(&mut tape, &params, &[2, 3, 4, 5]).unwrap();
        assert_eq!(tape.shape(v), (75, 1));
    }

    #[test]
    fn one_char_token_is_padded_to_widest_filter() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 4, 6, None, &mut rng);
        let mut tape = Tape::new();
        let v = enc.char_cnn(&mut tape, &params, &[3]).unwrap();
        assert_eq!(tape.shape(v), (cfg.char_feature_dim(), 1));
    }

    #[test]
    fn identical_surfaces_share_char_vectors() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 4, 6, None, &mut rng);
        let mut tape = Tape::new();
        let a = enc.char_cnn(&mut tape, &params, &[2, 4, 5]).unwrap();
        let b = enc.char_cnn(&mut tape, &params, &[2, 4, 5]).unwrap();
        assert_eq!(tape.values(a), tape.values(b));
    }

    #[test]
    fn sentence_of_n_tokens_yields_n_vectors_of_output_dim() {
        let cfg = EncoderConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 10, 8, None, &mut rng);
        let sent = sentence(vec![token(1, vec![2, 3]), token(2, vec![3]), token(3, vec![4, 5, 6])]);
        let mut tape = Tape::new();
        let reps = enc
            .encode_sentence(&mut tape, &params, &sent, false, &mut rng)
            .unwrap();
        assert_eq!(reps.len(), 3);
        for r in reps {
            assert_eq!(tape.shape(r), (200, 1));
        }
    }

    #[test]
    fn eval_mode_is_bit_deterministic() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 4, 6, None, &mut rng);
        let sent = sentence(vec![token(1, vec![2, 3]), token(2, vec![4])]);
        let collect = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            enc.encode_sentence(&mut tape, &params, &sent, false, rng)
                .unwrap()
                .into_iter()
                .map(|r| tape.values(r).to_vec())
                .collect()
        };
        let a = collect(&mut rng);
        let b = collect(&mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn weight_tied_encoder_mirrors_reversed_input() {
        // With bwd weights copied from fwd, reversing the sentence swaps the
        // two halves of each representation and reverses their order.
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 6, 6, None, &mut rng);
        let (fw, fb) = (enc.fwd.w, enc.fwd.b);
        let (bw, bb) = (enc.bwd.w, enc.bwd.b);
        params.get_mut(bw).value.values = params.get(fw).value.values.clone();
        params.get_mut(bb).value.values = params.get(fb).value.values.clone();

        let toks = vec![token(1, vec![2]), token(2, vec![3, 4]), token(3, vec![5])];
        let mut rev_toks = toks.clone();
        rev_toks.reverse();
        let sent = sentence(toks);
        let rev = sentence(rev_toks);

        let mut tape = Tape::new();
        let fwd_reps: Vec<Vec<f64>> = enc
            .encode_sentence(&mut tape, &params, &sent, false, &mut rng)
            .unwrap()
            .into_iter()
            .map(|r| tape.values(r).to_vec())
            .collect();
        let rev_reps: Vec<Vec<f64>> = enc
            .encode_sentence(&mut tape, &params, &rev, false, &mut rng)
            .unwrap()
            .into_iter()
            .map(|r| tape.values(r).to_vec())
            .collect();

        let h = cfg.lstm_hidden;
        let n = fwd_reps.len();
        for t in 0..n {
            let (f_half, b_half) = fwd_reps[t].split_at(h);
            let (rf_half, rb_half) = rev_reps[n - 1 - t].split_at(h);
            for (a, b) in f_half.iter().zip(rb_half) {
                assert!((a - b).abs() < 1e-12, "forward half should mirror");
            }
            for (a, b) in b_half.iter().zip(rf_half) {
                assert!((a - b).abs() < 1e-12, "backward half should mirror");
            }
        }
    }

    #[test]
    fn representation_depends_on_whole_sentence() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 6, 6, None, &mut rng);
        let sent = sentence(vec![token(1, vec![2]), token(2, vec![3]), token(3, vec![4])]);

        let encode = |params: &ParamSet, rng: &mut ChaCha8Rng| {
            let mut tape = Tape::new();
            let reps = enc.encode_sentence(&mut tape, params, &sent, false, rng).unwrap();
            tape.values(reps[0]).to_vec()
        };
        let before = encode(&params, &mut rng);
        // Perturb the embedding of the *last* token's word.
        let dim = cfg.word_dim;
        params.get_mut(enc.word_emb).value.values[3 * dim] += 0.5;
        let after = encode(&params, &mut rng);
        assert_ne!(before, after, "token 0 must see a change in token 2");
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            word_dim: 3,
            char_dim: 2,
            char_filters: 2,
            char_widths: vec![2],
            lstm_hidden: 4,
            dropout: 0.0,
            dropout_input: false,
            dropout_output: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &cfg, 5, 5, None, &mut rng);
        let sent = sentence(vec![token(1, vec![2, 3]), token(4, vec![4]), token(2, vec![3, 2, 4])]);

        // Scalar head: dot every representation with a fixed probe vector.
        let probe: Vec<f64> = (0..cfg.output_dim()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let forward = |ps: &ParamSet| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut tape = Tape::new();
            let reps = enc.encode_sentence(&mut tape, ps, &sent, false, &mut rng).unwrap();
            let pv = tape.leaf(cfg.output_dim(), 1, probe.clone()).unwrap();
            let mut terms = Vec::new();
            for r in reps {
                terms.push(tape.dot(r, pv).unwrap());
            }
            let total = tape.add_list(&terms).unwrap();
            tape.scalar_value(total)
        };

        let mut tape = Tape::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let reps = enc.encode_sentence(&mut tape, &params, &sent, false, &mut rng2).unwrap();
        let pv = tape.leaf(cfg.output_dim(), 1, probe.clone()).unwrap();
        let mut terms = Vec::new();
        for r in reps {
            terms.push(tape.dot(r, pv).unwrap());
        }
        let total = tape.add_list(&terms).unwrap();
        tape.backward(total).unwrap();
        tape.apply_param_grads(&mut params);

        let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let pid = params.id(&name).unwrap();
            let analytic = params.get(pid).value.grad.clone().unwrap();
            let numeric = central_diff_param(&mut params, pid, 1e-5, forward);
            assert!(
                grads_close(&analytic, &numeric, 1e-4),
                "gradient mismatch for {name}: analytic {analytic:?} vs numeric {numeric:?}"
            );
        }
    }
}
