//! Fusion and structured prediction: the upper Bi-LSTM runs over the
//! concatenated (local, document-gated, corpus-gated) representations, an
//! affine map produces per-tag emission scores, and a linear-chain CRF
//! provides the training loss (log-space forward algorithm) and Viterbi
//! decoding.

use rand::Rng;

use crate::corpus::{TagId, TagScheme};
use crate::encoder::LstmCell;
use crate::error::{Error, Result};
use crate::numeric::{NodeId, ParamId, ParamSet, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Per-direction hidden size of the upper Bi-LSTM.
    pub hidden: usize,
    /// Input width: 3x the local representation (h, D, C concatenated).
    pub input_dim: usize,
}

impl FusionConfig {
    pub fn for_rep_dim(rep_dim: usize, hidden: usize) -> Self {
        FusionConfig { hidden, input_dim: 3 * rep_dim }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// The upper Bi-LSTM.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub cfg: FusionConfig,
    fwd: LstmCell,
    bwd: LstmCell,
}

impl Fusion {
    pub fn init(params: &mut ParamSet, cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let fwd = LstmCell::init_named(params, "fusion.fwd", cfg.input_dim, cfg.hidden, rng);
        let bwd = LstmCell::init_named(params, "fusion.bwd", cfg.input_dim, cfg.hidden, rng);
        Fusion { cfg: cfg.clone(), fwd, bwd }
    }

    pub fn bind(params: &ParamSet, cfg: &FusionConfig) -> Result<Self> {
        Ok(Fusion {
            cfg: cfg.clone(),
            fwd: LstmCell::bind_named(params, "fusion.fwd", cfg.hidden)?,
            bwd: LstmCell::bind_named(params, "fusion.bwd", cfg.hidden)?,
        })
    }

    /// Concatenate per-token (h, D, C) and run both directions. All three
    /// sequences must have equal length.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        h: &[NodeId],
        d: &[NodeId],
        c: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        if h.len() != d.len() || h.len() != c.len() {
            return Err(Error::Argument(format!(
                "fuse length mismatch: h={} d={} c={}",
                h.len(),
                d.len(),
                c.len()
            )));
        }
        let n = h.len();
        let mut inputs = Vec::with_capacity(n);
        for t in 0..n {
            inputs.push(tape.concat_rows(&[h[t], d[t], c[t]])?);
        }
        let hid = self.cfg.hidden;
        let mut fwd_states = Vec::with_capacity(n);
        let mut state = (tape.zeros(hid, 1), tape.zeros(hid, 1));
        for &x in &inputs {
            state = self.fwd.step(tape, params, x, state)?;
            fwd_states.push(state.0);
        }
        let mut bwd_states = vec![NodeId::default(); n];
        let mut state = (tape.zeros(hid, 1), tape.zeros(hid, 1));
        for t in (0..n).rev() {
            state = self.bwd.step(tape, params, inputs[t], state)?;
            bwd_states[t] = state.0;
        }
        (0..n)
            .map(|t| tape.concat_rows(&[fwd_states[t], bwd_states[t]]))
            .collect()
    }
}

/// Decode-time transition legality derived from the BIO scheme: I-X may only
/// follow B-X or I-X.
#[derive(Debug, Clone)]
pub struct TransitionMask {
    allowed: Vec<Vec<bool>>,
    size: usize,
}

impl TransitionMask {
    pub fn from_scheme(scheme: &TagScheme) -> Self {
        let size = scheme.len() + 2;
        let mut allowed = vec![vec![true; size]; size];
        #[allow(clippy::needless_range_loop)]
        for to in 0..scheme.len() {
            let (prefix, ty) = scheme.parts(to);
            if prefix != 'I' {
                continue;
            }
            for from in 0..size {
                let ok = if from < scheme.len() {
                    let (fp, fty) = scheme.parts(from);
                    (fp == 'B' || fp == 'I') && fty == ty
                } else {
                    false // START or STOP cannot precede I-X
                };
                allowed[from][to] = ok;
            }
        }
        TransitionMask { allowed, size }
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        self.allowed[from][to]
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Emission projection plus learned transition matrix with START/STOP rows.
#[derive(Debug, Clone)]
pub struct CrfModel {
    pub n_tags: usize,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// (n_tags + 2) square; row = from, column = to.
    pub transitions: ParamId,
    pub decode_mask: Option<TransitionMask>,
}

impl CrfModel {
    pub fn init(params: &mut ParamSet, n_tags: usize, rep_dim: usize, rng: &mut impl Rng) -> Self {
        let proj_w = params.register("crf.proj.w", Tensor::xavier(n_tags, rep_dim, rng));
        let proj_b = params.register("crf.proj.b", Tensor::zeros(n_tags, 1));
        let transitions = params.register("crf.transitions", Tensor::zeros(n_tags + 2, n_tags + 2));
        CrfModel { n_tags, proj_w, proj_b, transitions, decode_mask: None }
    }

    pub fn bind(params: &ParamSet, n_tags: usize) -> Result<Self> {
        let get = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        Ok(CrfModel {
            n_tags,
            proj_w: get("crf.proj.w")?,
            proj_b: get("crf.proj.b")?,
            transitions: get("crf.transitions")?,
            decode_mask: None,
        })
    }

    fn start(&self) -> usize {
        self.n_tags
    }

    fn stop(&self) -> usize {
        self.n_tags + 1
    }

    /// Per-token emission scores: affine map of the fused representation.
    pub fn emissions(&self, tape: &mut Tape, params: &ParamSet, fused: &[NodeId]) -> Result<Vec<NodeId>> {
        let w = tape.param(params, self.proj_w);
        let b = tape.param(params, self.proj_b);
        fused
            .iter()
            .map(|&u| {
                let lin = tape.matmul(w, u)?;
                tape.add(lin, b)
            })
            .collect()
    }

    /// Negative log-likelihood of the gold path: log Z - score(gold), with
    /// log Z computed by the log-space forward algorithm on the tape.
    pub fn log_likelihood_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        emissions: &[NodeId],
        gold: &[TagId],
    ) -> Result<NodeId> {
        let n = emissions.len();
        let t_tags = self.n_tags;
        if n == 0 || gold.len() != n {
            return Err(Error::Argument(format!(
                "need one gold tag per emission: {} vs {n}",
                gold.len()
            )));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= t_tags) {
            return Err(Error::Argument(format!("gold tag id {bad} out of range (T={t_tags})")));
        }

        let trans = tape.param(params, self.transitions);
        let width = t_tags + 2;

        // Forward recursion in log space.
        let trans_tt = tape.block(trans, 0, 0, t_tags, t_tags)?;
        let start_block = tape.block(trans, self.start(), 0, 1, t_tags)?;
        let start_scores = tape.reshape(start_block, t_tags, 1)?;
        let stop_scores = tape.block(trans, 0, self.stop(), t_tags, 1)?;

        let mut alpha = tape.add(start_scores, emissions[0])?;
        for &e in &emissions[1..] {
            let expanded = tape.add_col_broadcast(trans_tt, alpha)?;
            let reduced = tape.logsumexp_cols(expanded)?;
            alpha = tape.add(reduced, e)?;
        }
        let terminal = tape.add(alpha, stop_scores)?;
        let log_z = tape.logsumexp_cols(terminal)?;

        // Gold-path score.
        let mut terms = Vec::with_capacity(2 * n + 1);
        for (&e, &g) in emissions.iter().zip(gold) {
            terms.push(tape.element(e, g)?);
        }
        terms.push(tape.element(trans, self.start() * width + gold[0])?);
        for t in 1..n {
            terms.push(tape.element(trans, gold[t - 1] * width + gold[t])?);
        }
        terms.push(tape.element(trans, gold[n - 1] * width + self.stop())?);
        let gold_score = tape.add_list(&terms)?;

        let neg_gold = tape.affine(gold_score, -1.0, 0.0)?;
        tape.add(log_z, neg_gold)
    }

    /// Highest-scoring tag path and its score. Ties break toward the lower
    /// tag id. With a decode mask installed, masked transitions are never
    /// taken.
    pub fn viterbi_decode(
        &self,
        emissions: &[Vec<f64>],
        transitions: &Tensor,
    ) -> (Vec<TagId>, f64) {
        let n = emissions.len();
        let t_tags = self.n_tags;
        assert!(n > 0, "viterbi needs at least one emission");
        let width = t_tags + 2;
        let tr = |from: usize, to: usize| -> f64 {
            match &self.decode_mask {
                Some(m) if !m.allows(from, to) => f64::NEG_INFINITY,
                _ => transitions.values[from * width + to],
            }
        };

        let mut dp = vec![0.0f64; t_tags];
        for (j, d) in dp.iter_mut().enumerate() {
            *d = tr(self.start(), j) + emissions[0][j];
        }
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
        for e in emissions.iter().skip(1) {
            let mut next = vec![f64::NEG_INFINITY; t_tags];
            let mut ptr = vec![0usize; t_tags];
            for j in 0..t_tags {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for (i, &d) in dp.iter().enumerate() {
                    let s = d + tr(i, j);
                    if s > best {
                        best = s;
                        arg = i;
                    }
                }
                next[j] = best + e[j];
                ptr[j] = arg;
            }
            dp = next;
            back.push(ptr);
        }

        let mut best = f64::NEG_INFINITY;
        let mut arg = 0usize;
        for (j, &d) in dp.iter().enumerate() {
            let s = d + tr(j, self.stop());
            if s > best {
                best = s;
                arg = j;
            }
        }

        let mut path = vec![arg];
        for ptr in back.iter().rev() {
            path.push(ptr[*path.last().unwrap()]);
        }
        path.reverse();
        (path, best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{central_diff_param, grads_close, rel_close};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive path enumeration: score and rank every one of the T^n
    /// paths directly.
    mod oracle {
        pub struct Scored {
            pub log_z: f64,
            pub best_path: Vec<usize>,
            pub best_score: f64,
        }

        pub fn enumerate(emissions: &[Vec<f64>], trans: &[Vec<f64>], t_tags: usize) -> Scored {
            let n = emissions.len();
            let start = t_tags;
            let stop = t_tags + 1;
            let n_paths = t_tags.pow(n as u32);
            let mut log_z = f64::NEG_INFINITY;
            let mut best_score = f64::NEG_INFINITY;
            let mut best_path = Vec::new();
            for code in 0..n_paths {
                let mut c = code;
                let path: Vec<usize> = (0..n)
                    .map(|_| {
                        let y = c % t_tags;
                        c /= t_tags;
                        y
                    })
                    .collect();
                let mut score = trans[start][path[0]] + emissions[0][path[0]];
                for t in 1..n {
                    score += trans[path[t - 1]][path[t]] + emissions[t][path[t]];
                }
                score += trans[path[n - 1]][stop];
                // log_z accumulation via pairwise logsumexp
                let (a, b) = if log_z > score { (log_z, score) } else { (score, log_z) };
                log_z = if b == f64::NEG_INFINITY { a } else { a + (b - a).exp().ln_1p() };
                if score > best_score {
                    best_score = score;
                    best_path = path;
                }
            }
            Scored { log_z, best_path, best_score }
        }
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        t_tags: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let emissions: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..t_tags).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let trans: Vec<Vec<f64>> = (0..t_tags + 2)
            .map(|_| (0..t_tags + 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (emissions, trans)
    }

    fn install(params: &mut ParamSet, n: usize, t_tags: usize, emissions: &[Vec<f64>], trans: &[Vec<f64>]) -> (ParamId, ParamId) {
        let flat_e: Vec<f64> = emissions.iter().flatten().copied().collect();
        let e = params.register("e", Tensor::from_values(n, t_tags, flat_e).unwrap());
        let flat_t: Vec<f64> = trans.iter().flatten().copied().collect();
        let tr = params.register("crf.transitions", Tensor::from_values(t_tags + 2, t_tags + 2, flat_t).unwrap());
        (e, tr)
    }

    fn crf_for(t_tags: usize, transitions: ParamId) -> CrfModel {
        CrfModel {
            n_tags: t_tags,
            proj_w: ParamId(usize::MAX - 1), // unused in these tests
            proj_b: ParamId(usize::MAX - 1),
            transitions,
            decode_mask: None,
        }
    }

    /// Tape loss for an instance stored in `params`.
    fn loss_value(params: &ParamSet, e: ParamId, crf: &CrfModel, n: usize, t_tags: usize, gold: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let emat = tape.param(params, e);
        let emis: Vec<NodeId> = (0..n)
            .map(|t| {
                let b = tape.block(emat, t, 0, 1, t_tags).unwrap();
                tape.reshape(b, t_tags, 1).unwrap()
            })
            .collect();
        let l = crf.log_likelihood_loss(&mut tape, params, &emis, gold).unwrap();
        tape.scalar_value(l)
    }

    #[test]
    fn forward_log_z_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let n = rng.gen_range(1..=5);
            let t_tags = rng.gen_range(2..=4);
            let (emissions, trans) = random_instance(&mut rng, n, t_tags);
            let mut params = ParamSet::new();
            let (e, tr) = install(&mut params, n, t_tags, &emissions, &trans);
            let crf = crf_for(t_tags, tr);
            let gold = vec![0; n];
            let loss = loss_value(&params, e, &crf, n, t_tags, &gold);

            let oracle = oracle::enumerate(&emissions, &trans, t_tags);
            // loss = logZ - score(gold=all zeros)
            let mut gold_score = trans[t_tags][0] + emissions[0][0];
            for e in emissions.iter().skip(1) {
                gold_score += trans[0][0] + e[0];
            }
            gold_score += trans[0][t_tags + 1];
            let log_z = loss + gold_score;
            assert!(
                (log_z - oracle.log_z).abs() < 1e-8,
                "trial {trial}: forward logZ {log_z} vs enumeration {}",
                oracle.log_z
            );
            assert!(loss >= -1e-12, "loss must be non-negative, got {loss}");
        }
    }

    #[test]
    fn viterbi_matches_brute_force_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.gen_range(1..=5);
            let t_tags = rng.gen_range(2..=4);
            let (emissions, trans) = random_instance(&mut rng, n, t_tags);
            let flat: Vec<f64> = trans.iter().flatten().copied().collect();
            let trans_t = Tensor::from_values(t_tags + 2, t_tags + 2, flat).unwrap();
            let crf = CrfModel {
                n_tags: t_tags,
                proj_w: ParamId(0),
                proj_b: ParamId(0),
                transitions: ParamId(0),
                decode_mask: None,
            };
            let (path, score) = crf.viterbi_decode(&emissions, &trans_t);
            let oracle = oracle::enumerate(&emissions, &trans, t_tags);
            assert_eq!(path, oracle.best_path, "trial {trial}");
            assert!((score - oracle.best_score).abs() < 1e-10);
            assert!(score <= oracle.log_z + 1e-10, "path score cannot exceed logZ");
        }
    }

    #[test]
    fn single_token_two_tags_closed_form() {
        // No transitions: loss = logsumexp(a, b) - a for gold tag 0.
        let (a, b) = (0.7, -0.4);
        let mut params = ParamSet::new();
        let zero_trans = vec![vec![0.0; 4]; 4];
        let (e, tr) = install(&mut params, 1, 2, &[vec![a, b]], &zero_trans);
        let crf = crf_for(2, tr);
        let loss = loss_value(&params, e, &crf, 1, 2, &[0]);
        let expect = (a.exp() + b.exp()).ln() - a;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_give_uniform_path_probability() {
        let t_tags = 3;
        let n = 4;
        let emissions = vec![vec![0.25; t_tags]; n];
        let trans = vec![vec![0.0; t_tags + 2]; t_tags + 2];
        let mut params = ParamSet::new();
        let (e, tr) = install(&mut params, n, t_tags, &emissions, &trans);
        let crf = crf_for(t_tags, tr);
        let loss = loss_value(&params, e, &crf, n, t_tags, &[1, 2, 0, 1]);
        let p = (-loss).exp();
        let expect = 1.0 / (t_tags as f64).powi(n as i32);
        assert!((p - expect).abs() < 1e-12, "gold probability {p} vs {expect}");
    }

    #[test]
    fn out_of_range_gold_tag_is_an_error() {
        let mut params = ParamSet::new();
        let (e, tr) = install(&mut params, 1, 2, &[vec![0.0, 0.0]], &vec![vec![0.0; 4]; 4]);
        let crf = crf_for(2, tr);
        let mut tape = Tape::new();
        let emat = tape.param(&params, e);
        let b = tape.block(emat, 0, 0, 1, 2).unwrap();
        let ev = tape.reshape(b, 2, 1).unwrap();
        assert!(crf.log_likelihood_loss(&mut tape, &params, &[ev], &[5]).is_err());
    }

    #[test]
    fn forced_chain_is_decoded() {
        // Transitions allow only START->1->0->2->STOP.
        let t_tags = 3;
        let neg = -1e30;
        let mut trans = vec![vec![neg; t_tags + 2]; t_tags + 2];
        trans[3][1] = 0.0; // START -> 1
        trans[1][0] = 0.0;
        trans[0][2] = 0.0;
        trans[2][4] = 0.0; // 2 -> STOP
        let emissions = vec![vec![0.0; t_tags]; 3];
        let flat: Vec<f64> = trans.iter().flatten().copied().collect();
        let trans_t = Tensor::from_values(t_tags + 2, t_tags + 2, flat).unwrap();
        let crf = CrfModel {
            n_tags: t_tags,
            proj_w: ParamId(0),
            proj_b: ParamId(0),
            transitions: ParamId(0),
            decode_mask: None,
        };
        let (path, _) = crf.viterbi_decode(&emissions, &trans_t);
        assert_eq!(path, vec![1, 0, 2]);
    }

    #[test]
    fn mask_blocks_illegal_bio_bigrams() {
        let scheme = TagScheme::conll();
        let mask = TransitionMask::from_scheme(&scheme);
        let t_tags = scheme.len();
        // Strongly favor an illegal pair: B-LOC (1) followed by I-PER (8).
        let mut emissions = vec![vec![-5.0; t_tags]; 2];
        emissions[0][1] = 10.0;
        emissions[1][8] = 10.0;
        let trans_t = Tensor::zeros(t_tags + 2, t_tags + 2);
        let mut crf = CrfModel {
            n_tags: t_tags,
            proj_w: ParamId(0),
            proj_b: ParamId(0),
            transitions: ParamId(0),
            decode_mask: Some(mask),
        };
        let (path, _) = crf.viterbi_decode(&emissions, &trans_t);
        for w in path.windows(2) {
            let (p, ty) = scheme.parts(w[1]);
            if p == 'I' {
                let (pp, pty) = scheme.parts(w[0]);
                assert!((pp == 'B' || pp == 'I') && pty == ty, "illegal bigram {w:?}");
            }
        }
        // Unmasked, the illegal pair wins.
        crf.decode_mask = None;
        let (raw, _) = crf.viterbi_decode(&emissions, &trans_t);
        assert_eq!(raw, vec![1, 8]);
    }

    #[test]
    fn ties_break_toward_lower_tag_id() {
        let t_tags = 3;
        let emissions = vec![vec![0.0; t_tags]; 2];
        let trans_t = Tensor::zeros(t_tags + 2, t_tags + 2);
        let crf = CrfModel {
            n_tags: t_tags,
            proj_w: ParamId(0),
            proj_b: ParamId(0),
            transitions: ParamId(0),
            decode_mask: None,
        };
        let (path, _) = crf.viterbi_decode(&emissions, &trans_t);
        assert_eq!(path, vec![0, 0]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = rng.gen_range(2..=4);
            let t_tags = 3;
            let (emissions, trans) = random_instance(&mut rng, n, t_tags);
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..t_tags)).collect();
            let mut params = ParamSet::new();
            let (e, tr) = install(&mut params, n, t_tags, &emissions, &trans);
            let crf = crf_for(t_tags, tr);

            let forward = |ps: &ParamSet| loss_value(ps, e, &crf, n, t_tags, &gold);

            let mut tape = Tape::new();
            let emat = tape.param(&params, e);
            let emis: Vec<NodeId> = (0..n)
                .map(|t| {
                    let b = tape.block(emat, t, 0, 1, t_tags).unwrap();
                    tape.reshape(b, t_tags, 1).unwrap()
                })
                .collect();
            let l = crf.log_likelihood_loss(&mut tape, &params, &emis, &gold).unwrap();
            tape.backward(l).unwrap();
            tape.apply_param_grads(&mut params);

            for name in ["e", "crf.transitions"] {
                let pid = params.id(name).unwrap();
                let analytic = params.get(pid).value.grad.clone().unwrap();
                let numeric = central_diff_param(&mut params, pid, 1e-5, forward);
                assert!(
                    grads_close(&analytic, &numeric, 1e-4),
                    "gradient mismatch for {name}"
                );
            }
            params.zero_grads();
        }
    }

    #[test]
    fn fusion_produces_output_dim_vectors_and_checks_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ParamSet::new();
        let cfg = FusionConfig::for_rep_dim(6, 5);
        let fusion = Fusion::init(&mut params, &cfg, &mut rng);
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, rng: &mut ChaCha8Rng| {
            let vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            tape.leaf(6, 1, vals).unwrap()
        };
        let h: Vec<NodeId> = (0..3).map(|_| mk(&mut tape, &mut rng)).collect();
        let d: Vec<NodeId> = (0..3).map(|_| mk(&mut tape, &mut rng)).collect();
        let c: Vec<NodeId> = (0..3).map(|_| mk(&mut tape, &mut rng)).collect();
        let out = fusion.fuse(&mut tape, &params, &h, &d, &c).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert_eq!(tape.shape(*o), (10, 1));
        }
        assert!(fusion.fuse(&mut tape, &params, &h, &d[..2], &c).is_err());
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut params = ParamSet::new();
        let cfg = FusionConfig::for_rep_dim(3, 3);
        let fusion = Fusion::init(&mut params, &cfg, &mut rng);
        let seqs: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                (0..2)
                    .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let probe: Vec<f64> = (0..cfg.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |ps: &ParamSet| -> f64 {
            let mut tape = Tape::new();
            let lift = |tape: &mut Tape, seq: &Vec<Vec<f64>>| -> Vec<NodeId> {
                seq.iter().map(|v| tape.leaf(3, 1, v.clone()).unwrap()).collect()
            };
            let h = lift(&mut tape, &seqs[0]);
            let d = lift(&mut tape, &seqs[1]);
            let c = lift(&mut tape, &seqs[2]);
            let out = fusion.fuse(&mut tape, ps, &h, &d, &c).unwrap();
            let pv = tape.leaf(cfg.output_dim(), 1, probe.clone()).unwrap();
            let terms: Vec<NodeId> = out.iter().map(|&o| tape.dot(o, pv).unwrap()).collect();
            let s = tape.add_list(&terms).unwrap();
            tape.scalar_value(s)
        };

        // Analytic pass.
        {
            let mut tape = Tape::new();
            let lift = |tape: &mut Tape, seq: &Vec<Vec<f64>>| -> Vec<NodeId> {
                seq.iter().map(|v| tape.leaf(3, 1, v.clone()).unwrap()).collect()
            };
            let h = lift(&mut tape, &seqs[0]);
            let d = lift(&mut tape, &seqs[1]);
            let c = lift(&mut tape, &seqs[2]);
            let out = fusion.fuse(&mut tape, &params, &h, &d, &c).unwrap();
            let pv = tape.leaf(cfg.output_dim(), 1, probe.clone()).unwrap();
            let terms: Vec<NodeId> = out.iter().map(|&o| tape.dot(o, pv).unwrap()).collect();
            let s = tape.add_list(&terms).unwrap();
            tape.backward(s).unwrap();
            tape.apply_param_grads(&mut params);
        }

        let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let pid = params.id(&name).unwrap();
            let analytic = params.get(pid).value.grad.clone().unwrap();
            let numeric = central_diff_param(&mut params, pid, 1e-5, run);
            assert!(grads_close(&analytic, &numeric, 1e-4), "mismatch for {name}");
        }
    }

    #[test]
    fn loss_probability_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = rng.gen_range(1..=5);
            let t_tags = rng.gen_range(2..=4);
            let (emissions, trans) = random_instance(&mut rng, n, t_tags);
            let mut params = ParamSet::new();
            let (e, tr) = install(&mut params, n, t_tags, &emissions, &trans);
            let crf = crf_for(t_tags, tr);
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..t_tags)).collect();
            let loss = loss_value(&params, e, &crf, n, t_tags, &gold);
            let p = (-loss).exp();
            assert!(p > 0.0 && p <= 1.0 + 1e-12, "exp(-loss) = {p} out of (0, 1]");
            assert!(rel_close(loss.max(0.0), loss, 1e-9), "loss {loss} must be >= 0");
        }
    }
}
