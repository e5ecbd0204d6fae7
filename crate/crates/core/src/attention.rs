//! Attention over supporting contextual representations plus the gating
//! block that merges the attended evidence with the local representation.
//!
//! Scores follow the additive form e_k = v' tanh(Wq h + We ev_k + b); the
//! attended summary is the softmax-weighted average of the evidence. The
//! gate computes r and z sigmoids from (H, h), a candidate
//! g = tanh(Wg h + z .* (Wge H + bg)), and returns r .* h + (1 - r) .* g.
//!
//! Document-level and corpus-level use two independent instances of this
//! block. With no evidence the attended summary falls back to the zero
//! vector and the gate reduces to a learned transform of h alone.

use rand::Rng;

use crate::error::Result;
use crate::numeric::{NodeId, ParamId, ParamSet, Tape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_query: ParamId,
    pub w_evidence: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub w_ev_r: ParamId,
    pub w_q_r: ParamId,
    pub b_r: ParamId,
    pub w_ev_z: ParamId,
    pub w_q_z: ParamId,
    pub b_z: ParamId,
    pub w_q_g: ParamId,
    pub w_ev_g: ParamId,
    pub b_g: ParamId,
}

/// One evidence level: attention parameters plus gate parameters.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub level: String,
    pub rep_dim: usize,
    pub attn_dim: usize,
    pub attn: AttentionParams,
    pub gate: GateParams,
}

impl AttentionBlock {
    pub fn init(
        params: &mut ParamSet,
        level: &str,
        rep_dim: usize,
        attn_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let attn = AttentionParams {
            w_query: params
                .register(&format!("attn.{level}.w_query"), Tensor::xavier(attn_dim, rep_dim, rng)),
            w_evidence: params
                .register(&format!("attn.{level}.w_evidence"), Tensor::xavier(attn_dim, rep_dim, rng)),
            bias: params.register(&format!("attn.{level}.bias"), Tensor::zeros(attn_dim, 1)),
            v: params.register(&format!("attn.{level}.v"), Tensor::xavier(attn_dim, 1, rng)),
        };
        let gate = GateParams {
            w_ev_r: params
                .register(&format!("gate.{level}.w_ev_r"), Tensor::xavier(rep_dim, rep_dim, rng)),
            w_q_r: params
                .register(&format!("gate.{level}.w_q_r"), Tensor::xavier(rep_dim, rep_dim, rng)),
            b_r: params.register(&format!("gate.{level}.b_r"), Tensor::zeros(rep_dim, 1)),
            w_ev_z: params
                .register(&format!("gate.{level}.w_ev_z"), Tensor::xavier(rep_dim, rep_dim, rng)),
            w_q_z: params
                .register(&format!("gate.{level}.w_q_z"), Tensor::xavier(rep_dim, rep_dim, rng)),
            b_z: params.register(&format!("gate.{level}.b_z"), Tensor::zeros(rep_dim, 1)),
            w_q_g: params
                .register(&format!("gate.{level}.w_q_g"), Tensor::xavier(rep_dim, rep_dim, rng)),
            w_ev_g: params
                .register(&format!("gate.{level}.w_ev_g"), Tensor::xavier(rep_dim, rep_dim, rng)),
            b_g: params.register(&format!("gate.{level}.b_g"), Tensor::zeros(rep_dim, 1)),
        };
        AttentionBlock { level: level.to_string(), rep_dim, attn_dim, attn, gate }
    }

    pub fn bind(params: &ParamSet, level: &str, rep_dim: usize, attn_dim: usize) -> Result<Self> {
        let get = |name: String| {
            params
                .id(&name)
                .ok_or_else(|| crate::Error::Checkpoint(format!("missing parameter {name}")))
        };
        Ok(AttentionBlock {
            level: level.to_string(),
            rep_dim,
            attn_dim,
            attn: AttentionParams {
                w_query: get(format!("attn.{level}.w_query"))?,
                w_evidence: get(format!("attn.{level}.w_evidence"))?,
                bias: get(format!("attn.{level}.bias"))?,
                v: get(format!("attn.{level}.v"))?,
            },
            gate: GateParams {
                w_ev_r: get(format!("gate.{level}.w_ev_r"))?,
                w_q_r: get(format!("gate.{level}.w_q_r"))?,
                b_r: get(format!("gate.{level}.b_r"))?,
                w_ev_z: get(format!("gate.{level}.w_ev_z"))?,
                w_q_z: get(format!("gate.{level}.w_q_z"))?,
                b_z: get(format!("gate.{level}.b_z"))?,
                w_q_g: get(format!("gate.{level}.w_q_g"))?,
                w_ev_g: get(format!("gate.{level}.w_ev_g"))?,
                b_g: get(format!("gate.{level}.b_g"))?,
            },
        })
    }

    /// Softmax-weighted average of the evidence vectors. Returns the
    /// attended summary and the weights (empty when there is no evidence,
    /// in which case the summary is the zero vector).
    pub fn attend(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        h: NodeId,
        evidence: &[NodeId],
    ) -> Result<(NodeId, Vec<f64>)> {
        if evidence.is_empty() {
            return Ok((tape.zeros(self.rep_dim, 1), Vec::new()));
        }
        let wq = tape.param(params, self.attn.w_query);
        let wev = tape.param(params, self.attn.w_evidence);
        let b = tape.param(params, self.attn.bias);
        let v = tape.param(params, self.attn.v);

        let qpart = tape.matmul(wq, h)?;
        let mut scores = Vec::with_capacity(evidence.len());
        for &ev in evidence {
            let epart = tape.matmul(wev, ev)?;
            let lin = tape.add_list(&[qpart, epart, b])?;
            let act = tape.tanh(lin)?;
            scores.push(tape.dot(v, act)?);
        }
        let stacked = tape.concat_rows(&scores)?;
        let alphas = tape.softmax_cols(stacked)?;
        let ev_mat = tape.concat_cols(evidence)?;
        let summary = tape.matmul(ev_mat, alphas)?;
        Ok((summary, tape.values(alphas).to_vec()))
    }

    /// r/z/g/D equations, in order.
    pub fn gate(&self, tape: &mut Tape, params: &ParamSet, h: NodeId, attended: NodeId) -> Result<NodeId> {
        let g = &self.gate;
        let w_ev_r = tape.param(params, g.w_ev_r);
        let w_q_r = tape.param(params, g.w_q_r);
        let b_r = tape.param(params, g.b_r);
        let w_ev_z = tape.param(params, g.w_ev_z);
        let w_q_z = tape.param(params, g.w_q_z);
        let b_z = tape.param(params, g.b_z);
        let w_q_g = tape.param(params, g.w_q_g);
        let w_ev_g = tape.param(params, g.w_ev_g);
        let b_g = tape.param(params, g.b_g);

        let r_ev = tape.matmul(w_ev_r, attended)?;
        let r_q = tape.matmul(w_q_r, h)?;
        let r_lin = tape.add_list(&[r_ev, r_q, b_r])?;
        let r = tape.sigmoid(r_lin)?;

        let z_ev = tape.matmul(w_ev_z, attended)?;
        let z_q = tape.matmul(w_q_z, h)?;
        let z_lin = tape.add_list(&[z_ev, z_q, b_z])?;
        let z = tape.sigmoid(z_lin)?;

        let g_ev = tape.matmul(w_ev_g, attended)?;
        let g_inner = tape.add(g_ev, b_g)?;
        let zg = tape.mul(z, g_inner)?;
        let g_q = tape.matmul(w_q_g, h)?;
        let g_lin = tape.add(g_q, zg)?;
        let gv = tape.tanh(g_lin)?;

        let rh = tape.mul(r, h)?;
        let r_comp = tape.one_minus(r)?;
        let rg = tape.mul(r_comp, gv)?;
        tape.add(rh, rg)
    }

    /// Attend over the evidence then gate against the local representation.
    pub fn evidence_vector(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        h: NodeId,
        evidence: &[NodeId],
    ) -> Result<(NodeId, Vec<f64>)> {
        let (attended, alphas) = self.attend(tape, params, h, evidence)?;
        let gated = self.gate(tape, params, h, attended)?;
        Ok((gated, alphas))
    }
}
