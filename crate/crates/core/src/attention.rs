//! Scaled dot-product attention with an optional multiplicative geometric gate.
//!
//! For one head the normalised weights are
//!
//! ```text
//! θ[n,p] = g[n,p]·exp(θ_A[n,p]) / Σ_l g[n,l]·exp(θ_A[n,l]),   g = θ_G + eps_g
//! ```
//!
//! which equals `softmax(θ_A + ln g)` row-wise; that is how it is evaluated,
//! so the row max is subtracted before exponentiating. `eps_g` keeps rows
//! well defined when the ReLU gate zeroes a whole row.

use crate::error::{Error, Result};
use crate::tensor::{Dropout, Graph, Mask, Tensor, Var};

pub const DEFAULT_EPS_G: f64 = 1e-6;

/// `θ_A = Q·Kᵀ / √d_k`
pub fn scaled_logits(graph: &mut Graph, q: Var, k: Var) -> Result<Var> {
    let (dq, dk) = (graph.value(q).matrix_dims().1, graph.value(k).matrix_dims().1);
    if dq != dk {
        return Err(Error::Dimension {
            op: "scaled_logits",
            lhs: graph.shape(q).to_vec(),
            rhs: graph.shape(k).to_vec(),
        });
    }
    let kt = graph.transpose(k)?;
    let qk = graph.matmul(q, kt)?;
    graph.scale(qk, 1.0 / (dk as f64).sqrt())
}

/// Gated, row-normalised weights for one head. Without a gate this is the
/// plain masked softmax.
pub fn gated_attention_weights(
    graph: &mut Graph,
    theta_a: Var,
    theta_g: Option<Var>,
    mask: Option<&Mask>,
    eps_g: f64,
) -> Result<Var> {
    let Some(gate) = theta_g else {
        return graph.softmax_rows(theta_a, mask);
    };
    if eps_g <= 0.0 {
        return Err(Error::Config(format!("eps_g must be positive, got {eps_g}")));
    }
    let floored = graph.add_scalar(gate, eps_g)?;
    let log_gate = graph.log(floored)?;
    let logits = graph.add(theta_a, log_gate)?;
    graph.softmax_rows(logits, mask)
}

/// Value-level wrapper around [`gated_attention_weights`].
pub fn gated_weights(theta_a: &Tensor, theta_g: Option<&Tensor>, mask: Option<&Mask>, eps_g: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let a = g.constant(theta_a.clone());
    let gate = theta_g.map(|t| g.constant(t.clone()));
    let w = gated_attention_weights(&mut g, a, gate, mask, eps_g)?;
    Ok(g.value(w).clone())
}

/// Projection weights of one multi-head attention block, as graph handles.
/// Head `h` uses `w_q[h]`, `w_k[h]`, `w_v[h]` (each `d_model × d_k`);
/// `w_o` is `(H·d_k) × d_model`.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
    pub w_o: Var,
}

impl HeadParams {
    pub fn num_heads(&self) -> usize {
        self.w_q.len()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    graph: &mut Graph,
    x_q: Var,
    x_kv: Var,
    params: &HeadParams,
    theta_g: Option<&[Var]>,
    mask: Option<&Mask>,
    eps_g: f64,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let heads = params.num_heads();
    if params.w_k.len() != heads || params.w_v.len() != heads || heads == 0 {
        return Err(Error::Config("inconsistent head parameter counts".into()));
    }
    if let Some(gates) = theta_g {
        let (nq, nk) = (graph.value(x_q).matrix_dims().0, graph.value(x_kv).matrix_dims().0);
        if gates.len() != heads {
            return Err(Error::Config(format!("{} geometric gates for {heads} heads", gates.len())));
        }
        for &gate in gates {
            if graph.shape(gate) != [nq, nk] || nq != nk {
                return Err(Error::Dimension {
                    op: "multi_head_attention",
                    lhs: vec![nq, nk],
                    rhs: graph.shape(gate).to_vec(),
                });
            }
        }
    }
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = graph.matmul(x_q, params.w_q[h])?;
        let k = graph.matmul(x_kv, params.w_k[h])?;
        let v = graph.matmul(x_kv, params.w_v[h])?;
        let logits = scaled_logits(graph, q, k)?;
        let gate = theta_g.map(|g| g[h]);
        let mut weights = gated_attention_weights(graph, logits, gate, mask, eps_g)?;
        if let Some(d) = dropout.as_deref_mut() {
            weights = d.apply(graph, weights)?;
        }
        outs.push(graph.matmul(weights, v)?);
    }
    let concat = if outs.len() == 1 { outs[0] } else { graph.concat_cols(&outs)? };
    graph.matmul(concat, params.w_o)
}

/// Decoder mask: position `i` may attend to `j` iff `j <= i`.
pub fn causal_mask(len: usize) -> Mask {
    let allowed = (0..len).flat_map(|i| (0..len).map(move |j| j <= i)).collect();
    Mask::new(len, len, allowed).expect("square mask")
}
