use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::lecun;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, seed: u64, bias: bool) -> Result<Self> {
        let wn = format!("{name}.weight");
        let weight = store.add(wn.clone(), lecun(seed, &wn, &[fan_in, fan_out], fan_in), true)?;
        let bias = match bias {
            true => Some(store.add(format!("{name}.bias"), Tensor::zeros([fan_out]), true)?),
            false => None,
        };
        Ok(Linear { weight, bias })
    }

    fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        tape.linear(x, b.var(self.weight), self.bias.map(|id| b.var(id)))
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full([dim], 1.0), true)?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([dim]), true)?;
        Ok(Norm { gamma, beta })
    }

    fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        tape.layer_norm(x, b.var(self.gamma), b.var(self.beta), LAYER_NORM_EPS)
    }
}

/// Pre-norm encoder layer over `[T, D]` tokens:
/// `x ← x + MHSA(LN(x))`, then `x ← x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    heads: usize,
    dim: usize,
    ln1: Norm,
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    ln2: Norm,
    mlp_in: Linear,
    mlp_out: Linear,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, mlp_dim: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!("token dim {dim} is not divisible by {heads} heads")));
        }
        let lin = |store: &mut ParamStore, part: &str, i, o| Linear::new(store, &format!("{prefix}.{part}"), i, o, seed, true);
        Ok(EncoderLayer {
            heads,
            dim,
            ln1: Norm::new(store, &format!("{prefix}.ln1"), dim)?,
            query: lin(store, "query", dim, dim)?,
            // A key bias shifts every score of a query equally, so softmax ignores it.
            key: Linear::new(store, &format!("{prefix}.key"), dim, dim, seed, false)?,
            value: lin(store, "value", dim, dim)?,
            output: lin(store, "output", dim, dim)?,
            ln2: Norm::new(store, &format!("{prefix}.ln2"), dim)?,
            mlp_in: lin(store, "mlp.fc1", dim, mlp_dim)?,
            mlp_out: lin(store, "mlp.fc2", mlp_dim, dim)?,
        })
    }

    /// Parameters whose zeroing turns the layer into the identity.
    pub fn residual_outputs(&self) -> Vec<ParamId> {
        let linears = [self.output, self.mlp_out];
        linears.iter().flat_map(|l| std::iter::once(l.weight).chain(l.bias)).collect()
    }

    fn split_heads(&self, tape: &mut Tape, x: Var, t: usize) -> Result<Var> {
        let x = tape.reshape(x, &[t, self.heads, self.dim / self.heads])?;
        tape.permute(x, &[1, 0, 2])
    }

    /// Multi-head self-attention over the token axis. Returns the projected
    /// output `[T, D]` and the attention matrix `[heads, T, T]`.
    pub fn self_attention(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<(Var, Var)> {
        let t = tape.shape(x)[0];
        let q = self.query.forward(tape, b, x)?;
        let k = self.key.forward(tape, b, x)?;
        let v = self.value.forward(tape, b, x)?;
        let q = self.split_heads(tape, q, t)?;
        let k = self.split_heads(tape, k, t)?;
        let v = self.split_heads(tape, v, t)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax(scores)?;
        let ctx = tape.matmul(attn, v)?;
        let ctx = tape.permute(ctx, &[1, 0, 2])?;
        let ctx = tape.reshape(ctx, &[t, self.dim])?;
        Ok((self.output.forward(tape, b, ctx)?, attn))
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("encoder_layer", shape, &[self.dim]));
        }
        let h = self.ln1.forward(tape, b, x)?;
        let (a, attn) = self.self_attention(tape, b, h)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, b, x)?;
        let h = self.mlp_in.forward(tape, b, h)?;
        let h = tape.relu(h)?;
        let h = self.mlp_out.forward(tape, b, h)?;
        Ok((tape.add(x, h)?, attn))
    }
}
