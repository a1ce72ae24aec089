//! Layers over a [`Graph`]. Tokens are rows, features are columns, and
//! weights right-multiply: `y = x W + b`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::mat::Mat;
use super::params::{fan_in_uniform, Graph, ParamId, ParamStore};
use super::tape::Var;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    FanIn,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = match init {
            Init::FanIn => fan_in_uniform(d_in, d_out, rng),
            Init::Zero => Mat::zeros(d_in, d_out),
        };
        let w = store.add(&format!("{name}.w"), w);
        let b = bias.then(|| store.add(&format!("{name}.b"), Mat::zeros(1, d_out)));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(&format!("{name}.gain"), Mat::filled(1, d, 1.0));
        let bias = store.add(&format!("{name}.bias"), Mat::zeros(1, d));
        Self { gain, bias, eps: 1e-5 }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let n = g.tape.layer_norm_rows(x, self.eps);
        let (ga, be) = (g.param(self.gain), g.param(self.bias));
        let y = g.tape.mul_row(n, ga)?;
        g.tape.add_row(y, be)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        out_init: Init,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, d_hidden, true, Init::FanIn, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), d_hidden, d_out, true, out_init, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.tape.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention, `d_atten = d_model / n_heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    pub d_query_in: usize,
    pub d_context_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_out: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: AttentionDims,
        out_init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.n_heads == 0 || dims.d_model % dims.n_heads != 0 {
            bail!(InvalidArgument, "d_model {} not divisible by {} heads", dims.d_model, dims.n_heads);
        }
        Ok(Self {
            wq: Linear::new(store, &format!("{name}.q"), dims.d_query_in, dims.d_model, false, Init::FanIn, rng),
            wk: Linear::new(store, &format!("{name}.k"), dims.d_context_in, dims.d_model, false, Init::FanIn, rng),
            wv: Linear::new(store, &format!("{name}.v"), dims.d_context_in, dims.d_model, false, Init::FanIn, rng),
            wo: Linear::new(store, &format!("{name}.o"), dims.d_model, dims.d_out, true, out_init, rng),
            n_heads: dims.n_heads,
            d_model: dims.d_model,
        })
    }

    pub fn d_atten(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Queries from `x`, keys and values from `context`. Returns the output
    /// and the per-head attention matrices.
    pub fn forward_with_weights(&self, g: &mut Graph<'_>, x: Var, context: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.wq.forward(g, x)?;
        let k = self.wk.forward(g, context)?;
        let v = self.wv.forward(g, context)?;
        let da = self.d_atten();
        let scale = 1.0 / (da as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.tape.slice_cols(q, h * da, da)?;
            let kh = g.tape.slice_cols(k, h * da, da)?;
            let vh = g.tape.slice_cols(v, h * da, da)?;
            let s = g.tape.matmul_t(qh, kh)?;
            let s = g.tape.scale(s, scale);
            let a = g.tape.softmax_rows(s);
            heads.push(g.tape.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.tape.concat_cols(&heads)? };
        Ok((self.wo.forward(g, cat)?, weights))
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, context: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, x, context)?.0)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = AttentionDims { d_query_in: d_model, d_context_in: d_model, d_model, n_heads, d_out: d_model };
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            attn: Attention::new(store, &format!("{name}.attn"), dims, Init::Zero, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d_model, mlp_ratio * d_model, d_model, Init::Zero, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.tape.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.tape.add(x, m)
    }
}

/// Cross-attention with residual: `x + Attn(x, P(s) + C(loc))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    pub attn: Attention,
}

impl CrossAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_features: usize,
        d_cond: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = AttentionDims {
            d_query_in: d_features,
            d_context_in: d_cond,
            d_model: d_cond,
            n_heads,
            d_out: d_features,
        };
        Ok(Self { attn: Attention::new(store, name, dims, Init::FanIn, rng)? })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond_embed: Var, time_embed: Var) -> Result<Var> {
        let ctx = g.tape.add(cond_embed, time_embed)?;
        let a = self.attn.forward(g, x, ctx)?;
        g.tape.add(x, a)
    }
}

/// Same-padded 1-D convolution over rows (positions) with channels as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub lin: Linear,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        Self { lin: Linear::new(store, name, kernel * c_in, c_out, true, init, rng), kernel }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let cols = g.tape.im2col(x, self.kernel)?;
        self.lin.forward(g, cols)
    }
}
