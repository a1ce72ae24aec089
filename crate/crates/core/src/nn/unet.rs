//! 1-D U-Net over a single-channel signal, with cross-attention to a
//! conditioning token after every convolution stage.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Conv1d, CrossAttention, Init};
use super::params::{Graph, ParamStore};
use super::tape::Var;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Signal length; must be divisible by 4.
    pub len: usize,
    pub width: usize,
    pub d_cond: usize,
    pub n_heads: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    conv: Conv1d,
    xattn: CrossAttention,
}

impl Stage {
    fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Var, time: Var) -> Result<Var> {
        let h = self.conv.forward(g, x)?;
        let h = g.tape.gelu(h);
        self.xattn.forward(g, h, cond, time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet1d {
    pub config: UNetConfig,
    stages: Vec<Stage>,
    out: Conv1d,
}

impl UNet1d {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: UNetConfig, rng: &mut R) -> Result<Self> {
        if config.len == 0 || config.len % 4 != 0 {
            bail!(InvalidArgument, "signal length {} is not divisible by 4", config.len);
        }
        let c = config.width;
        // (in, out) channels: enc1, enc2, mid, dec2 (after skip concat), dec1
        let plan = [(1, c), (c, 2 * c), (2 * c, 2 * c), (4 * c, c), (2 * c, c)];
        let mut stages = Vec::with_capacity(plan.len());
        for (i, (ci, co)) in plan.into_iter().enumerate() {
            stages.push(Stage {
                conv: Conv1d::new(store, &format!("{name}.s{i}.conv"), ci, co, config.kernel, Init::FanIn, rng),
                xattn: CrossAttention::new(store, &format!("{name}.s{i}.xattn"), co, config.d_cond, config.n_heads, rng)?,
            });
        }
        let out = Conv1d::new(store, &format!("{name}.out"), c, 1, config.kernel, Init::Zero, rng);
        Ok(Self { config, stages, out })
    }

    /// `x` is `len x 1`; `cond` and `time` are `1 x d_cond`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Var, time: Var) -> Result<Var> {
        if g.tape.shape(x) != (self.config.len, 1) {
            bail!(ShapeMismatch, "unet input {:?}, expected ({}, 1)", g.tape.shape(x), self.config.len);
        }
        let s = &self.stages;
        let h1 = s[0].forward(g, x, cond, time)?;
        let d1 = g.tape.pool_rows2(h1)?;
        let h2 = s[1].forward(g, d1, cond, time)?;
        let d2 = g.tape.pool_rows2(h2)?;
        let m = s[2].forward(g, d2, cond, time)?;
        let u2 = g.tape.repeat_rows2(m);
        let u2 = g.tape.concat_cols(&[u2, h2])?;
        let h3 = s[3].forward(g, u2, cond, time)?;
        let u1 = g.tape.repeat_rows2(h3);
        let u1 = g.tape.concat_cols(&[u1, h1])?;
        let h4 = s[4].forward(g, u1, cond, time)?;
        self.out.forward(g, h4)
    }
}
