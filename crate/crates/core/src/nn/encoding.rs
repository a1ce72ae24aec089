#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Init, Linear};
use super::mat::Mat;
use super::params::{Graph, ParamStore};
use super::tape::Var;
use crate::error::{bail, Result};

/// Sinusoidal encoding: `sin(pos / 10000^(2i/d))` at `2i`, `cos` at `2i+1`.
pub fn positional_encoding(pos: usize, d_model: usize) -> Result<Vec<f64>> {
    if d_model == 0 || d_model % 2 != 0 {
        bail!(InvalidArgument, "d_model must be even and positive, got {}", d_model);
    }
    let mut out = Vec::with_capacity(d_model);
    for i in 0..d_model / 2 {
        let arg = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Encodings for positions `0..n` stacked as rows.
pub fn positional_table(n: usize, d_model: usize) -> Result<Mat> {
    let mut data = Vec::with_capacity(n * d_model);
    for p in 0..n {
        data.extend(positional_encoding(p, d_model)?);
    }
    Mat::from_vec(n, d_model, data)
}

/// Layout of a `channels x height x width` image cut into `p x p` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn new(channels: usize, height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            bail!(InvalidArgument, "patch size {} does not divide {}x{}", patch, height, width);
        }
        Ok(Self { channels, height, width, patch })
    }

    pub fn n_tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Image (channel-major, then row, then column) to `tokens x token_dim`.
    /// Tokens run row-major over the patch grid; within a token the order is
    /// channel, then row, then column.
    pub fn patchify(&self, image: &[f64]) -> Result<Mat> {
        if image.len() != self.numel() {
            bail!(ShapeMismatch, "image has {} values, expected {}", image.len(), self.numel());
        }
        let p = self.patch;
        let gw = self.width / p;
        Ok(Mat::from_fn(self.n_tokens(), self.token_dim(), |t, f| {
            let (pr, pc) = (t / gw, t % gw);
            let (ch, rest) = (f / (p * p), f % (p * p));
            let (r, c) = (pr * p + rest / p, pc * p + rest % p);
            image[(ch * self.height + r) * self.width + c]
        }))
    }

    pub fn unpatchify(&self, tokens: &Mat) -> Result<Vec<f64>> {
        if tokens.shape() != (self.n_tokens(), self.token_dim()) {
            bail!(ShapeMismatch, "tokens {:?}, expected {:?}", tokens.shape(), (self.n_tokens(), self.token_dim()));
        }
        let p = self.patch;
        let gw = self.width / p;
        let mut image = alloc::vec![0.0; self.numel()];
        for t in 0..self.n_tokens() {
            let (pr, pc) = (t / gw, t % gw);
            for (f, &v) in tokens.row(t).iter().enumerate() {
                let (ch, rest) = (f / (p * p), f % (p * p));
                let (r, c) = (pr * p + rest / p, pc * p + rest % p);
                image[(ch * self.height + r) * self.width + c] = v;
            }
        }
        Ok(image)
    }
}

/// Linear patch embedding plus fixed positional encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbed {
    pub grid: PatchGrid,
    pub proj: Linear,
    pub pe: Mat,
}

impl PatchEmbed {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, grid: PatchGrid, d_model: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            grid,
            proj: Linear::new(store, name, grid.token_dim(), d_model, true, Init::FanIn, rng),
            pe: positional_table(grid.n_tokens(), d_model)?,
        })
    }

    /// Embed already patchified tokens.
    pub fn forward_tokens(&self, g: &mut Graph<'_>, tokens: Var) -> Result<Var> {
        let e = self.proj.forward(g, tokens)?;
        let pe = g.input(self.pe.clone());
        g.tape.add(e, pe)
    }

    pub fn forward(&self, g: &mut Graph<'_>, image: &[f64]) -> Result<Var> {
        let t = g.input(self.grid.patchify(image)?);
        self.forward_tokens(g, t)
    }
}
