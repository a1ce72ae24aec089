//! Contrastive channel encoder and the transformer decoder mapping
//! representations back to channels.
//!
//! Channels enter the networks as real images of shape
//! `(2, N_k, N_R·N_T)`: real and imaginary planes, subcarriers down, antenna
//! pairs `(r, tx)` across. The encoder pair is trained with InfoNCE against a
//! FIFO queue of keys from a momentum-updated copy; only the query encoder's
//! output (before the projector) is used downstream.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::chanmodel::Dataset;
use crate::error::{bail, Error, Result};
use crate::nn::{
    positional_table, Adam, Graph, Init, LayerNorm, Linear, LrSchedule, Mat, Mlp, ParamStore, PatchEmbed,
    PatchGrid, TransformerBlock, Var,
};
use crate::rng::{domain, stream};
use crate::C64;

/// Channel snapshot <-> real image conversion.
///
/// Values are multiplied by `gain = sqrt(N_k·N_R·N_T) / norm_scale`, so a
/// snapshot of dataset-average energy has unit mean-square entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageCodec {
    pub n_k: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub gain: f64,
}

impl ImageCodec {
    pub fn new(n_k: usize, n_r: usize, n_t: usize, norm_scale: f64) -> Result<Self> {
        if !(norm_scale > 0.0 && norm_scale.is_finite()) {
            bail!(InvalidArgument, "norm_scale must be positive, got {}", norm_scale);
        }
        Ok(Self { n_k, n_r, n_t, gain: ((n_k * n_r * n_t) as f64).sqrt() / norm_scale })
    }

    pub fn for_dataset(ds: &Dataset) -> Result<Self> {
        let [_, n_k, n_r, n_t] = ds.scene.tensor_shape();
        Self::new(n_k, n_r, n_t, ds.norm_scale)
    }

    pub fn height(&self) -> usize {
        self.n_k
    }

    pub fn width(&self) -> usize {
        self.n_r * self.n_t
    }

    pub fn numel(&self) -> usize {
        2 * self.n_k * self.width()
    }

    /// `snapshot` is one time slice in `(k, r, tx)` order.
    pub fn to_image(&self, snapshot: &[C64]) -> Result<Vec<f64>> {
        let n = self.n_k * self.width();
        if snapshot.len() != n {
            bail!(ShapeMismatch, "snapshot has {} entries, expected {}", snapshot.len(), n);
        }
        let mut img = vec![0.0; 2 * n];
        for (i, z) in snapshot.iter().enumerate() {
            img[i] = z.re * self.gain;
            img[n + i] = z.im * self.gain;
        }
        Ok(img)
    }

    pub fn to_channel(&self, image: &[f64]) -> Result<Vec<C64>> {
        if image.len() != self.numel() {
            bail!(ShapeMismatch, "image has {} values, expected {}", image.len(), self.numel());
        }
        let n = self.numel() / 2;
        Ok((0..n).map(|i| C64::new(image[i], image[n + i]) / self.gain).collect())
    }

    pub fn grid(&self, patch: usize) -> Result<PatchGrid> {
        PatchGrid::new(2, self.height(), self.width(), patch)
    }
}

/// Encoder output for one `(bs, ue, t)` channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub f: Vec<f64>,
    pub bs_id: u32,
    pub ue_id: u32,
    pub t: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub n_re: usize,
}

impl EncoderConfig {
    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(2, self.height, self.width, self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            bail!(InvalidArgument, "d_model {} not divisible by {} heads", self.d_model, self.n_heads);
        }
        if self.d_model % 2 != 0 || self.n_re == 0 || self.depth == 0 {
            bail!(InvalidArgument, "encoder needs even d_model and positive n_re and depth");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    embed: PatchEmbed,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    head: Mlp,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed = PatchEmbed::new(store, &format!("{name}.embed"), config.grid()?, d, rng)?;
        let blocks = (0..config.depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), d, config.n_heads, config.mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), d);
        let head = Mlp::new(store, &format!("{name}.head"), d, d, config.n_re, Init::FanIn, rng);
        Ok(Self { config, embed, blocks, norm, head })
    }

    /// `1 x n_re` representation of one image.
    pub fn forward(&self, g: &mut Graph<'_>, image: &[f64]) -> Result<Var> {
        let mut h = self.embed.forward(g, image)?;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        let h = self.norm.forward(g, h)?;
        let pooled = g.tape.mean_rows(h);
        self.head.forward(g, pooled)
    }

    pub fn encode(&self, store: &ParamStore, image: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let y = self.forward(&mut g, image)?;
        Ok(g.tape.value(y).as_slice().to_vec())
    }
}

/// Query-side encoder with its training-only projector, in one store.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub encoder: Encoder,
    pub projector: Mlp,
    pub store: ParamStore,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, domain::INIT, &[domain::ENCODER]);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "encoder", config, &mut rng)?;
        let n = config.n_re;
        let projector = Mlp::new(&mut store, "projector", n, n, n, Init::FanIn, &mut rng);
        Ok(Self { encoder, projector, store })
    }

    pub fn encode(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.encoder.encode(&self.store, image)
    }

}

/// L2-normalised projector outputs of a batch, `batch x n_re`.
fn embed_batch(encoder: &Encoder, projector: &Mlp, g: &mut Graph<'_>, images: &[&[f64]]) -> Result<Var> {
    let reps = images.iter().map(|im| encoder.forward(g, im)).collect::<Result<Vec<_>>>()?;
    let f = g.tape.concat_rows(&reps)?;
    let z = projector.forward(g, f)?;
    g.tape.l2_normalize_rows(z)
}

/// FIFO ring of L2-normalised keys.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    keys: VecDeque<Vec<f64>>,
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        bail!(Degenerate, "vector norm is {}", n);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            bail!(InvalidArgument, "queue capacity and dimension must be positive");
        }
        Ok(Self { capacity, dim, keys: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Normalise and append `key`, evicting the oldest entry when full.
    pub fn push(&mut self, key: &[f64]) -> Result<()> {
        if key.len() != self.dim {
            bail!(ShapeMismatch, "key of length {}, queue dimension {}", key.len(), self.dim);
        }
        let k = normalized(key)?;
        if self.keys.len() == self.capacity {
            self.keys.pop_front();
        }
        self.keys.push_back(k);
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.keys.iter().map(|k| k.as_slice())
    }

    /// Keys stacked as rows, oldest first.
    pub fn to_mat(&self) -> Mat {
        let mut data = Vec::with_capacity(self.keys.len() * self.dim);
        for k in &self.keys {
            data.extend_from_slice(k);
        }
        // length is rows * dim by construction
        Mat::from_vec(self.keys.len(), self.dim, data).unwrap_or_else(|_| Mat::zeros(0, self.dim))
    }
}

/// `-log2( exp(q·k⁺/γ) / (exp(q·k⁺/γ) + Σ exp(q·k⁻/γ)) )` on normalised vectors.
pub fn infonce_loss(query: &[f64], positive: &[f64], queue: &NegativeQueue, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        bail!(InvalidArgument, "temperature must be positive, got {}", temperature);
    }
    if queue.is_empty() {
        bail!(InvalidArgument, "negative queue is empty");
    }
    if query.len() != positive.len() || query.len() != queue.dim {
        bail!(ShapeMismatch, "query {}, key {}, queue {}", query.len(), positive.len(), queue.dim);
    }
    let q = normalized(query)?;
    let kp = normalized(positive)?;
    let pos = dot(&q, &kp) / temperature;
    let logits: Vec<f64> = core::iter::once(pos).chain(queue.iter().map(|k| dot(&q, k) / temperature)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok((lse - pos) / core::f64::consts::LN_2)
}

/// `θ_neg ← β θ_neg + (1 − β) θ_pos`.
pub fn momentum_update(neg: &mut ParamStore, pos: &ParamStore, beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        bail!(InvalidArgument, "momentum must lie in [0, 1), got {}", beta);
    }
    neg.check_aligned(pos)?;
    let ids: Vec<_> = neg.ids().collect();
    for id in ids {
        let src = pos.get(id).as_slice();
        for (a, b) in neg.get_mut(id).as_mut_slice().iter_mut().zip(src) {
            *a = beta * *a + (1.0 - beta) * b;
        }
    }
    Ok(())
}

/// One training-log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub queue_fill: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Learning rate at the end of the cosine tail, relative to `lr`.
    pub final_lr_frac: f64,
    pub seed: u64,
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            bail!(InvalidArgument, "temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(InvalidArgument, "momentum must lie in [0, 1)");
        }
        if self.queue_capacity == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            bail!(InvalidArgument, "queue, batch and learning rate must be positive");
        }
        Ok(())
    }

    /// Steps spent filling the queue before the first gradient step.
    pub fn warmup_steps(&self) -> usize {
        self.queue_capacity.div_ceil(self.batch_size)
    }
}

/// Batched InfoNCE (base 2) of query images against precomputed normalised
/// positive keys (`batch x n_re`) and the queue, averaged over the batch.
pub fn contrastive_loss(
    model: &EncoderModel,
    g: &mut Graph<'_>,
    queries: &[&[f64]],
    keys: &Mat,
    queue: &NegativeQueue,
    temperature: f64,
) -> Result<Var> {
    if keys.rows() != queries.len() || queue.is_empty() {
        bail!(ShapeMismatch, "{} queries, {} keys, {} queued", queries.len(), keys.rows(), queue.len());
    }
    let q = embed_batch(&model.encoder, &model.projector, g, queries)?;
    let k = g.input(keys.clone());
    let qk = g.tape.mul(q, k)?;
    let pos = g.tape.sum_cols(qk);
    let negs = g.input(queue.to_mat());
    let neg = g.tape.matmul_t(q, negs)?;
    let logits = g.tape.concat_cols(&[pos, neg])?;
    let logits = g.tape.scale(logits, 1.0 / temperature);
    let ls = g.tape.log_softmax_rows(logits);
    let picked = g.tape.pick_cols(ls, &vec![0; queries.len()])?;
    let total = g.tape.sum(picked);
    Ok(g.tape.scale(total, -1.0 / (queries.len() as f64 * core::f64::consts::LN_2)))
}

/// Images of every `(entry, t)`, entry-major.
pub fn dataset_images(ds: &Dataset, codec: &ImageCodec) -> Result<Vec<Vec<Vec<f64>>>> {
    ds.entries
        .iter()
        .map(|e| (0..e.tensor.n_times()).map(|t| codec.to_image(e.tensor.time_slice(t))).collect())
        .collect()
}

fn sample_batch<R: Rng + ?Sized>(n_entries: usize, n_times: usize, batch: usize, rng: &mut R) -> Vec<(usize, usize, usize)> {
    let entries: Vec<usize> = if batch <= n_entries {
        sample_indices(rng, n_entries, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..n_entries)).collect()
    };
    entries
        .into_iter()
        .map(|e| {
            let t = rng.random_range(0..n_times);
            let u = (t + rng.random_range(1..n_times)) % n_times;
            (e, t, u)
        })
        .collect()
}

/// Algorithm: momentum-contrast training on temporal positive pairs.
/// `images[e][t]` is entry `e` at time `t`.
pub fn train_encoder(
    images: &[Vec<Vec<f64>>],
    config: EncoderConfig,
    train: &ContrastiveConfig,
) -> Result<(EncoderModel, Vec<StepRecord>)> {
    train.validate()?;
    let n_entries = images.len();
    let n_times = images.first().map_or(0, |e| e.len());
    if n_entries == 0 || n_times < 2 || images.iter().any(|e| e.len() != n_times) {
        bail!(InvalidArgument, "need at least one entry and a common N_t >= 2");
    }
    if n_entries * n_times < train.queue_capacity {
        bail!(
            InvalidArgument,
            "dataset has {} channels, fewer than the queue capacity {}",
            n_entries * n_times,
            train.queue_capacity
        );
    }
    let mut model = EncoderModel::new(config, train.seed)?;
    let mut key_store = model.store.clone();
    let mut queue = NegativeQueue::new(train.queue_capacity, config.n_re)?;
    let mut opt = Adam::new(&model.store);
    let schedule = LrSchedule::with_warmup(train.lr, train.steps, train.final_lr_frac);
    let mut rng = stream(train.seed, domain::ENCODER, &[]);

    let (encoder, projector) = (model.encoder.clone(), model.projector.clone());
    let keys_of = |store: &ParamStore, batch: &[(usize, usize, usize)]| -> Result<Mat> {
        let mut g = Graph::new(store);
        let ims: Vec<&[f64]> = batch.iter().map(|&(e, _, u)| images[e][u].as_slice()).collect();
        let k = embed_batch(&encoder, &projector, &mut g, &ims)?;
        Ok(g.tape.value(k).clone())
    };

    for _ in 0..train.warmup_steps() {
        let batch = sample_batch(n_entries, n_times, train.batch_size, &mut rng);
        let keys = keys_of(&key_store, &batch)?;
        for r in 0..keys.rows() {
            queue.push(keys.row(r))?;
        }
    }

    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let batch = sample_batch(n_entries, n_times, train.batch_size, &mut rng);
        let keys = keys_of(&key_store, &batch)?;
        let lr = schedule.at(step);
        let (loss, grads) = {
            let mut g = Graph::new(&model.store);
            let ims: Vec<&[f64]> = batch.iter().map(|&(e, t, _)| images[e][t].as_slice()).collect();
            let loss = contrastive_loss(&model, &mut g, &ims, &keys, &queue, train.temperature)?;
            (g.tape.scalar(loss), g.grads(loss)?)
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("contrastive loss"));
        }
        opt.step(&mut model.store, &grads, lr)?;
        momentum_update(&mut key_store, &model.store, train.momentum)?;
        for r in 0..keys.rows() {
            queue.push(keys.row(r))?;
        }
        log.push(StepRecord { step, loss, lr, queue_fill: Some(queue.len()) });
    }
    Ok((model, log))
}

/// Representations of every `(entry, t)` of a dataset under the query encoder.
pub fn encode_dataset(ds: &Dataset, model: &EncoderModel) -> Result<Vec<Representation>> {
    let codec = ImageCodec::for_dataset(ds)?;
    if (codec.height(), codec.width()) != (model.encoder.config.height, model.encoder.config.width) {
        bail!(
            ShapeMismatch,
            "dataset image {}x{}, encoder expects {}x{}",
            codec.height(),
            codec.width(),
            model.encoder.config.height,
            model.encoder.config.width
        );
    }
    let mut out = Vec::new();
    for e in &ds.entries {
        for t in 0..e.tensor.n_times() {
            let f = model.encode(&codec.to_image(e.tensor.time_slice(t))?)?;
            out.push(Representation { f, bs_id: e.bs_id, ue_id: e.ue_id, t: t as u32 });
        }
    }
    Ok(out)
}

/// Arithmetic mean of representations.
pub fn mean_representation(reps: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = reps.first() else { bail!(InvalidArgument, "mean of no representations") };
    let n = first.len();
    if reps.iter().any(|r| r.len() != n) {
        bail!(ShapeMismatch, "representations of differing length");
    }
    let mut m = vec![0.0; n];
    for r in reps {
        for (a, b) in m.iter_mut().zip(*r) {
            *a += b;
        }
    }
    let k = reps.len() as f64;
    Ok(m.into_iter().map(|x| x / k).collect())
}

/// Cosine-geometry summary of representations grouped by `(bs, ue)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    /// Leave-one-out nearest neighbour (cosine) shares the group.
    pub retrieval_top1: f64,
    pub mean_positive_cos: f64,
    pub mean_negative_cos: f64,
}

pub fn separation(reps: &[Representation]) -> Result<Separation> {
    if reps.len() < 2 {
        bail!(InvalidArgument, "need at least two representations");
    }
    let unit = reps.iter().map(|r| normalized(&r.f)).collect::<Result<Vec<_>>>()?;
    let key = |r: &Representation| (r.bs_id, r.ue_id);
    let (mut pos, mut npos, mut neg, mut nneg, mut hits) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for i in 0..reps.len() {
        let mut best = (f64::NEG_INFINITY, i);
        for j in 0..reps.len() {
            if i == j {
                continue;
            }
            let c = dot(&unit[i], &unit[j]);
            if key(&reps[i]) == key(&reps[j]) {
                pos += c;
                npos += 1;
            } else {
                neg += c;
                nneg += 1;
            }
            if c > best.0 {
                best = (c, j);
            }
        }
        if key(&reps[best.1]) == key(&reps[i]) {
            hits += 1;
        }
    }
    Ok(Separation {
        retrieval_top1: hits as f64 / reps.len() as f64,
        mean_positive_cos: if npos > 0 { pos / npos as f64 } else { 0.0 },
        mean_negative_cos: if nneg > 0 { neg / nneg as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub n_re: usize,
    pub height: usize,
    pub width: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
}

impl DecoderConfig {
    /// Output patch side so that the `n_re / 2` latent tokens tile the image.
    pub fn out_patch(&self) -> Result<usize> {
        if self.n_re == 0 || self.n_re % 2 != 0 {
            bail!(InvalidArgument, "n_re must be even, got {}", self.n_re);
        }
        let area = self.height * self.width;
        let tokens = self.n_re / 2;
        if area % tokens != 0 {
            bail!(InvalidArgument, "{} latent tokens cannot tile a {}x{} image", tokens, self.height, self.width);
        }
        let p = (area / tokens) as f64;
        let p = p.sqrt().round() as usize;
        if p == 0 || p * p * tokens != area || self.height % p != 0 || self.width % p != 0 {
            bail!(InvalidArgument, "{} latent tokens cannot tile a {}x{} image", tokens, self.height, self.width);
        }
        Ok(p)
    }

    pub fn out_grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(2, self.height, self.width, self.out_patch()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.out_patch()?;
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 || self.d_model % 2 != 0 || self.depth == 0 {
            bail!(InvalidArgument, "invalid decoder width/heads/depth");
        }
        Ok(())
    }
}

/// Latent `F` read as a `(2, ga, gb)` grid of single-pixel tokens; each
/// token predicts one output patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    embed: Linear,
    pe: Mat,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    head: Mlp,
    out_grid: PatchGrid,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: DecoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let out_grid = config.out_grid()?;
        let tokens = config.n_re / 2;
        let blocks = (0..config.depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), d, config.n_heads, config.mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            embed: Linear::new(store, &format!("{name}.embed"), 2, d, true, Init::FanIn, rng),
            pe: positional_table(tokens, d)?,
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            head: Mlp::new(store, &format!("{name}.head"), d, config.mlp_ratio * d, out_grid.token_dim(), Init::FanIn, rng),
            out_grid,
        })
    }

    pub fn out_grid(&self) -> PatchGrid {
        self.out_grid
    }

    fn latent_tokens(&self, f: &[f64]) -> Result<Mat> {
        if f.len() != self.config.n_re {
            bail!(ShapeMismatch, "latent of length {}, decoder expects {}", f.len(), self.config.n_re);
        }
        let n = self.config.n_re / 2;
        Ok(Mat::from_fn(n, 2, |t, c| f[c * n + t]))
    }

    /// Output patches, `tokens x 2p²`, in the layout of [`PatchGrid::patchify`].
    pub fn forward(&self, g: &mut Graph<'_>, f: &[f64]) -> Result<Var> {
        let x = g.input(self.latent_tokens(f)?);
        let e = self.embed.forward(g, x)?;
        let pe = g.input(self.pe.clone());
        let mut h = g.tape.add(e, pe)?;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        let h = self.norm.forward(g, h)?;
        self.head.forward(g, h)
    }

    pub fn decode(&self, store: &ParamStore, f: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let y = self.forward(&mut g, f)?;
        self.out_grid.unpatchify(g.tape.value(y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub decoder: Decoder,
    pub store: ParamStore,
}

impl DecoderModel {
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, domain::INIT, &[domain::DECODER]);
        let mut store = ParamStore::new();
        let decoder = Decoder::new(&mut store, "decoder", config, &mut rng)?;
        Ok(Self { decoder, store })
    }

    pub fn decode(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.decoder.decode(&self.store, f)
    }
}

/// Plain minibatch training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr_frac: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            bail!(InvalidArgument, "batch size and learning rate must be positive");
        }
        Ok(())
    }
}

/// Fit the decoder to `(F, image)` pairs with the mean squared error.
pub fn train_decoder(
    pairs: &[(Vec<f64>, Vec<f64>)],
    config: DecoderConfig,
    train: &TrainConfig,
) -> Result<(DecoderModel, Vec<StepRecord>)> {
    train.validate()?;
    if pairs.is_empty() {
        bail!(InvalidArgument, "no training pairs");
    }
    let mut model = DecoderModel::new(config, train.seed)?;
    let grid = model.decoder.out_grid();
    let targets = pairs.iter().map(|(_, im)| grid.patchify(im)).collect::<Result<Vec<_>>>()?;
    let mut opt = Adam::new(&model.store);
    let schedule = LrSchedule::with_warmup(train.lr, train.steps, train.final_lr_frac);
    let mut rng = stream(train.seed, domain::DECODER, &[]);
    let per = 1.0 / (train.batch_size * grid.numel()) as f64;
    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let idx: Vec<usize> = (0..train.batch_size).map(|_| rng.random_range(0..pairs.len())).collect();
        let lr = schedule.at(step);
        let (loss, grads) = {
            let mut g = Graph::new(&model.store);
            let mut terms = Vec::with_capacity(idx.len());
            for &i in &idx {
                let y = model.decoder.forward(&mut g, &pairs[i].0)?;
                let t = g.input(targets[i].clone());
                let d = g.tape.sub(y, t)?;
                terms.push(g.tape.sum_sqr(d)?);
            }
            let all = g.tape.concat_rows(&terms)?;
            let total = g.tape.sum(all);
            let loss = g.tape.scale(total, per);
            (g.tape.scalar(loss), g.grads(loss)?)
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("decoder loss"));
        }
        opt.step(&mut model.store, &grads, lr)?;
        log.push(StepRecord { step, loss, lr, queue_fill: None });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chanmodel::{ArrayGeometry, SceneConfig, SceneSampler};
    use crate::nn::gradcheck::{check_store, randomize, sample_coords};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalized(v).unwrap()
    }

    fn queue_of(keys: &[Vec<f64>]) -> NegativeQueue {
        let mut q = NegativeQueue::new(keys.len().max(1), keys[0].len()).unwrap();
        for k in keys {
            q.push(k).unwrap();
        }
        q
    }

    #[test]
    fn infonce_examples() {
        // q·k⁺ = q·k⁻ = 0
        let q = [1.0, 0.0, 0.0];
        let l = infonce_loss(&q, &[0.0, 1.0, 0.0], &queue_of(&[vec![0.0, 0.0, 1.0]]), 0.1).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let l = infonce_loss(&q, &[0.0, 1.0, 0.0], &queue_of(&[vec![0.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]]), 0.1).unwrap();
        assert!((l - 3f64.log2()).abs() < 1e-12);
        let l = infonce_loss(&q, &q, &queue_of(&[vec![-1.0, 0.0, 0.0]]), 5e-3).unwrap();
        assert!(l < 1e-100);
        assert!(infonce_loss(&[0.0; 3], &q, &queue_of(&[q.to_vec()]), 0.1).is_err());
        assert!(infonce_loss(&q, &q, &NegativeQueue::new(2, 3).unwrap(), 0.1).is_err());
    }

    #[test]
    fn momentum_examples() {
        let mut neg = ParamStore::new();
        neg.add("w", Mat::zeros(2, 2));
        let mut pos = ParamStore::new();
        pos.add("w", Mat::filled(2, 2, 1.0));
        assert!(momentum_update(&mut neg.clone(), &pos, 1.0).is_err());
        assert!(momentum_update(&mut neg.clone(), &pos, -0.1).is_err());
        let mut copy = neg.clone();
        momentum_update(&mut copy, &pos, 0.0).unwrap();
        assert_eq!(copy, pos);
        momentum_update(&mut neg, &pos, 0.99).unwrap();
        assert!(neg.flatten().iter().all(|v| (v - 0.01).abs() < 1e-15));
        let mut other = ParamStore::new();
        other.add("v", Mat::zeros(2, 2));
        assert!(momentum_update(&mut other, &pos, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn infonce_bounds(sims in proptest::collection::vec(-1.0f64..1.0, 2..12), gamma in 0.01f64..1.0) {
            // build vectors in R^(n+1) with prescribed similarity to q = e0
            let n = sims.len();
            let vec_with = |s: f64, axis: usize| {
                let mut v = vec![0.0; n + 1];
                v[0] = s;
                v[axis] = (1.0 - s * s).sqrt();
                v
            };
            let q = { let mut v = vec![0.0; n + 1]; v[0] = 1.0; v };
            let pos = vec_with(sims[0], 1);
            let negs: Vec<Vec<f64>> = sims[1..].iter().enumerate().map(|(i, s)| vec_with(*s, i + 2)).collect();
            let queue = queue_of(&negs);
            let l = infonce_loss(&q, &pos, &queue, gamma).unwrap();
            let k = negs.len() as f64;
            prop_assert!(l >= 0.0);
            prop_assert!(l <= 2.0 / (gamma * core::f64::consts::LN_2) + (k + 1.0).log2() + 1e-9);
            let same: Vec<Vec<f64>> = (0..negs.len()).map(|i| vec_with(sims[0], i + 2)).collect();
            let u = infonce_loss(&q, &pos, &queue_of(&same), gamma).unwrap();
            prop_assert!((u - ((negs.len() + 1) as f64).log2()).abs() < 1e-9);
        }

        #[test]
        fn infonce_increases_with_temperature(margin in 0.05f64..1.0, g1 in 0.01f64..0.99) {
            let q = [1.0, 0.0, 0.0, 0.0];
            let s_pos: f64 = 0.9;
            let s_neg = s_pos - margin;
            let pos = [s_pos, (1.0 - s_pos * s_pos).sqrt(), 0.0, 0.0];
            let neg = vec![s_neg, 0.0, (1.0 - s_neg * s_neg).sqrt(), 0.0];
            let queue = queue_of(&[neg.clone(), neg]);
            let g2 = (g1 + 0.01).min(1.0);
            let a = infonce_loss(&q, &pos, &queue, g1).unwrap();
            let b = infonce_loss(&q, &pos, &queue, g2).unwrap();
            prop_assert!(b > a || (a == 0.0 && b == 0.0));
        }

        #[test]
        fn momentum_contracts(a in proptest::collection::vec(-5.0f64..5.0, 6), b in proptest::collection::vec(-5.0f64..5.0, 6), beta in 0.0f64..0.999) {
            let mut neg = ParamStore::new();
            neg.add("w", Mat::from_vec(2, 3, a.clone()).unwrap());
            let mut pos = ParamStore::new();
            pos.add("w", Mat::from_vec(2, 3, b.clone()).unwrap());
            let before: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            momentum_update(&mut neg, &pos, beta).unwrap();
            let after: f64 = neg.flatten().iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!((after - beta * before).abs() < 1e-9 * (1.0 + before));
        }

        #[test]
        fn queue_is_fifo(cap in 1usize..20, batch in 1usize..6, steps in 0usize..30) {
            let mut q = NegativeQueue::new(cap, 2).unwrap();
            let mut pushed = Vec::new();
            for s in 0..steps {
                for b in 0..batch {
                    let id = (s * batch + b) as f64 + 1.0;
                    q.push(&[id, 1.0]).unwrap();
                    pushed.push(id);
                }
                prop_assert_eq!(q.len(), ((s + 1) * batch).min(cap));
            }
            let expect: Vec<f64> = pushed.iter().rev().take(cap).rev().cloned().collect();
            let ids: Vec<f64> = q.iter().map(|k| k[0] / k[1]).collect();
            prop_assert_eq!(ids.len(), expect.len());
            for (x, y) in ids.iter().zip(&expect) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!(q.iter().all(|k| (k.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12));
        }
    }

    fn tiny_dataset(n_locations: usize, n_times: usize) -> Dataset {
        let geometry = ArrayGeometry::new(2, 1, 1, 2, core::f64::consts::PI).unwrap();
        let scene = SceneConfig { n_subcarriers: 4, bandwidth: 1.92e6, n_times, geometry, noise_var: 1.0, rng_seed: 3 };
        let draws = SceneSampler::default().sample_scene(&scene, n_locations, 1).unwrap();
        Dataset::from_draws(&draws, scene).unwrap()
    }

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig { height: 4, width: 4, patch: 2, d_model: 8, n_heads: 2, depth: 1, mlp_ratio: 2, n_re: 4 }
    }

    fn tiny_contrastive(steps: usize) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: 0.1,
            momentum: 0.99,
            queue_capacity: 4,
            batch_size: 2,
            steps,
            lr: 1e-3,
            final_lr_frac: 1.0,
            seed: 9,
        }
    }

    #[test]
    fn codec_round_trip() {
        let ds = tiny_dataset(2, 2);
        let codec = ImageCodec::for_dataset(&ds).unwrap();
        let snap = ds.entries[0].tensor.time_slice(1);
        let img = codec.to_image(snap).unwrap();
        assert_eq!(img.len(), 2 * 4 * 4);
        let back = codec.to_channel(&img).unwrap();
        for (a, b) in back.iter().zip(snap) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn encoder_smoke_and_determinism() {
        let ds = tiny_dataset(2, 2);
        let codec = ImageCodec::for_dataset(&ds).unwrap();
        let images = dataset_images(&ds, &codec).unwrap();
        let (m1, log1) = train_encoder(&images, tiny_encoder(), &tiny_contrastive(50)).unwrap();
        assert_eq!(log1.len(), 50);
        assert!(log1.iter().all(|r| r.loss.is_finite() && r.queue_fill == Some(4)));
        let (m2, log2) = train_encoder(&images, tiny_encoder(), &tiny_contrastive(50)).unwrap();
        assert_eq!(m1.store, m2.store);
        let bits = |l: &[StepRecord]| l.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&log1), bits(&log2));

        let reps = encode_dataset(&ds, &m1).unwrap();
        assert_eq!(reps.len(), 2 * 2);
        assert!(reps.iter().all(|r| r.f.len() == 4));

        let mut big = tiny_contrastive(5);
        big.queue_capacity = 5;
        assert!(train_encoder(&images, tiny_encoder(), &big).is_err());
        let one_t = dataset_images(&tiny_dataset(2, 1), &codec).unwrap();
        assert!(train_encoder(&one_t, tiny_encoder(), &tiny_contrastive(5)).is_err());
    }

    #[test]
    fn identical_channels_identical_representations() {
        let model = EncoderModel::new(tiny_encoder(), 4).unwrap();
        let img: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(model.encode(&img).unwrap(), model.encode(&img.clone()).unwrap());
    }

    #[test]
    fn mean_representation_examples() {
        let a = vec![1.0, -2.0, 3.0];
        assert_eq!(mean_representation(&[&a]).unwrap(), a);
        let b: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_eq!(mean_representation(&[&a, &b]).unwrap(), vec![0.0; 3]);
        assert!(mean_representation(&[]).is_err());
    }

    #[test]
    fn decoder_tiling() {
        let desk = DecoderConfig { n_re: 32, height: 16, width: 16, d_model: 32, n_heads: 4, depth: 2, mlp_ratio: 2 };
        assert_eq!(desk.out_patch().unwrap(), 4);
        let large = DecoderConfig { n_re: 128, height: 128, width: 128, d_model: 512, n_heads: 8, depth: 8, mlp_ratio: 4 };
        assert_eq!(large.out_patch().unwrap(), 16);
        assert!(DecoderConfig { n_re: 30, ..desk }.out_patch().is_err());
    }

    #[test]
    fn full_encoder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = EncoderModel::new(tiny_encoder(), 1).unwrap();
        randomize(&mut model.store, 0.5, &mut rng);
        let ims: Vec<Vec<f64>> = (0..2).map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = ims.iter().map(|v| v.as_slice()).collect();
        let keys = Mat::from_fn(2, 4, |r, c| unit(&[1.0 + r as f64, c as f64 - 1.5, 0.3, -0.2])[c]);
        let queue = queue_of(&[vec![0.2, -1.0, 0.5, 0.1], vec![1.0, 1.0, -1.0, 0.3], vec![-0.4, 0.0, 0.7, 1.0]]);
        let coords = sample_coords(model.store.numel(), 400, &mut rng);
        let err = check_store(
            &model.store,
            |s| {
                let m = EncoderModel { store: s.clone(), ..model.clone() };
                let mut g = Graph::new(&m.store);
                let l = contrastive_loss(&m, &mut g, &refs, &keys, &queue, 0.5)?;
                Ok((g.tape.scalar(l), g.grads(l)?))
            },
            1e-3,
            &coords,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn decoder_gradient_and_training() {
        let cfg = DecoderConfig { n_re: 8, height: 4, width: 4, d_model: 8, n_heads: 2, depth: 1, mlp_ratio: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut model = DecoderModel::new(cfg, 2).unwrap();
        randomize(&mut model.store, 0.5, &mut rng);
        let f: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = model.decoder.out_grid().patchify(&(0..32).map(|i| (i as f64).cos()).collect::<Vec<_>>()).unwrap();
        let err = check_store(
            &model.store,
            |s| {
                let mut g = Graph::new(s);
                let y = model.decoder.forward(&mut g, &f)?;
                let t = g.input(target.clone());
                let d = g.tape.sub(y, t)?;
                let l = g.tape.sum_sqr(d)?;
                Ok((g.tape.scalar(l), g.grads(l)?))
            },
            1e-3,
            &[],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");

        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
            .map(|i| {
                let f: Vec<f64> = (0..8).map(|j| ((i * 8 + j) as f64 * 0.7).sin()).collect();
                let im: Vec<f64> = (0..32).map(|j| ((i + 1) as f64 * j as f64 * 0.1).cos()).collect();
                (f, im)
            })
            .collect();
        let train = TrainConfig { steps: 400, batch_size: 4, lr: 3e-3, final_lr_frac: 1.0, seed: 1 };
        let (_, log) = train_decoder(&pairs, cfg, &train).unwrap();
        let window = |a: usize| log[a..a + 50].iter().map(|r| r.loss).sum::<f64>() / 50.0;
        let marks: Vec<f64> = (0..8).map(|i| window(i * 50)).collect();
        assert!(marks.windows(2).all(|w| w[1] <= w[0] * 1.05), "{marks:?}");
        assert!(marks[7] < 0.5 * marks[0], "{marks:?}");
    }
}
