//! Multipath MIMO-OFDM channel synthesis.
//!
//! A link is described by a [`PathSet`]; each path carries its own gain,
//! phase, delay and angle triple. Paths that belong to one cluster share the
//! angle triple, so a single-cluster set reproduces the shared-angle form of
//! the channel sum and multi-cluster links are the sum of such sets.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{bail, Error, Result};
use crate::linalg::{kron, CMat};
use crate::rng::{self, domain};
use crate::C64;

/// Antenna layout of the BS planar/volumetric array and the UE linear array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub n_r: usize,
    /// Wavenumber times element spacing, in radians. `π` is half-wavelength.
    pub phase_const: f64,
}

impl ArrayGeometry {
    pub fn new(n_x: usize, n_y: usize, n_z: usize, n_r: usize, phase_const: f64) -> Result<Self> {
        let g = Self { n_x, n_y, n_z, n_r, phase_const };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 || self.n_z == 0 || self.n_r == 0 {
            bail!(InvalidArgument, "antenna counts must be positive: {:?}", self);
        }
        if !(self.phase_const > 0.0 && self.phase_const.is_finite()) {
            bail!(InvalidArgument, "phase_const must be positive, got {}", self.phase_const);
        }
        Ok(())
    }

    /// Number of BS antenna ports `N_T`.
    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y * self.n_z
    }
}

/// One propagation path. Angles in radians, delay in seconds, gain linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: f64,
    pub phase: f64,
    pub delay: f64,
    pub aoa: f64,
    pub aod_az: f64,
    pub aod_el: f64,
}

/// Multipath parameters of one `(bs, ue, t)` link.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub bs_id: u32,
    pub ue_id: u32,
    pub t_index: u32,
}

impl PathSet {
    pub fn new(paths: Vec<Path>, bs_id: u32, ue_id: u32, t_index: u32) -> Result<Self> {
        let ps = Self { paths, bs_id, ue_id, t_index };
        ps.validate()?;
        Ok(ps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            bail!(InvalidArgument, "path set ({}, {}, {}) has no paths", self.bs_id, self.ue_id, self.t_index);
        }
        for p in &self.paths {
            if !(p.gain.is_finite() && p.gain >= 0.0) {
                bail!(InvalidArgument, "path gain must be finite and non-negative, got {}", p.gain);
            }
            if !(p.delay.is_finite() && p.delay >= 0.0) {
                bail!(InvalidArgument, "path delay must be finite and non-negative, got {}", p.delay);
            }
            if ![p.phase, p.aoa, p.aod_az, p.aod_el].iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("path angle/phase"));
            }
        }
        Ok(())
    }

    /// Stable sort by descending gain.
    pub fn sort_by_gain(&mut self) {
        self.paths.sort_by(|a, b| b.gain.partial_cmp(&a.gain).unwrap_or(core::cmp::Ordering::Equal));
    }
}

/// OFDM and array parameters shared by every link of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub n_subcarriers: usize,
    /// Hz.
    pub bandwidth: f64,
    pub n_times: usize,
    pub geometry: ArrayGeometry,
    pub noise_var: f64,
    pub rng_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.n_subcarriers == 0 || self.n_times == 0 {
            bail!(InvalidArgument, "n_subcarriers and n_times must be positive");
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            bail!(InvalidArgument, "bandwidth must be positive, got {}", self.bandwidth);
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            bail!(InvalidArgument, "noise_var must be positive, got {}", self.noise_var);
        }
        Ok(())
    }

    /// `(N_t, N_k, N_R, N_T)`.
    pub fn tensor_shape(&self) -> [usize; 4] {
        [self.n_times, self.n_subcarriers, self.geometry.n_r, self.geometry.n_t()]
    }
}

/// `[1, e^{j kd cos θ}, ..., e^{j kd (N_R-1) cos θ}]`.
pub fn array_response_ue(geometry: &ArrayGeometry, aoa: f64) -> Vec<C64> {
    ula(geometry.n_r, geometry.phase_const * aoa.cos())
}

/// `a_z(el) ⊗ a_y(az, el) ⊗ a_x(az, el)`.
pub fn array_response_bs(geometry: &ArrayGeometry, aod_az: f64, aod_el: f64) -> Vec<C64> {
    let kd = geometry.phase_const;
    let (s_el, c_el) = aod_el.sin_cos();
    let (s_az, c_az) = aod_az.sin_cos();
    let a_x = ula(geometry.n_x, kd * s_el * c_az);
    let a_y = ula(geometry.n_y, kd * s_el * s_az);
    let a_z = ula(geometry.n_z, kd * c_el);
    kron(&a_z, &kron(&a_y, &a_x))
}

fn ula(n: usize, step: f64) -> Vec<C64> {
    (0..n).map(|m| C64::from_polar(1.0, step * m as f64)).collect()
}

/// Per-path outer products `a_UE a_BS^H`, reused across subcarriers.
fn path_atoms(paths: &PathSet, geometry: &ArrayGeometry) -> Vec<CMat> {
    paths
        .paths
        .iter()
        .map(|p| {
            let ue = array_response_ue(geometry, p.aoa);
            let bs = array_response_bs(geometry, p.aod_az, p.aod_el);
            CMat::from_fn(ue.len(), bs.len(), |r, c| ue[r] * bs[c].conj())
        })
        .collect()
}

fn path_coefficient(p: &Path, scene: &SceneConfig, k: usize) -> C64 {
    let nk = scene.n_subcarriers as f64;
    let amp = (p.gain / nk).sqrt();
    C64::from_polar(amp, p.phase + TAU * k as f64 * p.delay * scene.bandwidth / nk)
}

fn synth_with_atoms(paths: &PathSet, atoms: &[CMat], scene: &SceneConfig, k: usize) -> CMat {
    let g = &scene.geometry;
    let mut h = CMat::zeros(g.n_r, g.n_t());
    for (p, atom) in paths.paths.iter().zip(atoms) {
        let coef = path_coefficient(p, scene, k);
        for (d, a) in h.as_mut_slice().iter_mut().zip(atom.as_slice()) {
            *d += coef * a;
        }
    }
    h
}

/// Channel matrix `N_R x N_T` at subcarrier `k` (0-based).
pub fn synth_subcarrier(paths: &PathSet, scene: &SceneConfig, k: usize) -> Result<CMat> {
    if k >= scene.n_subcarriers {
        return Err(Error::OutOfRange { index: k, len: scene.n_subcarriers });
    }
    paths.validate()?;
    let atoms = path_atoms(paths, &scene.geometry);
    Ok(synth_with_atoms(paths, &atoms, scene, k))
}

/// Complex channel over `(time, subcarrier, rx, tx)`, stored t-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    shape: [usize; 4],
    data: Vec<C64>,
    pub loc: [f64; 3],
}

impl ChannelTensor {
    pub fn new(shape: [usize; 4], data: Vec<C64>, loc: [f64; 3]) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            bail!(InvalidArgument, "tensor dimensions must be positive: {:?}", shape);
        }
        if data.len() != shape.iter().product::<usize>() {
            bail!(ShapeMismatch, "{} values for shape {:?}", data.len(), shape);
        }
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("channel tensor"));
        }
        Ok(Self { shape, data, loc })
    }

    /// Build from per-time snapshots, each a list of `N_k` matrices.
    pub fn from_snapshots(snapshots: &[Vec<CMat>], loc: [f64; 3]) -> Result<Self> {
        let nt = snapshots.len();
        let nk = snapshots.first().map_or(0, |s| s.len());
        let (nr, ntx) = snapshots.first().and_then(|s| s.first()).map_or((0, 0), |m| m.shape());
        let mut data = Vec::with_capacity(nt * nk * nr * ntx);
        for snap in snapshots {
            if snap.len() != nk {
                bail!(ShapeMismatch, "snapshots disagree on subcarrier count");
            }
            for m in snap {
                if m.shape() != (nr, ntx) {
                    bail!(ShapeMismatch, "snapshot matrix {:?} != {:?}", m.shape(), (nr, ntx));
                }
                data.extend_from_slice(m.as_slice());
            }
        }
        Self::new([nt, nk, nr, ntx], data, loc)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n_times(&self) -> usize {
        self.shape[0]
    }

    pub fn n_subcarriers(&self) -> usize {
        self.shape[1]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    fn slab(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Matrix at `(t, k)`.
    pub fn matrix(&self, t: usize, k: usize) -> CMat {
        let off = (t * self.shape[1] + k) * self.slab();
        CMat::from_vec(self.shape[2], self.shape[3], self.data[off..off + self.slab()].to_vec())
            .expect("slab matches shape")
    }

    /// The `N_k` matrices at time `t`.
    pub fn snapshot(&self, t: usize) -> Vec<CMat> {
        (0..self.shape[1]).map(|k| self.matrix(t, k)).collect()
    }

    /// Raw values of time slice `t` (`N_k * N_R * N_T`).
    pub fn time_slice(&self, t: usize) -> &[C64] {
        let len = self.shape[1] * self.slab();
        &self.data[t * len..(t + 1) * len]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|z| z * s).collect(), loc: self.loc }
    }
}

/// Stack per-time path sets into a tensor. Exactly one set per `t_index`.
pub fn synth_tensor(path_sets: &[PathSet], scene: &SceneConfig, loc: [f64; 3]) -> Result<ChannelTensor> {
    scene.validate()?;
    let nt = scene.n_times;
    if path_sets.len() != nt {
        bail!(InvalidArgument, "expected {} path sets, got {}", nt, path_sets.len());
    }
    let mut by_t: Vec<Option<&PathSet>> = vec![None; nt];
    for ps in path_sets {
        let t = ps.t_index as usize;
        if t >= nt {
            return Err(Error::OutOfRange { index: t, len: nt });
        }
        if by_t[t].is_some() {
            bail!(InvalidArgument, "duplicate t_index {}", t);
        }
        by_t[t] = Some(ps);
    }
    let [_, nk, nr, ntx] = scene.tensor_shape();
    let mut data = Vec::with_capacity(nt * nk * nr * ntx);
    for ps in by_t.into_iter().map(|p| p.expect("every slot filled")) {
        ps.validate()?;
        let atoms = path_atoms(ps, &scene.geometry);
        for k in 0..nk {
            data.extend_from_slice(synth_with_atoms(ps, &atoms, scene, k).as_slice());
        }
    }
    ChannelTensor::new(scene.tensor_shape(), data, loc)
}

/// Temporal variation applied to a base path set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterConfig {
    /// Redraw every path phase uniformly in `[0, 2π)`.
    pub redraw_phase: bool,
    /// Log-normal gain jitter, std of the underlying normal.
    pub gain_sigma: f64,
    /// Delay jitter std in seconds (result clamped at zero).
    pub delay_sigma: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self { redraw_phase: true, gain_sigma: 0.1, delay_sigma: 5e-9 }
    }
}

impl JitterConfig {
    pub fn none() -> Self {
        Self { redraw_phase: false, gain_sigma: 0.0, delay_sigma: 0.0 }
    }
}

/// Time-instant variant of `base`: phases redrawn, gains and delays jittered,
/// angles untouched. Gain jitter is mean-one so expected power is preserved.
pub fn perturb_temporal<R: Rng + ?Sized>(base: &PathSet, t_index: u32, jitter: &JitterConfig, rng: &mut R) -> Result<PathSet> {
    if !(jitter.gain_sigma >= 0.0 && jitter.delay_sigma >= 0.0) {
        bail!(InvalidArgument, "jitter magnitudes must be non-negative");
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = base.clone();
    out.t_index = t_index;
    for p in &mut out.paths {
        if jitter.redraw_phase {
            p.phase = rng.random::<f64>() * TAU;
        }
        if jitter.gain_sigma > 0.0 {
            let s = jitter.gain_sigma;
            let z: f64 = std_normal.sample(rng);
            p.gain *= (s * z - 0.5 * s * s).exp();
        }
        if jitter.delay_sigma > 0.0 {
            let z: f64 = std_normal.sample(rng);
            p.delay = (p.delay + jitter.delay_sigma * z).max(0.0);
        }
    }
    out.sort_by_gain();
    Ok(out)
}

/// Synthetic stand-in for ray tracing: BS sites, a UE grid, and the cluster
/// statistics used to draw paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSampler {
    pub bs_positions: Vec<[f64; 3]>,
    pub grid_origin: [f64; 2],
    pub grid_spacing: f64,
    pub ue_height: f64,
    pub n_clusters: usize,
    pub paths_per_cluster: usize,
    /// Mean power drop per cluster index, dB.
    pub cluster_decay_db: f64,
    /// Log-normal shadowing on each cluster, dB.
    pub shadowing_db: f64,
    /// Mean excess delay of scattered clusters, seconds.
    pub delay_spread: f64,
    /// Intra-cluster delay spread, seconds.
    pub intra_delay: f64,
    /// Angular scatter of non-direct clusters around the direct path, radians.
    pub angle_spread: f64,
    pub path_loss_exponent: f64,
    pub reference_distance: f64,
    pub jitter: JitterConfig,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            bs_positions: vec![[0.0, 0.0, 10.0], [120.0, 0.0, 10.0]],
            grid_origin: [30.0, 20.0],
            grid_spacing: 8.0,
            ue_height: 1.5,
            n_clusters: 3,
            paths_per_cluster: 2,
            cluster_decay_db: 3.0,
            shadowing_db: 3.0,
            delay_spread: 1.0e-6,
            intra_delay: 5.0e-8,
            angle_spread: 0.6,
            path_loss_exponent: 2.0,
            reference_distance: 60.0,
            jitter: JitterConfig::default(),
        }
    }
}

/// One BS-UE link of a sampled scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDraw {
    pub bs_id: u32,
    /// UE position relative to the BS, metres.
    pub loc: [f64; 3],
    /// One path set per time instant, `t_index` ascending.
    pub path_sets: Vec<PathSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationDraw {
    pub ue_id: u32,
    pub ue_pos: [f64; 3],
    pub links: Vec<LinkDraw>,
}

impl SceneSampler {
    pub fn ue_position(&self, ue: usize, n_locations: usize) -> [f64; 3] {
        let side = (n_locations as f64).sqrt().ceil().max(1.0) as usize;
        let (ix, iy) = (ue % side, ue / side);
        [
            self.grid_origin[0] + ix as f64 * self.grid_spacing,
            self.grid_origin[1] + iy as f64 * self.grid_spacing,
            self.ue_height,
        ]
    }

    /// Base (time-independent) path set of one link.
    pub fn base_paths<R: Rng + ?Sized>(&self, rel: [f64; 3], bs_id: u32, ue_id: u32, rng: &mut R) -> Result<PathSet> {
        let dist = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt().max(1e-3);
        let az = rel[1].atan2(rel[0]);
        let el = (rel[2] / dist).clamp(-1.0, 1.0).acos();
        // UE linear array lies along x; arrival direction points back at the BS.
        let aoa = (-rel[0] / dist).clamp(-1.0, 1.0).acos();
        let pl = (self.reference_distance / dist).powf(self.path_loss_exponent);

        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let delay_exp = Exp::new(1.0 / self.delay_spread.max(1e-15)).expect("positive rate");
        let intra_exp = Exp::new(1.0 / self.intra_delay.max(1e-15)).expect("positive rate");
        let mut raw = Vec::with_capacity(self.n_clusters * self.paths_per_cluster);
        for c in 0..self.n_clusters.max(1) {
            let (c_aoa, c_az, c_el, c_delay) = if c == 0 {
                (aoa, az, el, 0.0)
            } else {
                let j = |rng: &mut R| self.angle_spread * std_normal.sample(rng);
                let e = (el + 0.5 * j(rng)).clamp(0.05, PI - 0.05);
                (aoa + j(rng), az + j(rng), e, delay_exp.sample(rng))
            };
            let shadow: f64 = self.shadowing_db * std_normal.sample(rng);
            let power_db = -(c as f64) * self.cluster_decay_db + shadow;
            let cluster_power = 10f64.powf(power_db / 10.0);
            for _ in 0..self.paths_per_cluster.max(1) {
                raw.push(Path {
                    gain: cluster_power * (0.5 + rng.random::<f64>()),
                    phase: rng.random::<f64>() * TAU,
                    delay: c_delay + intra_exp.sample(rng),
                    aoa: c_aoa,
                    aod_az: c_az,
                    aod_el: c_el,
                });
            }
        }
        let total: f64 = raw.iter().map(|p| p.gain).sum();
        for p in &mut raw {
            p.gain *= pl / total;
        }
        let mut ps = PathSet::new(raw, bs_id, ue_id, 0)?;
        ps.sort_by_gain();
        Ok(ps)
    }

    /// Draw `n_locations` UEs, each linked to `n_bs` BSs over all time instants.
    /// Each link uses its own seed-derived streams.
    pub fn sample_scene(&self, scene: &SceneConfig, n_locations: usize, n_bs: usize) -> Result<Vec<LocationDraw>> {
        scene.validate()?;
        if n_locations == 0 {
            bail!(InvalidArgument, "n_locations must be at least 1");
        }
        if n_bs == 0 || n_bs > self.bs_positions.len() {
            bail!(InvalidArgument, "n_bs must be in 1..={}, got {}", self.bs_positions.len(), n_bs);
        }
        let nk = scene.n_subcarriers as f64;
        (0..n_locations)
            .map(|ue| {
                let ue_pos = self.ue_position(ue, n_locations);
                let links = (0..n_bs)
                    .map(|b| {
                        let bs = self.bs_positions[b];
                        let rel = [ue_pos[0] - bs[0], ue_pos[1] - bs[1], ue_pos[2] - bs[2]];
                        let mut link_rng = rng::stream(scene.rng_seed, domain::LINK, &[b as u64, ue as u64]);
                        let mut base = self.base_paths(rel, b as u32, ue as u32, &mut link_rng)?;
                        // Total gain N_k * path loss keeps per-subcarrier power independent of N_k.
                        for p in &mut base.paths {
                            p.gain *= nk;
                        }
                        let path_sets = (0..scene.n_times)
                            .map(|t| {
                                let mut r = rng::stream(scene.rng_seed, domain::TEMPORAL, &[b as u64, ue as u64, t as u64]);
                                perturb_temporal(&base, t as u32, &self.jitter, &mut r)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(LinkDraw { bs_id: b as u32, loc: rel, path_sets })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LocationDraw { ue_id: ue as u32, ue_pos, links })
            })
            .collect()
    }
}

/// One `(bs, ue)` entry of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub bs_id: u32,
    pub ue_id: u32,
    pub tensor: ChannelTensor,
}

/// Channels of a scene plus the normalisation applied before NN consumption.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub scene: SceneConfig,
    pub norm_scale: f64,
}

impl Dataset {
    /// Validates shapes and computes `norm_scale` as the RMS Frobenius norm
    /// of all `(entry, t)` slices.
    pub fn new(entries: Vec<DatasetEntry>, scene: SceneConfig) -> Result<Self> {
        let norm_scale = rms_norm(&entries)?;
        let ds = Self { entries, scene, norm_scale };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.norm_scale > 0.0 && self.norm_scale.is_finite()) {
            bail!(InvalidArgument, "norm_scale must be positive, got {}", self.norm_scale);
        }
        let shape = self.scene.tensor_shape();
        for e in &self.entries {
            if e.tensor.shape() != shape {
                bail!(ShapeMismatch, "entry ({}, {}) has shape {:?}, scene says {:?}", e.bs_id, e.ue_id, e.tensor.shape(), shape);
            }
        }
        Ok(())
    }

    pub fn entry(&self, bs_id: u32, ue_id: u32) -> Option<&DatasetEntry> {
        self.entries.iter().find(|e| e.bs_id == bs_id && e.ue_id == ue_id)
    }

    /// Sorted distinct UE ids.
    pub fn ue_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.ue_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn bs_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.bs_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Synthesise every link of a sampled scene.
    pub fn from_draws(draws: &[LocationDraw], scene: SceneConfig) -> Result<Self> {
        let mut entries = Vec::new();
        for b in 0..draws.first().map_or(0, |d| d.links.len()) {
            for d in draws {
                let link = &d.links[b];
                entries.push(DatasetEntry {
                    bs_id: link.bs_id,
                    ue_id: d.ue_id,
                    tensor: synth_tensor(&link.path_sets, &scene, link.loc)?,
                });
            }
        }
        Self::new(entries, scene)
    }
}

fn rms_norm(entries: &[DatasetEntry]) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for e in entries {
        for t in 0..e.tensor.n_times() {
            acc += e.tensor.time_slice(t).iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        bail!(InvalidArgument, "dataset has no channels");
    }
    let s = (acc / count as f64).sqrt();
    if !(s > 0.0) {
        bail!(Degenerate, "all channels are zero");
    }
    Ok(s)
}
