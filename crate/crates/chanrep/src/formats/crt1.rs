//! CRT1 channel dataset: an 8-byte magic, five `u32` dimensions, the `f64`
//! normalisation scale, then per entry its location and complex payload
//! (`f64` re/im pairs, t-major then subcarrier, rx, tx). Scene parameters and
//! entry keys live in a JSON sidecar next to the binary.

use std::path::{Path, PathBuf};

use chanrep_core::chanmodel::{ArrayGeometry, ChannelTensor, Dataset, DatasetEntry, SceneConfig};
use chanrep_core::C64;
use serde::{Deserialize, Serialize};

use super::Reader;
use crate::error::{read, read_json, write, write_json, HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"CRTENS01";
const HEADER_LEN: usize = 8 + 5 * 4 + 8;

/// Scene parameters as stored in the sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub n_subcarriers: usize,
    pub bandwidth_hz: f64,
    pub n_times: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub n_r: usize,
    pub phase_const: f64,
    pub noise_var: f64,
    pub rng_seed: u64,
}

impl From<&SceneConfig> for SceneRecord {
    fn from(s: &SceneConfig) -> Self {
        let g = &s.geometry;
        Self {
            n_subcarriers: s.n_subcarriers,
            bandwidth_hz: s.bandwidth,
            n_times: s.n_times,
            n_x: g.n_x,
            n_y: g.n_y,
            n_z: g.n_z,
            n_r: g.n_r,
            phase_const: g.phase_const,
            noise_var: s.noise_var,
            rng_seed: s.rng_seed,
        }
    }
}

impl SceneRecord {
    pub fn to_scene(&self) -> chanrep_core::Result<SceneConfig> {
        let scene = SceneConfig {
            n_subcarriers: self.n_subcarriers,
            bandwidth: self.bandwidth_hz,
            n_times: self.n_times,
            geometry: ArrayGeometry::new(self.n_x, self.n_y, self.n_z, self.n_r, self.phase_const)?,
            noise_var: self.noise_var,
            rng_seed: self.rng_seed,
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryKey {
    pub bs_id: u32,
    pub ue_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    /// `synthetic` or the path of the imported CSV.
    pub source: String,
    pub seed: u64,
    pub scene: SceneRecord,
    pub entries: Vec<EntryKey>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let [nt, nk, nr, ntx] = ds.scene.tensor_shape();
    let per = nt * nk * nr * ntx;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.entries.len() * (24 + 16 * per));
    out.extend_from_slice(MAGIC);
    for d in [ds.entries.len(), nt, nk, nr, ntx] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&ds.norm_scale.to_le_bytes());
    for e in &ds.entries {
        for x in e.tensor.loc {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for z in e.tensor.data() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

/// Parse a CRT1 payload; `path` only labels errors.
pub fn decode(bytes: &[u8], sidecar: &Sidecar, path: &Path) -> Result<Dataset> {
    let fail = |m: String| HarnessError::format(path, m);
    let mut r = Reader::new(bytes);
    if r.take(8) != Some(&MAGIC[..]) {
        return Err(fail("bad magic, expected CRTENS01".into()));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32().ok_or_else(|| fail("truncated header".into()))? as usize;
    }
    let norm_scale = r.f64().ok_or_else(|| fail("truncated header".into()))?;
    let [n_entries, nt, nk, nr, ntx] = dims;
    let scene = sidecar.scene.to_scene()?;
    if scene.tensor_shape() != [nt, nk, nr, ntx] {
        return Err(fail(format!("header shape {:?} disagrees with sidecar {:?}", [nt, nk, nr, ntx], scene.tensor_shape())));
    }
    if sidecar.entries.len() != n_entries {
        return Err(fail(format!("header has {} entries, sidecar lists {}", n_entries, sidecar.entries.len())));
    }
    let per = nt * nk * nr * ntx;
    let need = n_entries.checked_mul(24 + 16 * per).ok_or_else(|| fail("shape overflow".into()))?;
    if r.remaining() != need {
        return Err(fail(format!("payload is {} bytes, shape needs {}", r.remaining(), need)));
    }
    let mut entries = Vec::with_capacity(n_entries);
    for key in &sidecar.entries {
        let mut loc = [0.0; 3];
        for x in &mut loc {
            *x = r.f64().expect("length checked");
        }
        let data = (0..per).map(|_| C64::new(r.f64().expect("length checked"), r.f64().expect("length checked"))).collect();
        let tensor = ChannelTensor::new([nt, nk, nr, ntx], data, loc)?;
        entries.push(DatasetEntry { bs_id: key.bs_id, ue_id: key.ue_id, tensor });
    }
    let ds = Dataset { entries, scene, norm_scale };
    ds.validate()?;
    Ok(ds)
}

pub fn save(path: &Path, ds: &Dataset, source: &str, seed: u64) -> Result<()> {
    write(path, &encode(ds))?;
    let sidecar = Sidecar {
        format: "CRT1".into(),
        source: source.into(),
        seed,
        scene: SceneRecord::from(&ds.scene),
        entries: ds.entries.iter().map(|e| EntryKey { bs_id: e.bs_id, ue_id: e.ue_id }).collect(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = read(path)?;
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    decode(&bytes, &sidecar, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chanrep_core::chanmodel::SceneSampler;

    fn small() -> Dataset {
        let geometry = ArrayGeometry::new(2, 1, 1, 2, std::f64::consts::PI).unwrap();
        let scene = SceneConfig { n_subcarriers: 3, bandwidth: 1.92e6, n_times: 2, geometry, noise_var: 0.5, rng_seed: 4 };
        let draws = SceneSampler::default().sample_scene(&scene, 3, 2).unwrap();
        Dataset::from_draws(&draws, scene).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.crt1");
        let ds = small();
        save(&path, &ds, "synthetic", 4).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.norm_scale.to_bits(), ds.norm_scale.to_bits());
        for (a, b) in back.entries.iter().zip(&ds.entries) {
            assert_eq!((a.bs_id, a.ue_id), (b.bs_id, b.ue_id));
            assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
            assert_eq!(a.tensor.loc, b.tensor.loc);
        }
        assert_eq!(back, ds);
    }

    #[test]
    fn header_layout() {
        let ds = small();
        let bytes = encode(&ds);
        assert_eq!(&bytes[..8], b"CRTENS01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), HEADER_LEN + 6 * (24 + 16 * 2 * 3 * 2 * 2));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.crt1");
        let ds = small();
        save(&path, &ds, "synthetic", 4).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(HarnessError::Format { .. })));

        std::fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(matches!(load(&path), Err(HarnessError::Format { .. })));

        std::fs::write(&path, &good[..20]).unwrap();
        assert!(matches!(load(&path), Err(HarnessError::Format { .. })));

        std::fs::remove_file(&path).unwrap();
        assert_eq!(load(&path).unwrap_err().exit_code(), 3);
    }
}
