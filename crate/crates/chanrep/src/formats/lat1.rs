//! LAT1 latent dump: magic `LAT1`, `u32` count, `u32` latent length, then
//! `f32` values row by row. Metadata goes to a JSON file alongside.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Reader;
use crate::error::{read, read_json, write, write_json, HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"LAT1";

/// Generation context for a block of `n_gen` consecutive rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBlock {
    pub bs_id: u32,
    pub ue_id: u32,
    pub loc: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMeta {
    pub seed: u64,
    pub n_gen: usize,
    pub blocks: Vec<LatentBlock>,
}

pub fn encode(latents: &[Vec<f64>]) -> Result<Vec<u8>> {
    let n_re = latents.first().map_or(0, |l| l.len());
    if latents.iter().any(|l| l.len() != n_re) {
        return Err(HarnessError::Config("latents of differing length".into()));
    }
    let mut out = Vec::with_capacity(12 + 4 * n_re * latents.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(latents.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n_re as u32).to_le_bytes());
    for v in latents.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f32>>> {
    let fail = |m: &str| HarnessError::format(path, m);
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(&MAGIC[..]) {
        return Err(fail("bad magic, expected LAT1"));
    }
    let n = r.u32().ok_or_else(|| fail("truncated header"))? as usize;
    let d = r.u32().ok_or_else(|| fail("truncated header"))? as usize;
    if r.remaining() != n * d * 4 {
        return Err(fail("payload length disagrees with header"));
    }
    Ok((0..n).map(|_| (0..d).map(|_| r.f32().expect("length checked")).collect()).collect())
}

pub fn save(path: &Path, latents: &[Vec<f64>], meta: &LatentMeta) -> Result<()> {
    write(path, &encode(latents)?)?;
    write_json(&path.with_extension("json"), meta)
}

pub fn load(path: &Path) -> Result<(Vec<Vec<f32>>, LatentMeta)> {
    let rows = decode(&read(path)?, path)?;
    let meta = read_json(&path.with_extension("json"))?;
    Ok((rows, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.lat1");
        let lat = vec![vec![0.5, -1.25, 3.0], vec![2.0, 0.0, -0.125]];
        let meta = LatentMeta { seed: 3, n_gen: 2, blocks: vec![LatentBlock { bs_id: 0, ue_id: 1, loc: [1.0, 2.0, 3.0] }] };
        save(&path, &lat, &meta).unwrap();
        let (rows, m) = load(&path).unwrap();
        assert_eq!(m, meta);
        assert_eq!(rows, vec![vec![0.5f32, -1.25, 3.0], vec![2.0, 0.0, -0.125]]);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LAT1");
        assert_eq!(bytes.len(), 12 + 24);
        assert!(decode(&bytes[..bytes.len() - 1], &path).is_err());
        assert!(encode(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
