//! Import of ray-tracing exports: one CSV row per path with columns
//! `bs_id, ue_id, t, loc_x, loc_y, loc_z, gain_lin, phase_rad, delay_s,
//! aoa_deg, aod_az_deg, aod_el_deg`.

use std::collections::BTreeMap;
use std::path::Path;

use chanrep_core::chanmodel::{synth_tensor, Dataset, DatasetEntry, Path as RayPath, PathSet, SceneConfig};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Deserialize)]
struct Row {
    bs_id: u32,
    ue_id: u32,
    t: u32,
    loc_x: f64,
    loc_y: f64,
    loc_z: f64,
    gain_lin: f64,
    phase_rad: f64,
    delay_s: f64,
    aoa_deg: f64,
    aod_az_deg: f64,
    aod_el_deg: f64,
}

/// Path sets of one `(bs, ue)` link, ordered by `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedLink {
    pub bs_id: u32,
    pub ue_id: u32,
    pub loc: [f64; 3],
    pub path_sets: Vec<PathSet>,
}

/// Parse CSV text; `path` only labels errors.
pub fn parse(text: &str, path: &Path) -> Result<Vec<ImportedLink>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut groups: BTreeMap<(u32, u32), (BTreeMap<u32, Vec<RayPath>>, [f64; 3])> = BTreeMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| HarnessError::format(path, format!("row {}: {}", i + 1, e)))?;
        let loc = [row.loc_x, row.loc_y, row.loc_z];
        let ray = RayPath {
            gain: row.gain_lin,
            phase: row.phase_rad,
            delay: row.delay_s,
            aoa: row.aoa_deg.to_radians(),
            aod_az: row.aod_az_deg.to_radians(),
            aod_el: row.aod_el_deg.to_radians(),
        };
        let (times, first_loc) = groups.entry((row.bs_id, row.ue_id)).or_insert_with(|| (BTreeMap::new(), loc));
        if *first_loc != loc {
            return Err(HarnessError::format(path, format!("row {}: link ({}, {}) changes location", i + 1, row.bs_id, row.ue_id)));
        }
        times.entry(row.t).or_default().push(ray);
    }
    if groups.is_empty() {
        return Err(HarnessError::format(path, "no path rows"));
    }
    let mut links = Vec::with_capacity(groups.len());
    for ((bs_id, ue_id), (times, loc)) in groups {
        let path_sets = times
            .into_iter()
            .map(|(t, rays)| {
                let mut ps = PathSet::new(rays, bs_id, ue_id, t)
                    .map_err(|e| HarnessError::format(path, format!("link ({bs_id}, {ue_id}, t={t}): {e}")))?;
                ps.sort_by_gain();
                Ok(ps)
            })
            .collect::<Result<Vec<_>>>()?;
        links.push(ImportedLink { bs_id, ue_id, loc, path_sets });
    }
    Ok(links)
}

pub fn import(path: &Path) -> Result<Vec<ImportedLink>> {
    parse(&crate::error::read_string(path)?, path)
}

/// Synthesise a dataset from imported links. Every link must cover the same
/// time indices `0..N_t`; `scene.n_times` is replaced by that count.
pub fn to_dataset(links: &[ImportedLink], mut scene: SceneConfig, path: &Path) -> Result<Dataset> {
    let nt = links.first().map_or(0, |l| l.path_sets.len());
    for l in links {
        let contiguous = l.path_sets.iter().enumerate().all(|(i, p)| p.t_index as usize == i);
        if l.path_sets.len() != nt || !contiguous {
            return Err(HarnessError::format(path, format!("link ({}, {}) does not cover t = 0..{}", l.bs_id, l.ue_id, nt)));
        }
    }
    scene.n_times = nt;
    let mut entries = Vec::with_capacity(links.len());
    for l in links {
        entries.push(DatasetEntry { bs_id: l.bs_id, ue_id: l.ue_id, tensor: synth_tensor(&l.path_sets, &scene, l.loc)? });
    }
    Ok(Dataset::new(entries, scene)?)
}
