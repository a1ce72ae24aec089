//! Two-dimensional PCA view of the encoder's representations.

use chanrep_core::pca::{cluster_ratio, project2d, Projection};
use chanrep_core::repr::Representation;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{write, Result};
use crate::pipeline::{self, Layout};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectReport {
    pub points: usize,
    pub variance: [f64; 2],
    pub degenerate: bool,
    /// Mean intra-link over mean inter-link distance in the plane.
    pub cluster_ratio: Option<f64>,
}

/// Project representations and label each point by its `(bs, ue)` link.
pub fn project(reps: &[Representation]) -> Result<(Projection, ProjectReport)> {
    let data: Vec<&[f64]> = reps.iter().map(|r| r.f.as_slice()).collect();
    let proj = project2d(&data)?;
    let mut links: Vec<(u32, u32)> = reps.iter().map(|r| (r.bs_id, r.ue_id)).collect();
    links.sort_unstable();
    links.dedup();
    let labels: Vec<usize> = reps.iter().map(|r| links.binary_search(&(r.bs_id, r.ue_id)).expect("present")).collect();
    let ratio = if proj.degenerate { None } else { cluster_ratio(&proj.points, &labels).ok() };
    let report = ProjectReport { points: reps.len(), variance: proj.variance, degenerate: proj.degenerate, cluster_ratio: ratio };
    Ok((proj, report))
}

/// `bs_id,ue_id,t,pc1,pc2`.
pub fn render(reps: &[Representation], proj: &Projection) -> String {
    let mut out = String::from("bs_id,ue_id,t,pc1,pc2\n");
    for (r, p) in reps.iter().zip(&proj.points) {
        out.push_str(&format!("{},{},{},{},{}\n", r.bs_id, r.ue_id, r.t, p[0], p[1]));
    }
    out
}

pub fn run_project2d(cfg: &ExperimentConfig, layout: &Layout) -> Result<ProjectReport> {
    let ds = pipeline::load_dataset(cfg, layout)?;
    let reps = pipeline::representations(cfg, layout, &ds)?;
    let (proj, report) = project(&reps)?;
    write(&layout.project2d(), render(&reps, &proj).as_bytes())?;
    Ok(report)
}
