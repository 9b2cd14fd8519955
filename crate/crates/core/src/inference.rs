//! Benjamini–Hochberg FDR, suprathreshold clusters and cluster tables.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::StatMaps;
use crate::volume_io::{Dims3, Mask3D};

#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub q: f64,
    /// Largest rejected p-value; 0 when nothing is rejected.
    pub p_threshold: f64,
    pub rejected: Vec<bool>,
    pub adjusted_p: Vec<f64>,
}

impl FdrResult {
    pub fn n_rejected(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// Benjamini–Hochberg step-up procedure at level `q`.
pub fn fdr_bh(p: &[f64], q: f64) -> Result<FdrResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("FDR level q = {q} must lie in (0, 1)")));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("p-value {v} at index {i} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));

    let mut k_star = None;
    for (k, &i) in order.iter().enumerate() {
        if p[i] <= (k + 1) as f64 * q / m as f64 {
            k_star = Some(k);
        }
    }
    let p_threshold = k_star.map_or(0.0, |k| p[order[k]]);
    let rejected = p
        .iter()
        .map(|&v| k_star.is_some() && v <= p_threshold)
        .collect();

    let mut adjusted_p = vec![1.0; m];
    let mut running = 1.0f64;
    for (k, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p[i] / (k + 1) as f64);
        // m/k >= 1, so the max only undoes rounding
        adjusted_p[i] = running.max(p[i]).min(1.0);
    }
    Ok(FdrResult {
        q,
        p_threshold,
        rejected,
        adjusted_p,
    })
}

/// FDR over the voxels of `mask` only; others are never rejected and get an
/// adjusted p of 1.
pub fn fdr_masked(p: &[f64], mask: &[bool], q: f64) -> Result<FdrResult> {
    if p.len() != mask.len() {
        return Err(Error::Shape(format!("{} p-values, {} mask entries", p.len(), mask.len())));
    }
    let idx: Vec<usize> = (0..p.len()).filter(|&i| mask[i]).collect();
    let sub: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
    let r = fdr_bh(&sub, q)?;
    let mut rejected = vec![false; p.len()];
    let mut adjusted_p = vec![1.0; p.len()];
    for (k, &i) in idx.iter().enumerate() {
        rejected[i] = r.rejected[k];
        adjusted_p[i] = r.adjusted_p[k];
    }
    Ok(FdrResult {
        q,
        p_threshold: r.p_threshold,
        rejected,
        adjusted_p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Faces and edges.
    Eighteen,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let n = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::Eighteen => n == 1 || n == 2,
                        Connectivity::TwentySix => n >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    pub fn neighbours(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Domain(format!("connectivity must be 6, 18 or 26, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Member voxels in scan order.
    pub voxel_ids: Vec<usize>,
    pub n_voxels: usize,
    pub peak_voxel: usize,
    pub peak_t: f64,
    pub peak_z: f64,
    pub peak_p: f64,
    pub centroid_vox: [f64; 3],
}

/// Connected components of `mask` under `conn`, each as a sorted member list.
pub fn connected_components(mask: &Mask3D, conn: Connectivity) -> Vec<Vec<usize>> {
    let dims = mask.dims();
    let offsets = conn.offsets();
    let mut seen = vec![false; dims.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..dims.len() {
        if !mask.contains(start) || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(v) = queue.pop_front() {
            members.push(v);
            let c = dims.coords(v);
            for &o in &offsets {
                if let Some(n) = dims.offset(c, o) {
                    if mask.contains(n) && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

fn summarize(members: Vec<usize>, dims: Dims3, stats: &StatMaps) -> Cluster {
    let mut peak = members[0];
    for &v in &members[1..] {
        if stats.t[v] > stats.t[peak] {
            peak = v;
        }
    }
    let mut centroid = [0.0; 3];
    for &v in &members {
        let c = dims.coords(v);
        for a in 0..3 {
            centroid[a] += c[a] as f64;
        }
    }
    let n = members.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    Cluster {
        n_voxels: members.len(),
        peak_voxel: peak,
        peak_t: stats.t[peak],
        peak_z: stats.z[peak],
        peak_p: stats.p[peak],
        centroid_vox: centroid,
        voxel_ids: members,
    }
}

/// Clusters of the rejection mask, largest first (ties: higher peak t first).
pub fn extract_clusters(rejected: &Mask3D, stats: &StatMaps, conn: Connectivity) -> Result<Vec<Cluster>> {
    let dims = rejected.dims();
    if stats.len() != dims.len() {
        return Err(Error::Shape(format!(
            "statistic maps have {} voxels, mask has {}",
            stats.len(),
            dims.len()
        )));
    }
    let mut clusters: Vec<Cluster> = connected_components(rejected, conn)
        .into_iter()
        .map(|m| summarize(m, dims, stats))
        .collect();
    clusters.sort_by(|a, b| {
        b.n_voxels
            .cmp(&a.n_voxels)
            .then(b.peak_t.total_cmp(&a.peak_t))
            .then(a.voxel_ids[0].cmp(&b.voxel_ids[0]))
    });
    Ok(clusters)
}

/// One row of a cluster report, in output column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub rank: usize,
    pub n_voxels: usize,
    pub peak_p: f64,
    pub peak_t: f64,
    pub peak_z: f64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
}

pub const CLUSTER_CSV_HEADER: &str = "rank,n_voxels,peak_p,peak_t,peak_z,cx,cy,cz";

pub fn cluster_table(clusters: &[Cluster]) -> Vec<ClusterRow> {
    clusters
        .iter()
        .enumerate()
        .map(|(i, c)| ClusterRow {
            rank: i + 1,
            n_voxels: c.n_voxels,
            peak_p: c.peak_p,
            peak_t: c.peak_t,
            peak_z: c.peak_z,
            cx: c.centroid_vox[0],
            cy: c.centroid_vox[1],
            cz: c.centroid_vox[2],
        })
        .collect()
}

pub fn table_to_csv(rows: &[ClusterRow]) -> String {
    let mut s = String::from(CLUSTER_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6e},{:.6},{:.6},{:.4},{:.4},{:.4}",
            r.rank, r.n_voxels, r.peak_p, r.peak_t, r.peak_z, r.cx, r.cy, r.cz
        );
    }
    s
}

pub fn table_to_json(rows: &[ClusterRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}
