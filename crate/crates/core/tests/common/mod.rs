//! Shared fixtures and a naive brute-force transform for integration tests.
//!
//! `brute_force` does not call into the library's projection, index graph
//! or pipelines. It loops voxels × cameras, projects with the full
//! homogeneous product `K · (R p + t)` and writes into nested vectors. Only
//! plain data is read from the library types.
#![allow(dead_code)]

use bevlut::prelude::*;

pub const FIXTURE_DIMS: GridDims = GridDims { z: 4, h: 50, w: 50 };

/// Counts from `fixtures/ring6_coverage.py`.
pub const FIXTURE_VALID: usize = 9864;
pub const FIXTURE_PER_CAMERA: [usize; 6] = [1724, 1712, 1786, 1434, 1712, 1496];

pub fn ring6() -> Vec<CameraModel> {
    make_rig(&RigSpec::ring6()).unwrap()
}

pub fn fixture_binning() -> DepthBinning {
    DepthBinning::new(1.0, 61.0, 60).unwrap()
}

pub fn fixture_grid() -> VoxelGrid {
    VoxelGrid::new([-25.0, -25.0, -2.0], [1.0, 1.0, 1.0], FIXTURE_DIMS).unwrap()
}

pub fn fixture_config(depth_mode: bool) -> MonolithicConfig {
    MonolithicConfig { grid: fixture_grid(), cams: ring6(), binning: fixture_binning(), depth_mode }
}

/// Per-voxel winner as `(camera slot, u, v, bin)`, in `[z][y][x]` order.
pub type Owners = Vec<Vec<Vec<Option<(usize, usize, usize, usize)>>>>;

fn naive_hit(cam: &CameraModel, binning: &DepthBinning, p: [f64; 3]) -> Option<(usize, usize, usize)> {
    let e = cam.extrinsic();
    let k = cam.intrinsics();
    let mut pc = [0.0f64; 3];
    for (r, out) in pc.iter_mut().enumerate() {
        *out = e[r][0] * p[0] + e[r][1] * p[1] + e[r][2] * p[2] + e[r][3];
    }
    if pc[2] <= 1e-6 {
        return None;
    }
    let mut h = [0.0f64; 3];
    for (r, out) in h.iter_mut().enumerate() {
        *out = k[r][0] * pc[0] + k[r][1] * pc[1] + k[r][2] * pc[2];
    }
    let (u, v) = (h[0] / h[2], h[1] / h[2]);
    if u < 0.0 || v < 0.0 || u >= cam.width() as f64 || v >= cam.height() as f64 {
        return None;
    }
    let depth = pc[2];
    if depth < binning.d_min() || depth >= binning.d_max() {
        return None;
    }
    let bins = binning.bins() as usize;
    let bin = (((depth - binning.d_min()) * bins as f64 / (binning.d_max() - binning.d_min())) as usize).min(bins - 1);
    Some((u as usize, v as usize, bin))
}

pub fn brute_force_owners(grid: &VoxelGrid, cams: &[CameraModel], binning: &DepthBinning) -> Owners {
    let d = grid.dims();
    let (o, s) = (grid.origin(), grid.voxel_size());
    let mut owners = vec![vec![vec![None; d.w]; d.h]; d.z];
    for (z, plane) in owners.iter_mut().enumerate() {
        for (y, row) in plane.iter_mut().enumerate() {
            for (x, cell) in row.iter_mut().enumerate() {
                let p = [o[0] + (x as f64 + 0.5) * s[0], o[1] + (y as f64 + 0.5) * s[1], o[2] + (z as f64 + 0.5) * s[2]];
                // painter's order: later writes lose to earlier cameras
                for (slot, cam) in cams.iter().enumerate().rev() {
                    if let Some((u, v, bin)) = naive_hit(cam, binning, p) {
                        *cell = Some((slot, u, v, bin));
                    }
                }
            }
        }
    }
    owners
}

/// Dense `[Z][H][W][C]` output flattened row-major.
pub fn brute_force(
    grid: &VoxelGrid,
    cams: &[CameraModel],
    binning: &DepthBinning,
    features: &FeatureStack,
    depth: Option<&DepthStack>,
) -> Vec<f32> {
    let [_, ih, iw, c] = features.shape();
    let bins = binning.bins() as usize;
    let owners = brute_force_owners(grid, cams, binning);
    let mut out = Vec::with_capacity(grid.num_voxels() * c);
    for plane in &owners {
        for row in plane {
            for cell in row {
                match *cell {
                    None => out.extend(std::iter::repeat_n(0.0f32, c)),
                    Some((cam, u, v, bin)) => {
                        let base = ((cam * ih + v) * iw + u) * c;
                        let w = depth.map(|d| d.values()[((cam * bins + bin) * ih + v) * iw + u]);
                        for k in 0..c {
                            let f = features.values()[base + k];
                            out.push(match w {
                                Some(w) => f * w,
                                None => f,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn owner_counts(owners: &Owners, num_cams: usize) -> (usize, Vec<usize>) {
    let mut per = vec![0; num_cams];
    for cell in owners.iter().flatten().flatten().flatten() {
        per[cell.0] += 1;
    }
    (per.iter().sum(), per)
}

pub fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|f| f.to_bits()).collect()
}
