//! The monolithic reference transformation: every call re-projects every
//! voxel center through the cameras and copies the winning pixel straight
//! into the output. It keeps no index graph, so it is both the correctness
//! oracle for the decomposed path and its benchmark baseline.

use rayon::prelude::*;

use crate::aggregation::{BevVolume, DepthStack, FeatureStack};
use crate::error::{Error, Result};
use crate::geometry::{project_finite, CameraModel, DepthBinning, VoxelGrid};
use crate::indexgraph::rig_layout;

#[derive(Debug, Clone)]
pub struct MonolithicConfig {
    pub grid: VoxelGrid,
    pub cams: Vec<CameraModel>,
    pub binning: DepthBinning,
    pub depth_mode: bool,
}

impl MonolithicConfig {
    fn check(&self, stack: &FeatureStack, depth: Option<&DepthStack>) -> Result<()> {
        let layout = rig_layout(&self.cams, &self.binning)?;
        if (stack.num_cams(), stack.height(), stack.width()) != (layout.num_cams, layout.img_h, layout.img_w) {
            return Err(Error::config(format!(
                "feature stack {:?} does not match the rig ({} cameras, {}x{})",
                stack.shape(),
                layout.num_cams,
                layout.img_h,
                layout.img_w
            )));
        }
        if self.depth_mode {
            let depth = depth.ok_or_else(|| Error::arg("depth mode is on but no depth stack was given"))?;
            if depth.shape() != [layout.num_cams, layout.depth_bins, layout.img_h, layout.img_w] {
                return Err(Error::config(format!("depth stack {:?} does not match the rig", depth.shape())));
            }
        }
        Ok(())
    }
}

/// Single-threaded reference transform.
pub fn transform_monolithic(
    cfg: &MonolithicConfig,
    stack: &FeatureStack,
    depth: Option<&DepthStack>,
) -> Result<BevVolume> {
    cfg.check(stack, depth)?;
    let dims = cfg.grid.dims();
    let mut out = BevVolume::zeros(dims, stack.channels());
    let c = stack.channels();
    let data = out.as_mut_slice();
    for z in 0..dims.z {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let i = dims.linear(z, y, x);
                fill_voxel(cfg, stack, depth, z, y, x, &mut data[i * c..(i + 1) * c]);
            }
        }
    }
    Ok(out)
}

/// Same result as [`transform_monolithic`], split over z-slices on the
/// current rayon pool. Exists for benchmark parity.
pub fn transform_monolithic_par(
    cfg: &MonolithicConfig,
    stack: &FeatureStack,
    depth: Option<&DepthStack>,
) -> Result<BevVolume> {
    cfg.check(stack, depth)?;
    let dims = cfg.grid.dims();
    let mut out = BevVolume::zeros(dims, stack.channels());
    let c = stack.channels();
    out.as_mut_slice().par_chunks_mut(dims.w * c).enumerate().for_each(|(zy, line)| {
        let (z, y) = (zy / dims.h, zy % dims.h);
        for x in 0..dims.w {
            fill_voxel(cfg, stack, depth, z, y, x, &mut line[x * c..(x + 1) * c]);
        }
    });
    Ok(out)
}

#[inline]
fn fill_voxel(
    cfg: &MonolithicConfig,
    stack: &FeatureStack,
    depth: Option<&DepthStack>,
    z: usize,
    y: usize,
    x: usize,
    out: &mut [f32],
) {
    let center = cfg.grid.center_unchecked(z, y, x);
    let hit = cfg
        .cams
        .iter()
        .enumerate()
        .find_map(|(slot, cam)| project_finite(cam, &cfg.binning, center).map(|hit| (slot, hit)));
    let Some((slot, hit)) = hit else {
        return;
    };
    let (u, v) = (hit.u as usize, hit.v as usize);
    out.copy_from_slice(stack.pixel(slot, v, u));
    if cfg.depth_mode {
        if let Some(depth) = depth {
            let w = depth.prob(slot, hit.depth_bin as usize, v, u);
            out.iter_mut().for_each(|f| *f *= w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridDims;

    const IDENTITY: [[f64; 4]; 4] =
        [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

    fn config(origin_z: f64, depth_mode: bool) -> MonolithicConfig {
        let k = [[10.0, 0.0, 4.0], [0.0, 10.0, 3.0], [0.0, 0.0, 1.0]];
        MonolithicConfig {
            grid: VoxelGrid::new([-2.0, -2.0, origin_z], [1.0; 3], GridDims::new(2, 4, 4)).unwrap(),
            cams: vec![CameraModel::new(0, k, IDENTITY, 8, 6).unwrap()],
            binning: DepthBinning::new(1.0, 21.0, 4).unwrap(),
            depth_mode,
        }
    }

    fn stack() -> FeatureStack {
        FeatureStack::new(1, 6, 8, 2, (0..96).map(|i| i as f32 + 1.0).collect()).unwrap()
    }

    #[test]
    fn empty_frustum_gives_zero_volume() {
        let vol = transform_monolithic(&config(-10.0, false), &stack(), None).unwrap();
        assert!(vol.as_slice().iter().all(|&v| v.to_bits() == 0));
    }

    #[test]
    fn ones_depth_matches_depth_off() {
        let ones = DepthStack::new(1, 4, 6, 8, vec![1.0; 192]).unwrap();
        let on = transform_monolithic(&config(2.0, true), &stack(), Some(&ones)).unwrap();
        let off = transform_monolithic(&config(2.0, false), &stack(), None).unwrap();
        assert!(on.bit_eq(&off));
        assert!(off.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn parallel_mode_matches_sequential() {
        let depth = DepthStack::new(1, 4, 6, 8, (0..192).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let cfg = config(2.0, true);
        let a = transform_monolithic(&cfg, &stack(), Some(&depth)).unwrap();
        let b = transform_monolithic_par(&cfg, &stack(), Some(&depth)).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn depth_mode_requires_depth() {
        assert!(matches!(transform_monolithic(&config(2.0, true), &stack(), None), Err(Error::Argument(_))));
    }
}
