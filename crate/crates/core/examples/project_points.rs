//! Projects a few ego-frame points through a pinhole camera and prints the
//! pixel and depth bin each one lands in.
//!
//!     cargo run --example project_points

use bevlut::prelude::*;

const IDENTITY: [[f64; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

fn main() -> Result<()> {
    let k = [[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]];
    let cam = CameraModel::new(0, k, IDENTITY, 640, 480)?;
    let binning = DepthBinning::new(1.0, 61.0, 60)?;

    for p in [[0.0, 0.0, 10.0], [1.0, 0.5, 10.0], [0.0, 0.0, -5.0], [100.0, 0.0, 10.0], [0.0, 0.0, 75.0]] {
        match project(&cam, &binning, p)? {
            Some(hit) => println!("{p:?} -> u={} v={} bin={} (z={})", hit.u, hit.v, hit.depth_bin, hit.cam_depth),
            None => println!("{p:?} -> not visible"),
        }
    }

    // voxel centers of a small grid in front of the camera
    let grid = VoxelGrid::new([-1.0, -1.0, 4.0], [1.0, 1.0, 2.0], GridDims::new(2, 2, 2))?;
    for z in 0..2 {
        for y in 0..2 {
            for x in 0..2 {
                let c = grid.voxel_center(z, y, x)?;
                let hit = project(&cam, &binning, c)?.expect("grid is in view");
                println!("voxel ({z},{y},{x}) center {c:?} -> ({}, {}) bin {}", hit.u, hit.v, hit.depth_bin);
            }
        }
    }
    Ok(())
}
