//! Runs the decomposed pipeline one stage at a time: gather features,
//! gather depth weights, modulate in place, place into the BEV volume.
//!
//!     cargo run --example depth_modulated_transform

use bevlut::prelude::*;

fn main() -> Result<()> {
    let cams = make_rig(&RigSpec::ring6())?;
    let binning = DepthBinning::new(1.0, 61.0, 60)?;
    let grid = VoxelGrid::new([-25.0, -25.0, -2.0], [1.0; 3], GridDims::new(4, 50, 50))?;
    let g = build_index_graph(&grid, &cams, &binning)?;

    let spec = StackSpec { channels: 16, features: FeatureGen::Uniform { seed: 7 }, depth: DepthGen::SoftmaxRandom { seed: 8 } };
    let (features, depth) = make_stacks(&spec, &cams, &binning)?;
    println!("features {:?}, depth {:?}", features.shape(), depth.shape());

    let flat = gather_features(&features, &g)?;
    let weights = gather_depth_weights(&depth, &g)?;
    let flat = modulate(flat, &weights)?;
    let ptr = flat.as_slice().as_ptr();
    let bev = place(flat, g.dims())?;
    println!("bev {:?}, same buffer as the flat rows: {}", bev.shape(), bev.as_slice().as_ptr() == ptr);

    let direct = transform(&features, Some(&depth), &g)?;
    assert!(direct.bit_eq(&bev));

    let (i, e) = g.entries().iter().enumerate().find_map(|(i, e)| e.map(|e| (i, e))).expect("some voxel is covered");
    let (z, y, x) = g.dims().unlinear(i);
    println!(
        "voxel ({z},{y},{x}) reads camera {} pixel ({}, {}) bin {}: weight {:.4}",
        e.cam, e.u, e.v, e.depth_bin, weights[i]
    );
    println!("  feature {:?}", &features.pixel(e.cam as usize, e.v as usize, e.u as usize)[..4]);
    println!("  bev     {:?}", &bev.voxel(z, y, x)[..4]);

    let nonzero = weights.iter().filter(|&&w| w > 0.0).count();
    println!("{nonzero} voxels carry a nonzero depth weight");
    Ok(())
}
