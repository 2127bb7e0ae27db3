//! Builds the index graph for the six-camera ring, prints coverage, then
//! saves it, reloads it and checks the fingerprint against the rig.
//!
//!     cargo run --example build_lut -- [out.fblt]

use bevlut::indexgraph::fingerprint;
use bevlut::prelude::*;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("ring6.fblt").display().to_string());

    let cams = make_rig(&RigSpec::ring6())?;
    let binning = DepthBinning::new(1.0, 61.0, 60)?;
    let grid = VoxelGrid::new([-25.0, -25.0, -2.0], [1.0; 3], GridDims::new(4, 50, 50))?;

    let t = std::time::Instant::now();
    let g = build_index_graph(&grid, &cams, &binning)?;
    println!("built {} graph in {:?}", g.dims(), t.elapsed());

    let stats = coverage_stats(&g);
    println!("valid {}/{} voxels", stats.valid_count, g.num_voxels());
    for (slot, n) in stats.per_camera.iter().enumerate() {
        println!("  camera {slot}: {n}");
    }
    let l = g.layout();
    println!("feature pad row {}, depth pad element {}", l.feature_pad(), l.depth_pad());

    g.save(&out)?;
    let bytes = std::fs::read(&out)?;
    println!("wrote {out} ({} bytes, fingerprint {:016x})", bytes.len(), g.fingerprint());

    let expected = fingerprint(&grid, &cams, &binning);
    let back = IndexGraph::from_bytes_checked(&bytes, expected, FingerprintCheck::Strict)?;
    assert_eq!(back, g);

    // a rig that moved slightly no longer matches
    let moved = make_rig(&RigSpec::ring6().with_perturbation(bevlut::synthio::Perturbation {
        seed: 1,
        yaw_deg: 0.5,
        translation_m: 0.0,
    }))?;
    match IndexGraph::from_bytes_checked(&bytes, fingerprint(&grid, &moved, &binning), FingerprintCheck::Strict) {
        Err(e) => println!("perturbed rig rejected: {e}"),
        Ok(_) => unreachable!("fingerprints should differ"),
    }
    Ok(())
}
