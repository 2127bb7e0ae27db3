//! Generates a perturbed ring rig and its stacks, writes the calibration as
//! JSON and the stacks as FBTN tensors, and reads everything back.
//!
//!     cargo run --example synthetic_rig_io -- [dir]

use std::path::PathBuf;

use bevlut::prelude::*;
use bevlut::synthio::{load_calibration, save_calibration, Perturbation};

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("bevlut_rig"));
    std::fs::create_dir_all(&dir)?;

    let spec = RigSpec::ring(5).with_perturbation(Perturbation { seed: 42, yaw_deg: 3.0, translation_m: 0.2 });
    let cams = make_rig(&spec)?;
    let binning = DepthBinning::new(0.5, 50.5, 25)?;
    for cam in &cams {
        let e = cam.extrinsic();
        println!("camera {}: forward row [{:.3}, {:.3}, {:.3}] t_z {:.3}", cam.cam_id(), e[2][0], e[2][1], e[2][2], e[2][3]);
    }

    let calib = dir.join("calib.json");
    save_calibration(&calib, &cams)?;
    assert_eq!(load_calibration(&calib)?, cams);

    let stacks = StackSpec { channels: 4, features: FeatureGen::CoordinateEncoded, depth: DepthGen::SoftmaxRandom { seed: 1 } };
    let (features, depth) = make_stacks(&stacks, &cams, &binning)?;
    let (fpath, dpath) = (dir.join("features.fbtn"), dir.join("depth.fbtn"));
    Tensor::from(&features).save(&fpath)?;
    Tensor::from(&depth).save(&dpath)?;

    let features_back = FeatureStack::try_from(Tensor::load(&fpath)?)?;
    let depth_back = DepthStack::try_from(Tensor::load(&dpath)?)?;
    assert_eq!(features_back, features);
    assert_eq!(depth_back, depth);

    let sums: Vec<f32> = (0..binning.bins() as usize).map(|b| depth.prob(0, b, 0, 0)).collect();
    println!("pixel (0,0) of camera 0 sums to {:.6}", sums.iter().sum::<f32>());
    println!("wrote {}, {} and {}", calib.display(), fpath.display(), dpath.display());
    Ok(())
}
