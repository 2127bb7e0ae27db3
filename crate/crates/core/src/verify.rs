//! Randomized equivalence checks between the monolithic reference, the
//! decomposed pipeline and the operator-graph interpreter.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{transform, BevVolume};
use crate::error::Result;
use crate::geometry::{CameraModel, DepthBinning, GridDims, VoxelGrid};
use crate::indexgraph::build_index_graph;
use crate::opgraph::{interpret, lower, GraphInputs};
use crate::oracle::{transform_monolithic, MonolithicConfig};
use crate::synthio::{make_rig, make_stacks, DepthGen, FeatureGen, Perturbation, RigSpec, StackSpec};

/// Largest grid a random case may draw.
pub const MAX_GRID: GridDims = GridDims { z: 8, h: 128, w: 128 };
pub const CHANNEL_CHOICES: [usize; 3] = [4, 32, 64];
pub const BIN_CHOICES: [u32; 2] = [8, 60];

#[derive(Debug, Clone)]
pub struct Case {
    pub index: usize,
    pub grid: VoxelGrid,
    pub cams: Vec<CameraModel>,
    pub binning: DepthBinning,
    pub stacks: StackSpec,
    pub depth_mode: bool,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "case {}: grid {} cams {} image {}x{} C={} D={} depth={} features={:?}",
            self.index,
            self.grid.dims(),
            self.cams.len(),
            self.cams[0].height(),
            self.cams[0].width(),
            self.stacks.channels,
            self.binning.bins(),
            if self.depth_mode { "on" } else { "off" },
            self.stacks.features,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// Which pipeline disagreed with the monolithic reference.
    pub pipeline: &'static str,
    pub voxel: (usize, usize, usize),
    pub channel: usize,
    pub expected: f32,
    pub actual: f32,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (z, y, x) = self.voxel;
        write!(
            f,
            "{} differs at voxel (z={z}, y={y}, x={x}) channel {}: expected {:e}, got {:e}",
            self.pipeline, self.channel, self.expected, self.actual
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub valid_voxels: usize,
    pub num_voxels: usize,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone)]
pub struct VerifySummary {
    pub cases: usize,
    pub failures: Vec<(String, Divergence)>,
    /// Cases where at least one voxel was covered.
    pub nonempty_cases: usize,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Draws one configuration. With `rig` set, only grid, binning and stacks
/// are randomized.
pub fn random_case(rng: &mut ChaCha8Rng, index: usize, rig: Option<&[CameraModel]>) -> Result<Case> {
    let cams = match rig {
        Some(r) => r.to_vec(),
        None => {
            let count = rng.gen_range(1..=8);
            let spec = RigSpec {
                width: rng.gen_range(8..=96),
                height: rng.gen_range(6..=64),
                hfov_deg: rng.gen_range(40.0..120.0),
                ..RigSpec::ring(count)
            };
            let spec = if rng.gen_bool(0.5) {
                spec.with_perturbation(Perturbation {
                    seed: rng.gen(),
                    yaw_deg: rng.gen_range(0.0..15.0),
                    translation_m: rng.gen_range(0.0..1.0),
                })
            } else {
                spec
            };
            make_rig(&spec)?
        }
    };
    let bins = BIN_CHOICES[rng.gen_range(0..BIN_CHOICES.len())];
    let binning = DepthBinning::new(rng.gen_range(0.2..2.0), rng.gen_range(20.0..80.0), bins)?;

    let dims = GridDims::new(rng.gen_range(1..=MAX_GRID.z), rng.gen_range(1..=MAX_GRID.h), rng.gen_range(1..=MAX_GRID.w));
    let half = rng.gen_range(4.0..60.0);
    let (z_lo, z_hi) = (rng.gen_range(-4.0..-0.5), rng.gen_range(0.5..4.0));
    let grid = VoxelGrid::new(
        [-half, -half, z_lo],
        [2.0 * half / dims.w as f64, 2.0 * half / dims.h as f64, (z_hi - z_lo) / dims.z as f64],
        dims,
    )?;

    let channels = CHANNEL_CHOICES[rng.gen_range(0..CHANNEL_CHOICES.len())];
    let pixels = cams.len() * cams[0].height() as usize * cams[0].width() as usize;
    let features = if rng.gen_bool(0.5) && pixels * channels < (1 << 24) {
        FeatureGen::CoordinateEncoded
    } else {
        FeatureGen::Uniform { seed: rng.gen() }
    };
    let depth = match rng.gen_range(0..4) {
        0 => DepthGen::Ones,
        1 => DepthGen::DeltaAtBin(rng.gen_range(0..bins as usize)),
        _ => DepthGen::SoftmaxRandom { seed: rng.gen() },
    };
    Ok(Case {
        index,
        grid,
        cams,
        binning,
        stacks: StackSpec { channels, features, depth },
        depth_mode: rng.gen_bool(0.5),
    })
}

fn divergence(pipeline: &'static str, expected: &BevVolume, actual: &BevVolume) -> Option<Divergence> {
    let (voxel, channel) = actual.first_difference(expected)?;
    let c = expected.channels();
    Some(Divergence {
        pipeline,
        voxel: expected.dims().unlinear(voxel),
        channel,
        expected: expected.as_slice().get(voxel * c + channel).copied().unwrap_or(f32::NAN),
        actual: actual.as_slice().get(voxel * c + channel).copied().unwrap_or(f32::NAN),
    })
}

/// Runs all three pipelines on one case and compares them bit for bit.
pub fn run_case(case: &Case) -> Result<CaseReport> {
    let (features, depth) = make_stacks(&case.stacks, &case.cams, &case.binning)?;
    let depth = case.depth_mode.then_some(&depth);
    let cfg = MonolithicConfig {
        grid: case.grid.clone(),
        cams: case.cams.clone(),
        binning: case.binning,
        depth_mode: case.depth_mode,
    };
    let reference = transform_monolithic(&cfg, &features, depth)?;
    let g = build_index_graph(&case.grid, &case.cams, &case.binning)?;
    let decomposed = transform(&features, depth, &g)?;
    let graph = lower(&g, case.depth_mode);
    let interpreted = interpret(&graph, GraphInputs { features: &features, depth })?;

    let divergence =
        divergence("decomposed", &reference, &decomposed).or_else(|| divergence("opgraph", &reference, &interpreted));
    Ok(CaseReport {
        valid_voxels: g.entries().iter().filter(|e| e.is_some()).count(),
        num_voxels: g.num_voxels(),
        divergence,
    })
}

/// Runs `cases` random cases from `seed`. Configuration errors propagate;
/// disagreements are collected.
pub fn verify_random(seed: u64, cases: usize, rig: Option<&[CameraModel]>) -> Result<VerifySummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = VerifySummary { cases, failures: Vec::new(), nonempty_cases: 0 };
    for index in 0..cases {
        let case = random_case(&mut rng, index, rig)?;
        let report = run_case(&case)?;
        if report.valid_voxels > 0 {
            summary.nonempty_cases += 1;
        }
        if let Some(d) = report.divergence {
            summary.failures.push((case.to_string(), d));
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for i in 0..5 {
            assert_eq!(random_case(&mut a, i, None).unwrap().to_string(), random_case(&mut b, i, None).unwrap().to_string());
        }
    }

    #[test]
    fn small_suite_passes() {
        let s = verify_random(11, 6, None).unwrap();
        assert!(s.passed(), "{:?}", s.failures);
    }

    #[test]
    fn fixed_rig_is_kept() {
        let rig = make_rig(&RigSpec::ring6()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let case = random_case(&mut rng, 0, Some(&rig)).unwrap();
        assert_eq!(case.cams, rig);
    }

    #[test]
    fn divergence_reports_the_first_voxel() {
        let dims = GridDims::new(1, 2, 2);
        let a = BevVolume::zeros(dims, 2);
        let mut b = a.clone();
        b.as_mut_slice()[5] = 1.0;
        let d = divergence("decomposed", &a, &b).unwrap();
        assert_eq!((d.voxel, d.channel, d.actual), ((0, 1, 0), 1, 1.0));
    }
}
