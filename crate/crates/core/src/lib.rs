//! Camera-to-BEV feature transformation by precomputed index graphs.
//!
//! The geometry (projection of every voxel center into a fixed camera rig)
//! is resolved once into an [`IndexGraph`]. The per-frame transform is then
//! two gathers, an element-wise multiply and a reshape, which also lowers to
//! a small operator graph built only from whitelisted kinds.
//!
//! Runnable examples live in `examples/`:
//!
//! * `project_points`: pinhole projection and depth binning
//! * `build_lut`: build, inspect, save and reload an index graph
//! * `depth_modulated_transform`: the decomposed pipeline step by step
//! * `oracle_equivalence`: decomposed vs monolithic reference
//! * `operator_graph`: lowering, validation, export and interpretation
//! * `synthetic_rig_io`: synthetic rigs, calibration files and tensors
//! * `bench_contrast`: timing the pipelines against each other
//!
//! ```
//! use bevlut::prelude::*;
//!
//! let cams = make_rig(&RigSpec::ring6()).unwrap();
//! let binning = DepthBinning::new(1.0, 61.0, 8).unwrap();
//! let grid = VoxelGrid::new([-20.0, -20.0, -1.0], [2.5, 2.5, 2.0], GridDims::new(1, 16, 16)).unwrap();
//! let g = build_index_graph(&grid, &cams, &binning).unwrap();
//! let spec = StackSpec { channels: 4, features: FeatureGen::CoordinateEncoded, depth: DepthGen::Ones };
//! let (features, depth) = make_stacks(&spec, &cams, &binning).unwrap();
//! let bev = transform(&features, Some(&depth), &g).unwrap();
//! assert_eq!(bev.shape(), [1, 16, 16, 4]);
//! ```

pub mod aggregation;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod indexgraph;
pub mod opgraph;
pub mod oracle;
pub mod synthio;
pub mod verify;

pub use error::{Error, Result};
pub use indexgraph::IndexGraph;

pub mod prelude {
    pub use crate::aggregation::{
        gather_depth_weights, gather_features, modulate, place, transform, BevVolume, DepthStack, FeatureStack,
        FlatFeatures,
    };
    pub use crate::error::{Error, Result};
    pub use crate::geometry::{project, CameraModel, DepthBinning, GridDims, PixelHit, VoxelGrid};
    pub use crate::indexgraph::{build_index_graph, coverage_stats, FingerprintCheck, IndexGraph};
    pub use crate::opgraph::{export_graph, interpret, lower, parse_graph, validate, GraphInputs, OpGraph};
    pub use crate::oracle::{transform_monolithic, MonolithicConfig};
    pub use crate::synthio::{make_rig, make_stacks, DepthGen, FeatureGen, RigSpec, StackSpec, Tensor};
}
