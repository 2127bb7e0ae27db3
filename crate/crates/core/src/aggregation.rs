//! Gather, depth modulation and placement.
//!
//! Given an [`IndexGraph`], lifting image features into the BEV volume is
//! three steps, none of which combines values from more than one source:
//!
//! 1. gather one feature row per voxel through `spatial_index`, and one
//!    depth probability per voxel through `depth_index`;
//! 2. scale each row by its depth weight;
//! 3. reinterpret the `[num_voxels, C]` buffer as `[Z, H, W, C]`.
//!
//! Step 3 hands the same allocation to [`BevVolume`]; no element moves.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::indexgraph::{IndexGraph, StackLayout};

/// Rows handed to one rayon task during gathers.
const MIN_ROWS_PER_TASK: usize = 512;

/// Multi-camera feature maps, `[N_cam, H_img, W_img, C]` row-major, followed
/// by one zero row of `C` channels (the padding slot).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    num_cams: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureStack {
    /// `data` holds the `N_cam * H * W * C` real values; the padding row is
    /// appended here.
    pub fn new(num_cams: usize, height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if num_cams == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg("feature stack dims must be non-zero"));
        }
        let expected = num_cams * height * width * channels;
        if data.len() != expected {
            return Err(Error::arg(format!(
                "feature stack [{num_cams}, {height}, {width}, {channels}] needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("feature value {i} is not finite")));
        }
        data.resize(expected + channels, 0.0);
        Ok(Self { num_cams, height, width, channels, data })
    }

    pub fn num_cams(&self) -> usize {
        self.num_cams
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.num_cams, self.height, self.width, self.channels]
    }

    /// The real values, without the padding row.
    pub fn values(&self) -> &[f32] {
        &self.data[..self.data.len() - self.channels]
    }

    /// Values followed by the zero padding row.
    pub fn padded(&self) -> &[f32] {
        &self.data
    }

    /// Number of rows including the padding row.
    pub fn padded_rows(&self) -> usize {
        self.num_cams * self.height * self.width + 1
    }

    pub fn pixel(&self, cam: usize, v: usize, u: usize) -> &[f32] {
        let row = (cam * self.height + v) * self.width + u;
        &self.data[row * self.channels..(row + 1) * self.channels]
    }

    fn check_layout(&self, layout: &StackLayout) -> Result<()> {
        if (self.num_cams, self.height, self.width) != (layout.num_cams, layout.img_h, layout.img_w) {
            return Err(Error::config(format!(
                "feature stack is {}x{}x{} (cams x h x w) but the index graph expects {}x{}x{}",
                self.num_cams, self.height, self.width, layout.num_cams, layout.img_h, layout.img_w
            )));
        }
        Ok(())
    }
}

/// Per-pixel depth-bin probabilities, `[N_cam, D, H_img, W_img]` row-major,
/// followed by one zero padding element.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthStack {
    num_cams: usize,
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthStack {
    pub fn new(num_cams: usize, bins: usize, height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if num_cams == 0 || bins == 0 || height == 0 || width == 0 {
            return Err(Error::arg("depth stack dims must be non-zero"));
        }
        let expected = num_cams * bins * height * width;
        if data.len() != expected {
            return Err(Error::arg(format!(
                "depth stack [{num_cams}, {bins}, {height}, {width}] needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg(format!("depth probability {i} = {} outside [0, 1]", data[i])));
        }
        data.push(0.0);
        Ok(Self { num_cams, bins, height, width, data })
    }

    pub fn num_cams(&self) -> usize {
        self.num_cams
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.num_cams, self.bins, self.height, self.width]
    }

    pub fn values(&self) -> &[f32] {
        &self.data[..self.data.len() - 1]
    }

    pub fn padded(&self) -> &[f32] {
        &self.data
    }

    pub fn prob(&self, cam: usize, bin: usize, v: usize, u: usize) -> f32 {
        self.data[((cam * self.bins + bin) * self.height + v) * self.width + u]
    }

    fn check_layout(&self, layout: &StackLayout) -> Result<()> {
        let ours = (self.num_cams, self.bins, self.height, self.width);
        let theirs = (layout.num_cams, layout.depth_bins, layout.img_h, layout.img_w);
        if ours != theirs {
            return Err(Error::config(format!(
                "depth stack is {ours:?} (cams, bins, h, w) but the index graph expects {theirs:?}"
            )));
        }
        Ok(())
    }
}

/// A `[rows, channels]` row-major buffer: one feature row per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatFeatures {
    rows: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FlatFeatures {
    pub fn new(rows: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * channels {
            return Err(Error::arg(format!("{} values cannot form [{rows}, {channels}]", data.len())));
        }
        Ok(Self { rows, channels, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Dense `[Z, H, W, C]` BEV features.
#[derive(Debug, Clone, PartialEq)]
pub struct BevVolume {
    dims: GridDims,
    channels: usize,
    data: Vec<f32>,
}

impl BevVolume {
    pub fn new(dims: GridDims, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.num_voxels() * channels {
            return Err(Error::arg(format!("{} values cannot form a {dims}x{channels} volume", data.len())));
        }
        Ok(Self { dims, channels, data })
    }

    pub fn zeros(dims: GridDims, channels: usize) -> Self {
        Self { dims, channels, data: vec![0.0; dims.num_voxels() * channels] }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.dims.z, self.dims.h, self.dims.w, self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn voxel(&self, z: usize, y: usize, x: usize) -> &[f32] {
        let i = self.dims.linear(z, y, x);
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Linear index and channel of the first element whose bits differ.
    pub fn first_difference(&self, other: &BevVolume) -> Option<(usize, usize)> {
        if self.shape() != other.shape() {
            return Some((0, 0));
        }
        self.data
            .iter()
            .zip(&other.data)
            .position(|(a, b)| a.to_bits() != b.to_bits())
            .map(|i| (i / self.channels, i % self.channels))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &BevVolume) -> bool {
        self.shape() == other.shape() && self.first_difference(other).is_none()
    }
}

/// Reads one `C`-channel row per voxel. Invalid voxels read the zero pad row.
pub fn gather_features(stack: &FeatureStack, g: &IndexGraph) -> Result<FlatFeatures> {
    stack.check_layout(&g.layout())?;
    let c = stack.channels;
    let src = stack.padded();
    let mut out = vec![0.0f32; g.num_voxels() * c];
    out.par_chunks_mut(c)
        .zip(g.spatial_index().par_iter())
        .with_min_len(MIN_ROWS_PER_TASK)
        .for_each(|(row, &offset)| {
            let start = offset as usize * c;
            row.copy_from_slice(&src[start..start + c]);
        });
    FlatFeatures::new(g.num_voxels(), c, out)
}

/// Reads one depth probability per voxel. Invalid voxels read 0.
pub fn gather_depth_weights(stack: &DepthStack, g: &IndexGraph) -> Result<Vec<f32>> {
    stack.check_layout(&g.layout())?;
    let src = stack.padded();
    Ok(g.depth_index()
        .par_iter()
        .with_min_len(MIN_ROWS_PER_TASK)
        .map(|&offset| src[offset as usize])
        .collect())
}

/// `out[i, c] = features[i, c] * weights[i]`, computed in place.
pub fn modulate(mut features: FlatFeatures, weights: &[f32]) -> Result<FlatFeatures> {
    if weights.len() != features.rows {
        return Err(Error::arg(format!("{} weights for {} feature rows", weights.len(), features.rows)));
    }
    let c = features.channels;
    features
        .data
        .par_chunks_mut(c)
        .zip(weights.par_iter())
        .with_min_len(MIN_ROWS_PER_TASK)
        .for_each(|(row, &w)| row.iter_mut().for_each(|v| *v *= w));
    Ok(features)
}

/// Reinterprets `[num_voxels, C]` as `[Z, H, W, C]` without touching the data.
pub fn place(flat: FlatFeatures, dims: GridDims) -> Result<BevVolume> {
    if flat.rows != dims.num_voxels() {
        return Err(Error::arg(format!("{} rows cannot be placed into a {dims} grid", flat.rows)));
    }
    Ok(BevVolume { dims, channels: flat.channels, data: flat.data })
}

/// Full decomposed transform. Without a depth stack the gathered features
/// are placed unmodulated.
pub fn transform(stack: &FeatureStack, depth: Option<&DepthStack>, g: &IndexGraph) -> Result<BevVolume> {
    let features = gather_features(stack, g)?;
    let flat = match depth {
        Some(depth) => modulate(features, &gather_depth_weights(depth, g)?)?,
        None => features,
    };
    place(flat, g.dims())
}
