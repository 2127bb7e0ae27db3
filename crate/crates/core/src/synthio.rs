//! Synthetic rigs and stacks, plus calibration and tensor file I/O.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, so every
//! generator is reproducible across platforms for a given seed.
//!
//! # Tensor files (`FBTN`)
//!
//! ```text
//! magic   "FBTN"
//! u16     version = 1
//! u8      rank
//! u32     dims[rank]
//! f32     data[product(dims)]   row-major
//! ```
//!
//! All multi-byte values are little-endian.
//!
//! # Calibration files
//!
//! JSON of the form
//!
//! ```json
//! { "version": 1,
//!   "cameras": [ { "cam_id": 0, "intrinsics": [9 numbers, row-major],
//!                  "extrinsic": [16 numbers, row-major],
//!                  "direction": "ego_to_cam", "width": 64, "height": 32 } ] }
//! ```
//!
//! `"cam_to_ego"` extrinsics are inverted on load. Saved files are always
//! `"ego_to_cam"`.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{BevVolume, DepthStack, FeatureStack};
use crate::error::{Error, Result};
use crate::geometry::{invert_rigid, CameraModel, DepthBinning, GridDims};
use crate::indexgraph::rig_layout;

pub const TENSOR_MAGIC: &[u8; 4] = b"FBTN";
pub const TENSOR_VERSION: u16 = 1;

/// Rotation tolerance applied when loading calibration files.
pub const CALIBRATION_TOLERANCE: f64 = 1e-5;

/// A dense row-major `f32` tensor as stored in `FBTN` files.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.len() > u8::MAX as usize {
            return Err(Error::arg(format!("rank {} too large", shape.len())));
        }
        if shape.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::arg("tensor dims must fit in u32"));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::arg(format!("{} values do not fill shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_u16::<LittleEndian>(TENSOR_VERSION)?;
        w.write_u8(self.shape.len() as u8)?;
        for &d in &self.shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.shape.len() + 4 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let truncated = |_| Error::format("tensor header truncated");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::format(format!("bad tensor magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != TENSOR_VERSION {
            return Err(Error::format(format!("unsupported tensor version {version}")));
        }
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("tensor dims overflow"))?;
        let body = &bytes[r.position() as usize..];
        if Some(body.len()) != numel.checked_mul(4) {
            return Err(Error::format(format!(
                "tensor header declares {shape:?} ({numel} values) but the body holds {} bytes",
                body.len()
            )));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { shape, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn rank4(&self, what: &str) -> Result<[usize; 4]> {
        <[usize; 4]>::try_from(self.shape.as_slice())
            .map_err(|_| Error::format(format!("{what} tensor must be rank 4, got shape {:?}", self.shape)))
    }
}

impl From<&FeatureStack> for Tensor {
    fn from(s: &FeatureStack) -> Self {
        Tensor { shape: s.shape().to_vec(), data: s.values().to_vec() }
    }
}

impl From<&DepthStack> for Tensor {
    fn from(s: &DepthStack) -> Self {
        Tensor { shape: s.shape().to_vec(), data: s.values().to_vec() }
    }
}

impl From<&BevVolume> for Tensor {
    fn from(v: &BevVolume) -> Self {
        Tensor { shape: v.shape().to_vec(), data: v.as_slice().to_vec() }
    }
}

impl TryFrom<Tensor> for FeatureStack {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let [n, h, w, c] = t.rank4("feature")?;
        FeatureStack::new(n, h, w, c, t.data)
    }
}

impl TryFrom<Tensor> for DepthStack {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let [n, d, h, w] = t.rank4("depth")?;
        DepthStack::new(n, d, h, w, t.data)
    }
}

impl TryFrom<Tensor> for BevVolume {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let [z, h, w, c] = t.rank4("BEV")?;
        BevVolume::new(GridDims::new(z, h, w), c, t.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtrinsicDirection {
    EgoToCam,
    CamToEgo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub cam_id: u32,
    pub intrinsics: [f64; 9],
    pub extrinsic: [f64; 16],
    pub direction: ExtrinsicDirection,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub version: u32,
    pub cameras: Vec<CameraRecord>,
}

impl CameraRecord {
    pub fn from_camera(cam: &CameraModel) -> Self {
        let mut intrinsics = [0.0; 9];
        let mut extrinsic = [0.0; 16];
        intrinsics.iter_mut().zip(cam.intrinsics().iter().flatten()).for_each(|(d, s)| *d = *s);
        extrinsic.iter_mut().zip(cam.extrinsic().iter().flatten()).for_each(|(d, s)| *d = *s);
        CameraRecord {
            cam_id: cam.cam_id(),
            intrinsics,
            extrinsic,
            direction: ExtrinsicDirection::EgoToCam,
            width: cam.width(),
            height: cam.height(),
        }
    }

    pub fn to_camera(&self) -> Result<CameraModel> {
        let mut k = [[0.0; 3]; 3];
        let mut e = [[0.0; 4]; 4];
        for i in 0..9 {
            k[i / 3][i % 3] = self.intrinsics[i];
        }
        for i in 0..16 {
            e[i / 4][i % 4] = self.extrinsic[i];
        }
        if self.direction == ExtrinsicDirection::CamToEgo {
            // Validate the stored matrix before inverting it.
            CameraModel::with_tolerance(self.cam_id, k, e, self.width, self.height, CALIBRATION_TOLERANCE)?;
            e = invert_rigid(&e);
        }
        CameraModel::with_tolerance(self.cam_id, k, e, self.width, self.height, CALIBRATION_TOLERANCE)
    }
}

pub fn calibration_to_json(cams: &[CameraModel]) -> String {
    let file = CalibrationFile { version: 1, cameras: cams.iter().map(CameraRecord::from_camera).collect() };
    let mut s = serde_json::to_string_pretty(&file).expect("calibration serialization is infallible");
    s.push('\n');
    s
}

pub fn calibration_from_json(text: &str) -> Result<Vec<CameraModel>> {
    let file: CalibrationFile = serde_json::from_str(text)?;
    if file.version != 1 {
        return Err(Error::format(format!("unsupported calibration version {}", file.version)));
    }
    if file.cameras.is_empty() {
        return Err(Error::format("calibration lists no cameras"));
    }
    file.cameras.iter().map(CameraRecord::to_camera).collect()
}

pub fn save_calibration(path: impl AsRef<Path>, cams: &[CameraModel]) -> Result<()> {
    fs::write(path, calibration_to_json(cams))?;
    Ok(())
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Vec<CameraModel>> {
    calibration_from_json(&fs::read_to_string(path)?)
}

/// Random jitter applied on top of a ring layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub seed: u64,
    /// Maximum absolute yaw offset per camera, degrees.
    pub yaw_deg: f64,
    /// Maximum absolute offset per position axis, meters.
    pub translation_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RigLayout {
    /// `count` cameras at the ego origin, facing outwards at equal yaw steps
    /// starting with camera 0 looking along +x.
    Ring { count: usize },
    Explicit(Vec<CameraModel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigSpec {
    pub layout: RigLayout,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view, degrees. Pixels are square.
    pub hfov_deg: f64,
    pub perturbation: Option<Perturbation>,
}

impl RigSpec {
    /// Six outward cameras at 60° steps with 70° horizontal FOV on 64×32 images.
    pub fn ring6() -> Self {
        Self::ring(6)
    }

    pub fn ring(count: usize) -> Self {
        RigSpec { layout: RigLayout::Ring { count }, width: 64, height: 32, hfov_deg: 70.0, perturbation: None }
    }

    /// Parses `"ring6"` or `"ringN"`.
    pub fn preset(name: &str) -> Result<Self> {
        name.strip_prefix("ring")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(Self::ring)
            .ok_or_else(|| Error::arg(format!("unknown rig preset {name:?}")))
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = Some(p);
        self
    }
}

/// Ego-to-camera extrinsic for a camera at `position` facing `yaw` radians
/// (0 = +x, counter-clockwise about +z), level with the ground plane.
pub fn yaw_extrinsic(yaw: f64, position: [f64; 3]) -> [[f64; 4]; 4] {
    let (s, c) = yaw.sin_cos();
    let rows = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
    let mut e = [[0.0; 4]; 4];
    for i in 0..3 {
        e[i][..3].copy_from_slice(&rows[i]);
        e[i][3] = -(rows[i][0] * position[0] + rows[i][1] * position[1] + rows[i][2] * position[2]);
    }
    e[3][3] = 1.0;
    e
}

pub fn make_rig(spec: &RigSpec) -> Result<Vec<CameraModel>> {
    let count = match &spec.layout {
        RigLayout::Explicit(cams) => {
            rig_layout(cams, &DepthBinning::new(1.0, 2.0, 1)?)?;
            return Ok(cams.clone());
        }
        RigLayout::Ring { count } => *count,
    };
    if count == 0 || count > 256 {
        return Err(Error::arg(format!("ring camera count {count} outside 1..=256")));
    }
    if !(spec.hfov_deg > 0.0 && spec.hfov_deg < 180.0) {
        return Err(Error::arg(format!("horizontal fov {} outside (0, 180)", spec.hfov_deg)));
    }
    let (w, h) = (spec.width as f64, spec.height as f64);
    let f = (w / 2.0) / (spec.hfov_deg.to_radians() / 2.0).tan();
    let k = [[f, 0.0, w / 2.0], [0.0, f, h / 2.0], [0.0, 0.0, 1.0]];
    let mut rng = spec.perturbation.map(|p| (p, ChaCha8Rng::seed_from_u64(p.seed)));
    (0..count)
        .map(|i| {
            let mut yaw = (i as f64 * 360.0 / count as f64).to_radians();
            let mut pos = [0.0; 3];
            if let Some((p, rng)) = rng.as_mut() {
                if p.yaw_deg > 0.0 {
                    yaw += rng.gen_range(-p.yaw_deg..=p.yaw_deg).to_radians();
                }
                if p.translation_m > 0.0 {
                    for x in &mut pos {
                        *x = rng.gen_range(-p.translation_m..=p.translation_m);
                    }
                }
            }
            CameraModel::new(i as u32, k, yaw_extrinsic(yaw, pos), spec.width, spec.height)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureGen {
    Constant(f32),
    /// See [`coordinate_value`].
    CoordinateEncoded,
    Uniform { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthGen {
    Ones,
    Zeros,
    /// Per-pixel softmax of logits drawn uniformly from `[-3, 3]`.
    SoftmaxRandom { seed: u64 },
    /// Probability 1 at one bin, 0 elsewhere.
    DeltaAtBin(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackSpec {
    pub channels: usize,
    pub features: FeatureGen,
    pub depth: DepthGen,
}

/// The coordinate-encoded feature value at `(cam, v, u, c)`:
/// `((cam * H + v) * W + u) * C + c + 1`, as `f32`.
///
/// Exact (and therefore injective) while the stack has fewer than 2^24
/// elements; [`make_stacks`] refuses larger stacks for this generator.
pub fn coordinate_value(cam: usize, v: usize, u: usize, c: usize, height: usize, width: usize, channels: usize) -> f32 {
    ((((cam * height + v) * width + u) * channels + c) + 1) as f32
}

pub fn make_stacks(spec: &StackSpec, rig: &[CameraModel], binning: &DepthBinning) -> Result<(FeatureStack, DepthStack)> {
    let layout = rig_layout(rig, binning)?;
    let (n, h, w, d, c) = (layout.num_cams, layout.img_h, layout.img_w, layout.depth_bins, spec.channels);
    if c == 0 {
        return Err(Error::arg("stacks need at least one channel"));
    }
    let numel = n * h * w * c;
    let features = match spec.features {
        FeatureGen::Constant(v) => vec![v; numel],
        FeatureGen::CoordinateEncoded => {
            if numel >= 1 << 24 {
                return Err(Error::arg(format!("coordinate encoding is only exact below 2^24 values, stack has {numel}")));
            }
            (0..numel).map(|i| (i + 1) as f32).collect()
        }
        FeatureGen::Uniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..numel).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
        }
    };

    let pixels = h * w;
    let depth = match spec.depth {
        DepthGen::Ones => vec![1.0; n * d * pixels],
        DepthGen::Zeros => vec![0.0; n * d * pixels],
        DepthGen::DeltaAtBin(k) => {
            if k >= d {
                return Err(Error::arg(format!("delta bin {k} outside {d} bins")));
            }
            let mut out = vec![0.0; n * d * pixels];
            for cam in 0..n {
                out[(cam * d + k) * pixels..(cam * d + k + 1) * pixels].fill(1.0);
            }
            out
        }
        DepthGen::SoftmaxRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = vec![0.0f32; n * d * pixels];
            let mut logits = vec![0.0f64; d];
            for cam in 0..n {
                for p in 0..pixels {
                    logits.iter_mut().for_each(|l| *l = rng.gen_range(-3.0..3.0));
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                    for (k, l) in logits.iter().enumerate() {
                        out[(cam * d + k) * pixels + p] = ((l - max).exp() / sum) as f32;
                    }
                }
            }
            out
        }
    };
    Ok((FeatureStack::new(n, h, w, c, features)?, DepthStack::new(n, d, h, w, depth)?))
}
