//! Pinhole cameras, the voxel grid and forward projection of ego-frame
//! points into (pixel, depth-bin) coordinates.
//!
//! Conventions used throughout the crate:
//!
//! - Extrinsics map ego-frame points into the camera frame
//!   (`p_cam = R * p_ego + t`). Camera frame is x right, y down, z forward.
//! - A voxel is sampled at its center.
//! - Pixels are sampled nearest-by-floor: `u = floor(u_f)`, `v = floor(v_f)`.
//! - A point is only a hit if its camera depth lies inside the depth
//!   binning range, so every hit carries a valid bin index.

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Points with camera depth at or below this are treated as behind the camera.
pub const EPSILON_Z: f64 = 1e-6;

/// Tolerance on `RᵀR − I` and `det(R) − 1` for a camera's rotation block.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// A zero-skew pinhole camera with a rigid ego-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    cam_id: u32,
    intrinsics: [[f64; 3]; 3],
    extrinsic: [[f64; 4]; 4],
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(
        cam_id: u32,
        intrinsics: [[f64; 3]; 3],
        extrinsic: [[f64; 4]; 4],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        Self::with_tolerance(cam_id, intrinsics, extrinsic, width, height, ROTATION_TOLERANCE)
    }

    /// Like [`CameraModel::new`] but with a caller-chosen rotation tolerance.
    pub fn with_tolerance(
        cam_id: u32,
        intrinsics: [[f64; 3]; 3],
        extrinsic: [[f64; 4]; 4],
        width: u32,
        height: u32,
        tolerance: f64,
    ) -> Result<Self> {
        let all_finite = intrinsics.iter().flatten().all(|v| v.is_finite())
            && extrinsic.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::arg(format!("camera {cam_id}: non-finite calibration value")));
        }
        let k = &intrinsics;
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::arg(format!("camera {cam_id}: focal lengths must be positive")));
        }
        if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return Err(Error::arg(format!(
                "camera {cam_id}: intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("camera {cam_id}: empty image extent")));
        }
        if extrinsic[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::arg(format!("camera {cam_id}: extrinsic last row must be [0,0,0,1]")));
        }
        check_rotation(&rotation_block(&extrinsic), tolerance)
            .map_err(|e| Error::arg(format!("camera {cam_id}: {e}")))?;
        Ok(Self { cam_id, intrinsics, extrinsic, width, height })
    }

    pub fn cam_id(&self) -> u32 {
        self.cam_id
    }

    pub fn intrinsics(&self) -> &[[f64; 3]; 3] {
        &self.intrinsics
    }

    pub fn extrinsic(&self) -> &[[f64; 4]; 4] {
        &self.extrinsic
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[0][0]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[1][1]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[0][2]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[1][2]
    }

    /// Transforms an ego-frame point into this camera's frame.
    #[inline]
    pub fn to_camera(&self, p: Point3) -> Point3 {
        let e = &self.extrinsic;
        let [x, y, z] = p;
        [
            e[0][0] * x + e[0][1] * y + e[0][2] * z + e[0][3],
            e[1][0] * x + e[1][1] * y + e[1][2] * z + e[1][3],
            e[2][0] * x + e[2][1] * y + e[2][2] * z + e[2][3],
        ]
    }
}

fn rotation_block(m: &[[f64; 4]; 4]) -> [[f64; 3]; 3] {
    [
        [m[0][0], m[0][1], m[0][2]],
        [m[1][0], m[1][1], m[1][2]],
        [m[2][0], m[2][1], m[2][2]],
    ]
}

/// Checks `‖RᵀR − I‖∞ < tol` and `|det R − 1| ≤ tol`.
pub fn check_rotation(r: &[[f64; 3]; 3], tol: f64) -> Result<()> {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    if worst >= tol {
        return Err(Error::arg(format!("rotation is not orthonormal (max deviation {worst:e})")));
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det - 1.0).abs() > tol {
        return Err(Error::arg(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

/// Inverse of a rigid transform: `[Rᵀ | −Rᵀt]`.
pub fn invert_rigid(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
        out[i][3] = -(m[0][i] * m[0][3] + m[1][i] * m[1][3] + m[2][i] * m[2][3]);
    }
    out[3][3] = 1.0;
    out
}

/// Cell counts of a voxel grid along z, y and x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub z: usize,
    pub h: usize,
    pub w: usize,
}

impl GridDims {
    pub fn new(z: usize, h: usize, w: usize) -> Self {
        Self { z, h, w }
    }

    pub fn num_voxels(&self) -> usize {
        self.z * self.h * self.w
    }

    /// Row-major linear index over `[Z, H, W]`.
    #[inline]
    pub fn linear(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    /// Inverse of [`GridDims::linear`].
    #[inline]
    pub fn unlinear(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        let z = i / (self.w * self.h);
        (z, y, x)
    }
}

impl std::fmt::Display for GridDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.h, self.w)
    }
}

/// An axis-aligned BEV volume in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    origin: Point3,
    voxel_size: Point3,
    dims: GridDims,
}

impl VoxelGrid {
    /// `origin` is the minimum corner; `voxel_size` is `(sx, sy, sz)`.
    pub fn new(origin: Point3, voxel_size: Point3, dims: GridDims) -> Result<Self> {
        if dims.z == 0 || dims.h == 0 || dims.w == 0 {
            return Err(Error::arg(format!("grid dims must be non-zero, got {dims}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("grid origin must be finite"));
        }
        if !voxel_size.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::arg("voxel size components must be positive"));
        }
        Ok(Self { origin, voxel_size, dims })
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn voxel_size(&self) -> Point3 {
        self.voxel_size
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.num_voxels()
    }

    /// Ego-frame center of voxel `(z, y, x)`.
    pub fn voxel_center(&self, z: usize, y: usize, x: usize) -> Result<Point3> {
        let d = self.dims;
        if z >= d.z || y >= d.h || x >= d.w {
            return Err(Error::arg(format!("voxel ({z}, {y}, {x}) outside grid {d}")));
        }
        Ok(self.center_unchecked(z, y, x))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, z: usize, y: usize, x: usize) -> Point3 {
        let [x0, y0, z0] = self.origin;
        let [sx, sy, sz] = self.voxel_size;
        [
            x0 + (x as f64 + 0.5) * sx,
            y0 + (y as f64 + 0.5) * sy,
            z0 + (z as f64 + 0.5) * sz,
        ]
    }
}

/// Uniform discretization of camera depth into `bins` intervals over
/// `[d_min, d_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthBinning {
    d_min: f64,
    d_max: f64,
    bins: u32,
}

impl DepthBinning {
    pub fn new(d_min: f64, d_max: f64, bins: u32) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite() && 0.0 < d_min && d_min < d_max) {
            return Err(Error::arg(format!("depth range needs 0 < d_min < d_max, got [{d_min}, {d_max})")));
        }
        if bins == 0 {
            return Err(Error::arg("depth binning needs at least one bin"));
        }
        Ok(Self { d_min, d_max, bins })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn bin_width(&self) -> f64 {
        (self.d_max - self.d_min) / self.bins as f64
    }

    /// Bin containing `depth`, or `None` outside `[d_min, d_max)`.
    #[inline]
    pub fn bin_of(&self, depth: f64) -> Option<u32> {
        if !(depth >= self.d_min && depth < self.d_max) {
            return None;
        }
        let k = ((depth - self.d_min) / self.bin_width()).floor() as u32;
        Some(k.min(self.bins - 1))
    }
}

/// Where an ego-frame point lands in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub cam_id: u32,
    pub u: u32,
    pub v: u32,
    pub depth_bin: u32,
    /// Camera-frame z used for binning.
    pub cam_depth: f64,
}

/// Projects an ego-frame point into `cam`.
///
/// Returns `Ok(None)` when the point is behind the camera, falls outside the
/// image, or its depth is outside the binning range.
pub fn project(cam: &CameraModel, binning: &DepthBinning, p_ego: Point3) -> Result<Option<PixelHit>> {
    if !p_ego.iter().all(|v| v.is_finite()) {
        return Err(Error::arg(format!("non-finite point {p_ego:?}")));
    }
    Ok(project_finite(cam, binning, p_ego))
}

#[inline]
pub(crate) fn project_finite(cam: &CameraModel, binning: &DepthBinning, p_ego: Point3) -> Option<PixelHit> {
    let [x, y, zc] = cam.to_camera(p_ego);
    if zc <= EPSILON_Z {
        return None;
    }
    let u_f = cam.fx() * x / zc + cam.cx();
    let v_f = cam.fy() * y / zc + cam.cy();
    // floor(u_f) lies in [0, width) exactly when u_f does.
    if !(u_f >= 0.0 && u_f < cam.width as f64 && v_f >= 0.0 && v_f < cam.height as f64) {
        return None;
    }
    let depth_bin = binning.bin_of(zc)?;
    Some(PixelHit {
        cam_id: cam.cam_id,
        u: u_f.floor() as u32,
        v: v_f.floor() as u32,
        depth_bin,
        cam_depth: zc,
    })
}
