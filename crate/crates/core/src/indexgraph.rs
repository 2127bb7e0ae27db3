//! The precomputed voxel → (camera, pixel, depth-bin) mapping.
//!
//! An [`IndexGraph`] is dense: entry `i` always describes voxel `i` in the
//! grid's row-major `[Z, H, W]` order, so the output of gathering through it
//! is already laid out as the final BEV volume. Each voxel has at most one
//! source. When several cameras see the same voxel, the first camera in the
//! rig list wins.
//!
//! Alongside the entries the graph holds two synchronized offset arrays:
//!
//! - `spatial_index[i]` is a row offset into a feature stack laid out as
//!   `[N_cam, H_img, W_img]` rows of `C` channels: `(cam * H_img + v) * W_img + u`.
//! - `depth_index[i]` is an element offset into a depth stack laid out as
//!   `[N_cam, D, H_img, W_img]`: `((cam * D + d) * H_img + v) * W_img + u`.
//!
//! Voxels with no source point both offsets at a padding slot one past the
//! real data, where both stacks read as zero.

use std::fs;
use std::hash::Hasher;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fnv::FnvHasher;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{project_finite, CameraModel, DepthBinning, GridDims, PixelHit, VoxelGrid};

pub const LUT_MAGIC: &[u8; 4] = b"FBLT";
pub const LUT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 7 * 4 + 8;
const ENTRY_LEN: usize = 1 + 4 + 4 + 1 + 2 + 2 + 2;

/// Shape of the feature and depth stacks an index graph addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StackLayout {
    pub num_cams: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub depth_bins: usize,
}

impl StackLayout {
    pub fn pixels_per_cam(&self) -> usize {
        self.img_h * self.img_w
    }

    /// Row offset of the zero padding row in a feature stack.
    pub fn feature_pad(&self) -> usize {
        self.num_cams * self.pixels_per_cam()
    }

    /// Element offset of the zero padding slot in a depth stack.
    pub fn depth_pad(&self) -> usize {
        self.num_cams * self.depth_bins * self.pixels_per_cam()
    }

    #[inline]
    pub fn spatial_offset(&self, e: &LutEntry) -> usize {
        (e.cam as usize * self.img_h + e.v as usize) * self.img_w + e.u as usize
    }

    #[inline]
    pub fn depth_offset(&self, e: &LutEntry) -> usize {
        ((e.cam as usize * self.depth_bins + e.depth_bin as usize) * self.img_h + e.v as usize) * self.img_w
            + e.u as usize
    }
}

/// One resolved voxel. `cam` is the camera's position in the rig list,
/// which is also its slot in the stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LutEntry {
    pub cam: u8,
    pub u: u16,
    pub v: u16,
    pub depth_bin: u16,
}

impl LutEntry {
    fn from_hit(slot: usize, hit: &PixelHit) -> Self {
        LutEntry { cam: slot as u8, u: hit.u as u16, v: hit.v as u16, depth_bin: hit.depth_bin as u16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexGraph {
    dims: GridDims,
    layout: StackLayout,
    entries: Vec<Option<LutEntry>>,
    spatial_index: Vec<u32>,
    depth_index: Vec<u32>,
    fingerprint: u64,
}

impl IndexGraph {
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn layout(&self) -> StackLayout {
        self.layout
    }

    pub fn num_voxels(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Option<LutEntry>] {
        &self.entries
    }

    pub fn spatial_index(&self) -> &[u32] {
        &self.spatial_index
    }

    pub fn depth_index(&self) -> &[u32] {
        &self.depth_index
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Assembles a graph from per-voxel entries, deriving both offset arrays.
    pub fn from_entries(
        dims: GridDims,
        layout: StackLayout,
        entries: Vec<Option<LutEntry>>,
        fingerprint: u64,
    ) -> Result<Self> {
        if entries.len() != dims.num_voxels() {
            return Err(Error::config(format!(
                "{} entries for a {dims} grid ({} voxels)",
                entries.len(),
                dims.num_voxels()
            )));
        }
        check_layout_fits(&layout)?;
        for e in entries.iter().flatten() {
            if e.cam as usize >= layout.num_cams
                || e.u as usize >= layout.img_w
                || e.v as usize >= layout.img_h
                || e.depth_bin as usize >= layout.depth_bins
            {
                return Err(Error::config(format!("entry {e:?} outside stack layout {layout:?}")));
            }
        }
        let feature_pad = layout.feature_pad() as u32;
        let depth_pad = layout.depth_pad() as u32;
        let spatial_index = entries
            .iter()
            .map(|e| e.as_ref().map_or(feature_pad, |e| layout.spatial_offset(e) as u32))
            .collect();
        let depth_index = entries
            .iter()
            .map(|e| e.as_ref().map_or(depth_pad, |e| layout.depth_offset(e) as u32))
            .collect();
        Ok(Self { dims, layout, entries, spatial_index, depth_index, fingerprint })
    }
}

fn check_layout_fits(layout: &StackLayout) -> Result<()> {
    if layout.num_cams == 0 || layout.num_cams > 256 {
        return Err(Error::config(format!("camera count {} outside 1..=256", layout.num_cams)));
    }
    if layout.img_w > 1 << 16 || layout.img_h > 1 << 16 || layout.depth_bins > 1 << 16 {
        return Err(Error::config("image extent and depth bins must each be at most 65536"));
    }
    let depth_pad = layout
        .num_cams
        .checked_mul(layout.depth_bins)
        .and_then(|n| n.checked_mul(layout.pixels_per_cam()));
    match depth_pad {
        Some(n) if n < u32::MAX as usize => Ok(()),
        _ => Err(Error::config("depth stack too large for 32-bit offsets")),
    }
}

/// Checks the rig preconditions shared by every consumer of a camera list
/// and returns the stack layout it implies.
pub fn rig_layout(cams: &[CameraModel], binning: &DepthBinning) -> Result<StackLayout> {
    let first = cams.first().ok_or_else(|| Error::arg("camera list is empty"))?;
    if let Some(other) = cams.iter().find(|c| (c.width(), c.height()) != (first.width(), first.height())) {
        return Err(Error::config(format!(
            "mixed image extents: camera {} is {}x{}, camera {} is {}x{}",
            first.cam_id(),
            first.width(),
            first.height(),
            other.cam_id(),
            other.width(),
            other.height()
        )));
    }
    let layout = StackLayout {
        num_cams: cams.len(),
        img_h: first.height() as usize,
        img_w: first.width() as usize,
        depth_bins: binning.bins() as usize,
    };
    check_layout_fits(&layout)?;
    Ok(layout)
}

/// Resolves a single voxel: the first camera in list order that sees the
/// voxel center, together with the hit.
#[inline]
pub fn resolve_voxel(
    grid: &VoxelGrid,
    cams: &[CameraModel],
    binning: &DepthBinning,
    linear: usize,
) -> Option<(usize, PixelHit)> {
    let (z, y, x) = grid.dims().unlinear(linear);
    let center = grid.center_unchecked(z, y, x);
    cams.iter()
        .enumerate()
        .find_map(|(slot, cam)| project_finite(cam, binning, center).map(|hit| (slot, hit)))
}

/// Builds the index graph on the current rayon pool.
pub fn build_index_graph(grid: &VoxelGrid, cams: &[CameraModel], binning: &DepthBinning) -> Result<IndexGraph> {
    let layout = rig_layout(cams, binning)?;
    let entries: Vec<Option<LutEntry>> = (0..grid.num_voxels())
        .into_par_iter()
        .map(|i| resolve_voxel(grid, cams, binning, i).map(|(slot, hit)| LutEntry::from_hit(slot, &hit)))
        .collect();
    IndexGraph::from_entries(grid.dims(), layout, entries, fingerprint(grid, cams, binning))
}

/// Builds the index graph on a dedicated pool of `threads` workers.
pub fn build_index_graph_with_threads(
    grid: &VoxelGrid,
    cams: &[CameraModel],
    binning: &DepthBinning,
    threads: usize,
) -> Result<IndexGraph> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("thread pool: {e}")))?;
    pool.install(|| build_index_graph(grid, cams, binning))
}

/// 64-bit FNV-1a over a canonical little-endian encoding of the grid, the
/// binning and every camera in list order.
pub fn fingerprint(grid: &VoxelGrid, cams: &[CameraModel], binning: &DepthBinning) -> u64 {
    let mut buf = Vec::with_capacity(128 + cams.len() * 240);
    let put_f64 = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&v.to_le_bytes());
    let put_u64 = |buf: &mut Vec<u8>, v: u64| buf.extend_from_slice(&v.to_le_bytes());

    for v in grid.origin().into_iter().chain(grid.voxel_size()) {
        put_f64(&mut buf, v);
    }
    let d = grid.dims();
    for n in [d.z, d.h, d.w] {
        put_u64(&mut buf, n as u64);
    }
    put_f64(&mut buf, binning.d_min());
    put_f64(&mut buf, binning.d_max());
    put_u64(&mut buf, binning.bins() as u64);
    put_u64(&mut buf, cams.len() as u64);
    for cam in cams {
        put_u64(&mut buf, cam.cam_id() as u64);
        for v in cam.intrinsics().iter().flatten() {
            put_f64(&mut buf, *v);
        }
        for v in cam.extrinsic().iter().flatten() {
            put_f64(&mut buf, *v);
        }
        put_u64(&mut buf, cam.width() as u64);
        put_u64(&mut buf, cam.height() as u64);
    }
    let mut h = FnvHasher::default();
    h.write(&buf);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageStats {
    pub valid_count: usize,
    /// Indexed by camera slot.
    pub per_camera: Vec<usize>,
}

pub fn coverage_stats(g: &IndexGraph) -> CoverageStats {
    let mut per_camera = vec![0usize; g.layout.num_cams];
    for e in g.entries.iter().flatten() {
        per_camera[e.cam as usize] += 1;
    }
    CoverageStats { valid_count: per_camera.iter().sum(), per_camera }
}

/// What to do when a loaded graph was built for a different rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerprintCheck {
    Strict,
    Warn,
}

impl IndexGraph {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LUT_MAGIC)?;
        w.write_u16::<LittleEndian>(LUT_VERSION)?;
        let l = &self.layout;
        for n in [self.dims.z, self.dims.h, self.dims.w, l.num_cams, l.img_h, l.img_w, l.depth_bins] {
            w.write_u32::<LittleEndian>(n as u32)?;
        }
        w.write_u64::<LittleEndian>(self.fingerprint)?;
        for (i, e) in self.entries.iter().enumerate() {
            let e_or_zero = e.unwrap_or(LutEntry { cam: 0, u: 0, v: 0, depth_bin: 0 });
            w.write_u8(e.is_some() as u8)?;
            w.write_u32::<LittleEndian>(self.spatial_index[i])?;
            w.write_u32::<LittleEndian>(self.depth_index[i])?;
            w.write_u8(e_or_zero.cam)?;
            w.write_u16::<LittleEndian>(e_or_zero.u)?;
            w.write_u16::<LittleEndian>(e_or_zero.v)?;
            w.write_u16::<LittleEndian>(e_or_zero.depth_bin)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * ENTRY_LEN);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(format!("index graph truncated: {} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != LUT_MAGIC {
            return Err(Error::format(format!("bad index graph magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != LUT_VERSION {
            return Err(Error::format(format!("unsupported index graph version {version}")));
        }
        let mut header = [0usize; 7];
        for h in header.iter_mut() {
            *h = r.read_u32::<LittleEndian>()? as usize;
        }
        let [z, h, w, num_cams, img_h, img_w, depth_bins] = header;
        let fingerprint = r.read_u64::<LittleEndian>()?;
        let dims = GridDims::new(z, h, w);
        let layout = StackLayout { num_cams, img_h, img_w, depth_bins };

        let expected = dims
            .z
            .checked_mul(dims.h)
            .and_then(|n| n.checked_mul(dims.w))
            .and_then(|n| n.checked_mul(ENTRY_LEN))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::format("index graph dims overflow"))?;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "index graph for a {dims} grid should be {expected} bytes, found {}",
                bytes.len()
            )));
        }

        let n = dims.num_voxels();
        let mut entries = Vec::with_capacity(n);
        let mut spatial = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        for i in 0..n {
            let valid = r.read_u8()?;
            spatial.push(r.read_u32::<LittleEndian>()?);
            depth.push(r.read_u32::<LittleEndian>()?);
            let e = LutEntry {
                cam: r.read_u8()?,
                u: r.read_u16::<LittleEndian>()?,
                v: r.read_u16::<LittleEndian>()?,
                depth_bin: r.read_u16::<LittleEndian>()?,
            };
            match valid {
                1 => entries.push(Some(e)),
                0 if e == (LutEntry { cam: 0, u: 0, v: 0, depth_bin: 0 }) => entries.push(None),
                0 => return Err(Error::format(format!("entry {i}: invalid entry carries non-zero fields"))),
                other => return Err(Error::format(format!("entry {i}: validity byte {other}"))),
            }
        }

        let g = IndexGraph::from_entries(dims, layout, entries, fingerprint)
            .map_err(|e| Error::format(format!("inconsistent index graph: {e}")))?;
        if let Some(i) = (0..n).find(|&i| g.spatial_index[i] != spatial[i] || g.depth_index[i] != depth[i]) {
            return Err(Error::format(format!("entry {i}: stored offsets disagree with its coordinates")));
        }
        Ok(g)
    }

    /// Loads a graph and compares its fingerprint against the rig it is
    /// about to be used with.
    pub fn from_bytes_checked(bytes: &[u8], expected_fingerprint: u64, check: FingerprintCheck) -> Result<Self> {
        let g = Self::from_bytes(bytes)?;
        if g.fingerprint != expected_fingerprint {
            match check {
                FingerprintCheck::Strict => {
                    return Err(Error::Fingerprint { stored: g.fingerprint, expected: expected_fingerprint })
                }
                FingerprintCheck::Warn => log::warn!(
                    "index graph fingerprint {:#018x} does not match rig {:#018x}",
                    g.fingerprint,
                    expected_fingerprint
                ),
            }
        }
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;

    const IDENTITY: [[f64; 4]; 4] =
        [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

    fn forward_camera(cam_id: u32, width: u32, height: u32) -> CameraModel {
        let k = [[20.0, 0.0, width as f64 / 2.0], [0.0, 20.0, height as f64 / 2.0], [0.0, 0.0, 1.0]];
        CameraModel::new(cam_id, k, IDENTITY, width, height).unwrap()
    }

    fn binning() -> DepthBinning {
        DepthBinning::new(1.0, 41.0, 8).unwrap()
    }

    /// Small box straight ahead of the identity camera (camera z is ego z).
    fn ahead_grid() -> VoxelGrid {
        VoxelGrid::new([-1.0, -1.0, 5.0], [0.5, 0.5, 1.0], GridDims::new(4, 4, 4)).unwrap()
    }

    #[test]
    fn grid_behind_camera_is_all_invalid() {
        let grid = VoxelGrid::new([-1.0, -1.0, -10.0], [0.5; 3], GridDims::new(3, 4, 4)).unwrap();
        let g = build_index_graph(&grid, &[forward_camera(0, 32, 32)], &binning()).unwrap();
        assert!(g.entries().iter().all(Option::is_none));
        let l = g.layout();
        assert!(g.spatial_index().iter().all(|&o| o as usize == l.feature_pad()));
        assert!(g.depth_index().iter().all(|&o| o as usize == l.depth_pad()));
        let stats = coverage_stats(&g);
        assert_eq!(stats.valid_count, 0);
        assert_eq!(stats.per_camera, vec![0]);
    }

    #[test]
    fn duplicate_camera_never_wins() {
        let one = build_index_graph(&ahead_grid(), &[forward_camera(0, 32, 32)], &binning()).unwrap();
        let two =
            build_index_graph(&ahead_grid(), &[forward_camera(0, 32, 32), forward_camera(0, 32, 32)], &binning())
                .unwrap();
        assert_eq!(one.entries(), two.entries());
        assert_eq!(one.spatial_index(), two.spatial_index());
        assert!(two.entries().iter().flatten().all(|e| e.cam == 0));
        assert_eq!(coverage_stats(&two).per_camera, vec![one.num_voxels(), 0]);
    }

    #[test]
    fn full_frustum_covers_every_voxel() {
        let g = build_index_graph(&ahead_grid(), &[forward_camera(0, 32, 32)], &binning()).unwrap();
        let stats = coverage_stats(&g);
        assert_eq!(stats.valid_count, g.num_voxels());
        assert_eq!(stats.per_camera.iter().sum::<usize>(), stats.valid_count);
    }

    #[test]
    fn offsets_follow_the_documented_layout() {
        let g = build_index_graph(&ahead_grid(), &[forward_camera(0, 32, 24)], &binning()).unwrap();
        let l = g.layout();
        for (i, e) in g.entries().iter().enumerate() {
            let e = e.unwrap();
            assert_eq!(g.spatial_index()[i] as usize, e.v as usize * 32 + e.u as usize);
            assert_eq!(
                g.depth_index()[i] as usize,
                (e.depth_bin as usize * 24 + e.v as usize) * 32 + e.u as usize
            );
            assert!((g.spatial_index()[i] as usize) < l.feature_pad());
        }
    }

    #[test]
    fn rejects_bad_rigs() {
        assert!(matches!(build_index_graph(&ahead_grid(), &[], &binning()), Err(Error::Argument(_))));
        let mixed = [forward_camera(0, 32, 32), forward_camera(1, 32, 16)];
        assert!(matches!(build_index_graph(&ahead_grid(), &mixed, &binning()), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_and_corruption() {
        let g = build_index_graph(&ahead_grid(), &[forward_camera(0, 32, 32)], &binning()).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + g.num_voxels() * ENTRY_LEN);
        assert_eq!(IndexGraph::from_bytes(&bytes).unwrap(), g);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(IndexGraph::from_bytes(&bad_magic), Err(Error::Format(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(IndexGraph::from_bytes(&bad_version), Err(Error::Format(_))));

        assert!(matches!(IndexGraph::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(IndexGraph::from_bytes(&bytes[..10]), Err(Error::Format(_))));

        let mut bad_offset = bytes.clone();
        bad_offset[HEADER_LEN + 1] ^= 1;
        assert!(matches!(IndexGraph::from_bytes(&bad_offset), Err(Error::Format(_))));

        let mut bad_valid = bytes;
        bad_valid[HEADER_LEN] = 7;
        assert!(matches!(IndexGraph::from_bytes(&bad_valid), Err(Error::Format(_))));
    }

    #[test]
    fn checked_load_respects_policy() {
        let g = build_index_graph(&ahead_grid(), &[forward_camera(0, 32, 32)], &binning()).unwrap();
        let bytes = g.to_bytes();
        let other = g.fingerprint() ^ 1;
        assert!(IndexGraph::from_bytes_checked(&bytes, g.fingerprint(), FingerprintCheck::Strict).is_ok());
        assert!(matches!(
            IndexGraph::from_bytes_checked(&bytes, other, FingerprintCheck::Strict),
            Err(Error::Fingerprint { .. })
        ));
        assert_eq!(IndexGraph::from_bytes_checked(&bytes, other, FingerprintCheck::Warn).unwrap(), g);
    }

    #[test]
    fn fingerprint_tracks_every_input() {
        let cams = [forward_camera(0, 32, 32)];
        let base = fingerprint(&ahead_grid(), &cams, &binning());
        assert_eq!(base, fingerprint(&ahead_grid(), &cams, &binning()));
        let moved = VoxelGrid::new([-1.0, -1.0, 5.5], [0.5, 0.5, 1.0], GridDims::new(4, 4, 4)).unwrap();
        assert_ne!(base, fingerprint(&moved, &cams, &binning()));
        assert_ne!(base, fingerprint(&ahead_grid(), &cams, &DepthBinning::new(1.0, 41.0, 9).unwrap()));
        assert_ne!(base, fingerprint(&ahead_grid(), &[forward_camera(1, 32, 32)], &binning()));
    }
}
