//! Timing harness comparing the monolithic transform, the decomposed
//! gather pipeline (with and without depth) and a scatter baseline that
//! accumulates with atomic read-modify-write updates.
//!
//! Every configuration is verified before it is timed: all pipelines must
//! produce the same volume as the monolithic reference or the run fails.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{transform, BevVolume, DepthStack, FeatureStack};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthBinning, GridDims, VoxelGrid};
use crate::indexgraph::{build_index_graph, resolve_voxel, IndexGraph};
use crate::oracle::{transform_monolithic, transform_monolithic_par, MonolithicConfig};
use crate::synthio::{make_stacks, DepthGen, FeatureGen, StackSpec};

pub const DEFAULT_WARMUPS: usize = 3;
pub const DEFAULT_RUNS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "monolithic")]
    Monolithic,
    #[serde(rename = "decomposed")]
    Decomposed,
    #[serde(rename = "decomposed+depth")]
    DecomposedDepth,
    #[serde(rename = "atomic-scatter-baseline")]
    AtomicScatter,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] =
        [Pipeline::Monolithic, Pipeline::Decomposed, Pipeline::DecomposedDepth, Pipeline::AtomicScatter];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Monolithic => "monolithic",
            Pipeline::Decomposed => "decomposed",
            Pipeline::DecomposedDepth => "decomposed+depth",
            Pipeline::AtomicScatter => "atomic-scatter-baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown pipeline {s:?}")))
    }
}

/// Scatter-side view of an index graph: `(source row, voxel)` pairs in
/// source order, camera-major then pixel row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScatterPlan {
    dims: GridDims,
    pairs: Vec<(u32, u32)>,
}

impl ScatterPlan {
    pub fn from_config(cfg: &MonolithicConfig) -> Result<Self> {
        crate::indexgraph::rig_layout(&cfg.cams, &cfg.binning)?;
        let (h, w) = (cfg.cams[0].height() as usize, cfg.cams[0].width() as usize);
        let mut pairs: Vec<(u32, u32)> = (0..cfg.grid.num_voxels())
            .into_par_iter()
            .filter_map(|i| {
                resolve_voxel(&cfg.grid, &cfg.cams, &cfg.binning, i)
                    .map(|(slot, hit)| (((slot * h + hit.v as usize) * w + hit.u as usize) as u32, i as u32))
            })
            .collect();
        pairs.par_sort_unstable();
        Ok(Self { dims: cfg.grid.dims(), pairs })
    }

    pub fn from_index_graph(g: &IndexGraph) -> Self {
        let mut pairs: Vec<(u32, u32)> = g
            .entries()
            .iter()
            .zip(g.spatial_index())
            .enumerate()
            .filter(|(_, (e, _))| e.is_some())
            .map(|(i, (_, &src))| (src, i as u32))
            .collect();
        pairs.sort_unstable();
        Self { dims: g.dims(), pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[inline]
fn atomic_add_f32(cell: &AtomicU32, v: f32) {
    let mut old = cell.load(Ordering::Relaxed);
    loop {
        let new = (f32::from_bits(old) + v).to_bits();
        match cell.compare_exchange_weak(old, new, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(actual) => old = actual,
        }
    }
}

/// Scatters every source row into its voxel with atomic accumulation on the
/// current rayon pool. Cells start at `+0.0`, so each voxel ends up with
/// `0.0 + feature`, which equals the gathered feature unless it is `-0.0`.
pub fn atomic_scatter(stack: &FeatureStack, plan: &ScatterPlan) -> Result<BevVolume> {
    let c = stack.channels();
    let out: Vec<AtomicU32> = (0..plan.dims.num_voxels() * c).map(|_| AtomicU32::new(0)).collect();
    let src = stack.values();
    if plan.pairs.iter().any(|&(s, _)| (s as usize + 1) * c > src.len()) {
        return Err(Error::config("scatter plan reads past the feature stack"));
    }
    plan.pairs.par_chunks(256).for_each(|chunk| {
        for &(s, vox) in chunk {
            let (s, vox) = (s as usize * c, vox as usize * c);
            for k in 0..c {
                atomic_add_f32(&out[vox + k], src[s + k]);
            }
        }
    });
    BevVolume::new(plan.dims, c, out.into_iter().map(|a| f32::from_bits(a.into_inner())).collect())
}

/// Depth-free transform by source-driven atomic scatter.
pub fn atomic_scatter_baseline(stack: &FeatureStack, cfg: &MonolithicConfig) -> Result<BevVolume> {
    if cfg.depth_mode {
        return Err(Error::arg("the scatter baseline runs with depth off"));
    }
    atomic_scatter(stack, &ScatterPlan::from_config(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub pipeline: Pipeline,
    /// `[Z, H, W]`.
    pub grid: [usize; 3],
    pub num_cams: usize,
    pub channels: usize,
    pub depth_bins: usize,
    pub threads: usize,
    /// Index-graph (or scatter-plan) construction, measured once. Not part
    /// of `transform_time_ns`.
    pub build_time_ns: Option<u64>,
    /// Median of `samples_ns`.
    pub transform_time_ns: u64,
    pub throughput_voxels_per_s: f64,
    pub peak_resident_delta_bytes: Option<u64>,
    pub samples_ns: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: u32,
    pub rig: String,
    pub threads: usize,
    pub warmups: usize,
    pub runs: usize,
    pub records: Vec<BenchRecord>,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rig_name: String,
    pub cams: Vec<CameraModel>,
    pub binning: DepthBinning,
    pub grids: Vec<GridDims>,
    pub channels: Vec<usize>,
    pub pipelines: Vec<Pipeline>,
    pub threads: usize,
    pub warmups: usize,
    pub runs: usize,
    pub seed: u64,
}

/// Fixed BEV extent used for benchmark grids: x and y in [-51.2, 51.2) m,
/// z in [-5, 3) m, divided evenly by the requested cell counts.
pub fn bench_grid(dims: GridDims) -> Result<VoxelGrid> {
    VoxelGrid::new(
        [-51.2, -51.2, -5.0],
        [102.4 / dims.w as f64, 102.4 / dims.h as f64, 8.0 / dims.z as f64],
        dims,
    )
}

pub fn median(samples: &[u64]) -> u64 {
    let mut s = samples.to_vec();
    s.sort_unstable();
    match s.len() {
        0 => 0,
        n if n % 2 == 1 => s[n / 2],
        n => (s[n / 2 - 1] + s[n / 2]) / 2,
    }
}

fn peak_resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn time_runs<F: FnMut() -> Result<BevVolume>>(warmups: usize, runs: usize, mut f: F) -> Result<Vec<u64>> {
    for _ in 0..warmups {
        std::hint::black_box(f()?);
    }
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            let v = f()?;
            let ns = t.elapsed().as_nanos() as u64;
            std::hint::black_box(v);
            Ok(ns)
        })
        .collect()
}

struct Prepared {
    graph: IndexGraph,
    graph_build_ns: u64,
    plan: ScatterPlan,
    plan_build_ns: u64,
    features: FeatureStack,
    depth: DepthStack,
    cfg_off: MonolithicConfig,
    cfg_on: MonolithicConfig,
}

fn run_pipeline(p: &Prepared, pipeline: Pipeline, threads: usize) -> Result<BevVolume> {
    match pipeline {
        Pipeline::Monolithic if threads == 1 => transform_monolithic(&p.cfg_off, &p.features, None),
        Pipeline::Monolithic => transform_monolithic_par(&p.cfg_off, &p.features, None),
        Pipeline::Decomposed => transform(&p.features, None, &p.graph),
        Pipeline::DecomposedDepth => transform(&p.features, Some(&p.depth), &p.graph),
        Pipeline::AtomicScatter => atomic_scatter(&p.features, &p.plan),
    }
}

/// Checks every requested pipeline against the monolithic reference.
fn verify_prepared(p: &Prepared, pipelines: &[Pipeline], threads: usize) -> Result<()> {
    let reference_off = transform_monolithic(&p.cfg_off, &p.features, None)?;
    let needs_depth = pipelines.contains(&Pipeline::DecomposedDepth);
    let reference_on = if needs_depth { Some(transform_monolithic(&p.cfg_on, &p.features, Some(&p.depth))?) } else { None };
    for &pipeline in pipelines {
        let out = run_pipeline(p, pipeline, threads)?;
        let reference = match pipeline {
            Pipeline::DecomposedDepth => reference_on.as_ref().expect("computed above"),
            _ => &reference_off,
        };
        if let Some((voxel, channel)) = out.first_difference(reference) {
            return Err(Error::config(format!(
                "{} disagrees with the monolithic reference at voxel {voxel}, channel {channel}; refusing to time it",
                pipeline.name()
            )));
        }
    }
    Ok(())
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.threads == 0 || cfg.runs == 0 {
        return Err(Error::arg("threads and runs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::arg(format!("thread pool: {e}")))?;

    let mut records = Vec::new();
    for &dims in &cfg.grids {
        let grid = bench_grid(dims)?;
        let cfg_off =
            MonolithicConfig { grid: grid.clone(), cams: cfg.cams.clone(), binning: cfg.binning, depth_mode: false };
        let cfg_on = MonolithicConfig { depth_mode: true, ..cfg_off.clone() };
        let (graph, graph_build_ns, plan, plan_build_ns) = pool.install(|| -> Result<_> {
            let t = Instant::now();
            let graph = build_index_graph(&grid, &cfg.cams, &cfg.binning)?;
            let graph_build_ns = t.elapsed().as_nanos() as u64;
            let t = Instant::now();
            let plan = ScatterPlan::from_config(&cfg_off)?;
            Ok((graph, graph_build_ns, plan, t.elapsed().as_nanos() as u64))
        })?;

        for &channels in &cfg.channels {
            let spec = StackSpec {
                channels,
                features: FeatureGen::Uniform { seed: cfg.seed },
                depth: DepthGen::SoftmaxRandom { seed: cfg.seed.wrapping_add(1) },
            };
            let (features, depth) = make_stacks(&spec, &cfg.cams, &cfg.binning)?;
            let prepared = Prepared {
                graph: graph.clone(),
                graph_build_ns,
                plan: plan.clone(),
                plan_build_ns,
                features,
                depth,
                cfg_off: cfg_off.clone(),
                cfg_on: cfg_on.clone(),
            };
            pool.install(|| verify_prepared(&prepared, &cfg.pipelines, cfg.threads))?;

            for &pipeline in &cfg.pipelines {
                let before = peak_resident_bytes();
                let samples =
                    pool.install(|| time_runs(cfg.warmups, cfg.runs, || run_pipeline(&prepared, pipeline, cfg.threads)))?;
                let after = peak_resident_bytes();
                let med = median(&samples);
                let build_time_ns = match pipeline {
                    Pipeline::Monolithic => None,
                    Pipeline::Decomposed | Pipeline::DecomposedDepth => Some(prepared.graph_build_ns),
                    Pipeline::AtomicScatter => Some(prepared.plan_build_ns),
                };
                log::info!("{} {dims} C={channels}: median {med} ns", pipeline.name());
                records.push(BenchRecord {
                    pipeline,
                    grid: [dims.z, dims.h, dims.w],
                    num_cams: cfg.cams.len(),
                    channels,
                    depth_bins: cfg.binning.bins() as usize,
                    threads: cfg.threads,
                    build_time_ns,
                    transform_time_ns: med,
                    throughput_voxels_per_s: dims.num_voxels() as f64 / (med.max(1) as f64 * 1e-9),
                    peak_resident_delta_bytes: before.zip(after).map(|(b, a)| a.saturating_sub(b)),
                    samples_ns: samples,
                });
            }
        }
    }
    Ok(BenchReport {
        version: 1,
        rig: cfg.rig_name.clone(),
        threads: cfg.threads,
        warmups: cfg.warmups,
        runs: cfg.runs,
        records,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    pipeline: &'a str,
    grid_z: usize,
    grid_h: usize,
    grid_w: usize,
    num_cams: usize,
    channels: usize,
    depth_bins: usize,
    threads: usize,
    build_time_ns: Option<u64>,
    transform_time_ns: u64,
    throughput_voxels_per_s: f64,
    peak_resident_delta_bytes: Option<u64>,
    num_samples: usize,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }

    /// One row per record; raw samples are summarized by their count.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                pipeline: r.pipeline.name(),
                grid_z: r.grid[0],
                grid_h: r.grid[1],
                grid_w: r.grid[2],
                num_cams: r.num_cams,
                channels: r.channels,
                depth_bins: r.depth_bins,
                threads: r.threads,
                build_time_ns: r.build_time_ns,
                transform_time_ns: r.transform_time_ns,
                throughput_voxels_per_s: r.throughput_voxels_per_s,
                peak_resident_delta_bytes: r.peak_resident_delta_bytes,
                num_samples: r.samples_ns.len(),
            })
            .map_err(|e| Error::format(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn record(&self, pipeline: Pipeline, grid: GridDims, channels: usize) -> Option<&BenchRecord> {
        self.records
            .iter()
            .find(|r| r.pipeline == pipeline && r.grid == [grid.z, grid.h, grid.w] && r.channels == channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthio::{make_rig, RigSpec};

    fn small_config() -> BenchConfig {
        BenchConfig {
            rig_name: "ring6".into(),
            cams: make_rig(&RigSpec::ring6()).unwrap(),
            binning: DepthBinning::new(1.0, 61.0, 8).unwrap(),
            grids: vec![GridDims::new(2, 16, 16)],
            channels: vec![4],
            pipelines: Pipeline::ALL.to_vec(),
            threads: 2,
            warmups: 1,
            runs: 3,
            seed: 5,
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[5, 1, 3]), 3);
        assert_eq!(median(&[4, 1, 3, 2]), 2);
        assert_eq!(median(&[]), 0);
    }

    #[test]
    fn pipeline_names_round_trip() {
        for p in Pipeline::ALL {
            assert_eq!(Pipeline::parse(p.name()).unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{}\"", p.name()));
        }
        assert!(Pipeline::parse("fast").is_err());
    }

    #[test]
    fn scatter_plans_agree() {
        let cfg = small_config();
        let grid = bench_grid(cfg.grids[0]).unwrap();
        let mono = MonolithicConfig { grid: grid.clone(), cams: cfg.cams.clone(), binning: cfg.binning, depth_mode: false };
        let g = build_index_graph(&grid, &cfg.cams, &cfg.binning).unwrap();
        let a = ScatterPlan::from_config(&mono).unwrap();
        assert_eq!(a, ScatterPlan::from_index_graph(&g));
        assert!(!a.is_empty());
    }

    #[test]
    fn report_has_every_pipeline_and_raw_samples() {
        let cfg = small_config();
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.records.len(), 4);
        for r in &report.records {
            assert_eq!(r.samples_ns.len(), 3);
            assert_eq!(r.transform_time_ns, median(&r.samples_ns));
            assert_eq!(r.build_time_ns.is_some(), r.pipeline != Pipeline::Monolithic);
        }
        let csv = report.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("pipeline,grid_z,"));
        let back: BenchReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
