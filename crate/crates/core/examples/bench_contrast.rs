//! Times the monolithic transform, the decomposed pipeline and the atomic
//! scatter baseline on one grid and prints the ratios.
//!
//!     cargo run --release --example bench_contrast -- [ZxHxW] [channels] [threads]

use bevlut::bench::{run_bench, BenchConfig, Pipeline, DEFAULT_RUNS, DEFAULT_WARMUPS};
use bevlut::prelude::*;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dims: Vec<usize> = args
        .next()
        .unwrap_or_else(|| "6x128x128".into())
        .split('x')
        .map(|s| s.parse().expect("grid is ZxHxW"))
        .collect();
    let grid = GridDims::new(dims[0], dims[1], dims[2]);
    let channels: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(32);
    let threads: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let cfg = BenchConfig {
        rig_name: "ring6".into(),
        cams: make_rig(&RigSpec::ring6())?,
        binning: DepthBinning::new(1.0, 61.0, 60)?,
        grids: vec![grid],
        channels: vec![channels],
        pipelines: Pipeline::ALL.to_vec(),
        threads,
        warmups: DEFAULT_WARMUPS,
        runs: DEFAULT_RUNS,
        seed: 0,
    };
    let report = run_bench(&cfg)?;
    let decomposed = report.record(Pipeline::Decomposed, grid, channels).expect("timed").transform_time_ns as f64;
    for r in &report.records {
        println!(
            "{:<24} median {:>10.3} ms  {:>6.2}x decomposed  build {:>8}",
            r.pipeline.name(),
            r.transform_time_ns as f64 * 1e-6,
            r.transform_time_ns as f64 / decomposed,
            r.build_time_ns.map_or("-".into(), |ns| format!("{:.1} ms", ns as f64 * 1e-6)),
        );
    }
    Ok(())
}
