use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bevlut::bench::{run_bench, BenchConfig, Pipeline, DEFAULT_RUNS, DEFAULT_WARMUPS};
use bevlut::geometry::{DepthBinning, GridDims, VoxelGrid};
use bevlut::indexgraph::{build_index_graph, coverage_stats, IndexGraph};
use bevlut::opgraph::{export_graph, lower};
use bevlut::synthio::{load_calibration, make_rig, RigSpec, Tensor};
use bevlut::verify::verify_random;
use bevlut::{aggregation, Error};

#[derive(Parser)]
#[command(name = "bevlut", version, about = "Camera-to-BEV transformation with precomputed index graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index graph from a calibration file and write it as FBLT.
    BuildLut {
        /// Calibration JSON.
        #[arg(long)]
        calib: PathBuf,
        /// Grid extent in cells, e.g. 4x50x50 (Z x H x W).
        #[arg(long, value_parser = parse_dims)]
        grid: GridDims,
        /// Ego-frame corner of voxel (0, 0, 0): x,y,z in meters.
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        origin: [f64; 3],
        /// Voxel edge lengths sx,sy,sz in meters.
        #[arg(long, value_parser = parse_triple)]
        voxel: [f64; 3],
        /// Depth binning dmin,dmax,D.
        #[arg(long, value_parser = parse_binning)]
        depth: DepthBinning,
        /// Output FBLT file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the decomposed transform on FBTN tensors.
    Transform {
        /// Index graph (FBLT).
        #[arg(long)]
        lut: PathBuf,
        /// Feature stack, shape [N, H, W, C].
        #[arg(long)]
        features: PathBuf,
        /// Depth distribution, shape [N, D, H, W]. Omit for depth-free mode.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Output BEV volume, shape [Z, H, W, C].
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized bit-exact equivalence of decomposed, monolithic and
    /// operator-graph pipelines. Exits 1 on the first disagreement.
    Verify {
        /// Calibration JSON to use as the fixed rig. Without it every case
        /// draws a random ring rig.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
    /// Time the pipelines and write a JSON report plus a CSV flattening.
    Bench {
        /// Rig preset: ringN, e.g. ring6.
        #[arg(long, default_value = "ring6")]
        preset: String,
        /// Comma-separated grids, e.g. 6x128x128,2x64x64.
        #[arg(long, value_delimiter = ',', value_parser = parse_dims, default_value = "6x128x128")]
        grids: Vec<GridDims>,
        /// Comma-separated channel counts.
        #[arg(long, value_delimiter = ',', default_value = "32")]
        channels: Vec<usize>,
        /// Comma-separated subset of: monolithic, decomposed, decomposed+depth,
        /// atomic-scatter-baseline. Defaults to all.
        #[arg(long, value_delimiter = ',', value_parser = parse_pipeline)]
        pipelines: Vec<Pipeline>,
        /// Depth binning dmin,dmax,D.
        #[arg(long, value_parser = parse_binning, default_value = "1,61,60")]
        depth: DepthBinning,
        /// Worker threads; defaults to the number of logical CPUs.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_WARMUPS)]
        warmups: usize,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// CSV path; defaults to the report path with a .csv extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Lower an index graph to an operator graph and write it as JSON. The
    /// index constants stay in the FBLT file, referenced as a sidecar.
    ExportGraph {
        #[arg(long)]
        lut: PathBuf,
        /// Include the depth gather and multiply.
        #[arg(long)]
        depth: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<const N: usize>(s: &str, sep: char) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(sep)
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|p: Vec<f64>| format!("expected {N} values, got {}", p.len()))
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_list::<3>(s, ',')
}

fn parse_dims(s: &str) -> Result<GridDims, String> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [z, h, w] if z > 0 && h > 0 && w > 0 => Ok(GridDims::new(z, h, w)),
        _ => Err(format!("expected ZxHxW with positive extents, got {s:?}")),
    }
}

fn parse_binning(s: &str) -> Result<DepthBinning, String> {
    let [d_min, d_max, bins] = parse_list::<3>(s, ',')?;
    if bins.fract() != 0.0 || bins < 1.0 || bins > u32::MAX as f64 {
        return Err(format!("bin count must be a positive integer, got {bins}"));
    }
    DepthBinning::new(d_min, d_max, bins as u32).map_err(|e| e.to_string())
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    Pipeline::parse(s).map_err(|e| e.to_string())
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn run(cmd: Command) -> bevlut::Result<Outcome> {
    match cmd {
        Command::BuildLut { calib, grid, origin, voxel, depth, out } => {
            let cams = load_calibration(&calib)?;
            let grid = VoxelGrid::new(origin, voxel, grid)?;
            let g = build_index_graph(&grid, &cams, &depth)?;
            g.save(&out)?;
            let stats = coverage_stats(&g);
            println!(
                "wrote {}: grid {} cameras {} valid {}/{} fingerprint {:016x}",
                out.display(),
                g.dims(),
                cams.len(),
                stats.valid_count,
                g.num_voxels(),
                g.fingerprint()
            );
        }
        Command::Transform { lut, features, depth, out } => {
            let g = IndexGraph::load(&lut)?;
            let features = aggregation::FeatureStack::try_from(Tensor::load(&features)?)?;
            let depth = depth.map(|p| Tensor::load(p).and_then(aggregation::DepthStack::try_from)).transpose()?;
            let bev = aggregation::transform(&features, depth.as_ref(), &g)?;
            Tensor::from(&bev).save(&out)?;
            println!("wrote {}: shape {:?}", out.display(), bev.shape());
        }
        Command::Verify { calib, seed, cases } => {
            let rig = calib.map(load_calibration).transpose()?;
            let summary = verify_random(seed, cases, rig.as_deref())?;
            if let Some((case, d)) = summary.failures.first() {
                eprintln!("FAIL {case}\n  {d}");
                eprintln!("{} of {} cases diverged", summary.failures.len(), summary.cases);
                return Ok(Outcome::VerificationFailed);
            }
            println!(
                "ok: {} cases bit-exact ({} with covered voxels), seed {seed}",
                summary.cases, summary.nonempty_cases
            );
        }
        Command::Bench { preset, grids, channels, pipelines, depth, threads, warmups, runs, seed, out, csv } => {
            let cfg = BenchConfig {
                cams: make_rig(&RigSpec::preset(&preset)?)?,
                rig_name: preset,
                binning: depth,
                grids,
                channels,
                pipelines: if pipelines.is_empty() { Pipeline::ALL.to_vec() } else { pipelines },
                threads: threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                warmups,
                runs,
                seed,
            };
            let report = match run_bench(&cfg) {
                Err(Error::Config(msg)) if msg.contains("refusing to time") => {
                    eprintln!("{msg}");
                    return Ok(Outcome::VerificationFailed);
                }
                r => r?,
            };
            std::fs::write(&out, report.to_json())?;
            let csv = csv.unwrap_or_else(|| out.with_extension("csv"));
            std::fs::write(&csv, report.to_csv()?)?;
            for r in &report.records {
                println!(
                    "{:<24} {:>4}x{}x{} C={:<3} median {:>12} ns",
                    r.pipeline.name(),
                    r.grid[0],
                    r.grid[1],
                    r.grid[2],
                    r.channels,
                    r.transform_time_ns
                );
            }
            println!("wrote {} and {}", out.display(), csv.display());
        }
        Command::ExportGraph { lut, depth, out } => {
            let g = IndexGraph::load(&lut)?;
            let mut graph = lower(&g, depth);
            graph.set_sidecar_path(&sidecar_path(&lut, &out));
            std::fs::write(&out, export_graph(&graph))?;
            println!("wrote {}: {} nodes", out.display(), graph.nodes.len());
        }
    }
    Ok(Outcome::Ok)
}

/// The LUT path as seen from the graph file's directory when both share
/// one, otherwise as given.
fn sidecar_path(lut: &Path, graph: &Path) -> String {
    let graph_dir = graph.parent().unwrap_or(Path::new(""));
    match lut.strip_prefix(graph_dir) {
        Ok(rel) if !graph_dir.as_os_str().is_empty() => rel.display().to_string(),
        _ => lut.display().to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
