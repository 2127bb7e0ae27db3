//! Lowers an index graph to an operator graph, validates it, exports it as
//! JSON, parses it back, binds the index constants and interprets it.
//!
//!     cargo run --example operator_graph

use bevlut::opgraph::OpKind;
use bevlut::prelude::*;

fn main() -> Result<()> {
    let cams = make_rig(&RigSpec::ring(4))?;
    let binning = DepthBinning::new(1.0, 41.0, 8)?;
    let grid = VoxelGrid::new([-16.0, -16.0, -1.0], [2.0, 2.0, 1.0], GridDims::new(2, 16, 16))?;
    let g = build_index_graph(&grid, &cams, &binning)?;

    let graph = lower(&g, true);
    for node in &graph.nodes {
        println!("{:>2} {:<12} {:?}", node.id, node.kind.as_str(), node.inputs);
    }
    println!("violations: {:?}", validate(&graph));

    let text = export_graph(&graph);
    println!("exported {} bytes of JSON", text.len());
    let mut parsed = parse_graph(&text)?;
    parsed.bind_constants(&g)?;

    let spec = StackSpec { channels: 8, features: FeatureGen::CoordinateEncoded, depth: DepthGen::SoftmaxRandom { seed: 3 } };
    let (features, depth) = make_stacks(&spec, &cams, &binning)?;
    let out = interpret(&parsed, GraphInputs { features: &features, depth: Some(&depth) })?;
    let expected = transform(&features, Some(&depth), &g)?;
    println!("interpreter matches transform bitwise: {}", out.bit_eq(&expected));

    let mut bad = graph.clone();
    bad.nodes[6].kind = OpKind::Other("CUSTOM".into());
    for v in validate(&bad) {
        println!("rejected: {v}");
    }
    Ok(())
}
