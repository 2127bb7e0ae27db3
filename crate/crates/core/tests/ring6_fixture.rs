mod common;

use bevlut::bench::atomic_scatter_baseline;
use bevlut::prelude::*;
use bevlut::synthio::coordinate_value;
use common::*;

fn fixture_graph() -> IndexGraph {
    build_index_graph(&fixture_grid(), &ring6(), &fixture_binning()).unwrap()
}

#[test]
fn coverage_matches_frozen_counts() {
    let stats = coverage_stats(&fixture_graph());
    assert_eq!(stats.valid_count, FIXTURE_VALID);
    assert_eq!(stats.per_camera, FIXTURE_PER_CAMERA);
}

#[test]
fn brute_force_owners_match_frozen_counts() {
    let owners = brute_force_owners(&fixture_grid(), &ring6(), &fixture_binning());
    let (valid, per) = owner_counts(&owners, 6);
    assert_eq!(valid, FIXTURE_VALID);
    assert_eq!(per, FIXTURE_PER_CAMERA);
}

#[test]
fn graph_equals_brute_force_entry_by_entry() {
    let g = fixture_graph();
    let owners = brute_force_owners(&fixture_grid(), &ring6(), &fixture_binning());
    for (i, entry) in g.entries().iter().enumerate() {
        let (z, y, x) = g.dims().unlinear(i);
        let expected = owners[z][y][x];
        let got = entry.map(|e| (e.cam as usize, e.u as usize, e.v as usize, e.depth_bin as usize));
        assert_eq!(got, expected, "voxel ({z}, {y}, {x})");
    }
}

#[test]
fn decomposed_matches_brute_force_with_random_stacks() {
    let g = fixture_graph();
    for (seed, depth_mode) in [(1, false), (2, true), (3, true)] {
        let spec = StackSpec {
            channels: 8,
            features: FeatureGen::Uniform { seed },
            depth: DepthGen::SoftmaxRandom { seed: seed + 100 },
        };
        let (features, depth) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();
        let depth = depth_mode.then_some(&depth);
        let expected = brute_force(&fixture_grid(), &ring6(), &fixture_binning(), &features, depth);
        let got = transform(&features, depth, &g).unwrap();
        assert_eq!(bits(got.as_slice()), bits(&expected), "seed {seed}");
    }
}

#[test]
fn coordinate_encoded_gather_is_closed_form() {
    let g = fixture_graph();
    let spec = StackSpec { channels: 4, features: FeatureGen::CoordinateEncoded, depth: DepthGen::Ones };
    let (features, _) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();
    let flat = gather_features(&features, &g).unwrap();
    let l = g.layout();
    for (i, entry) in g.entries().iter().enumerate() {
        let row = flat.row(i);
        match entry {
            None => assert!(row.iter().all(|&v| v == 0.0)),
            Some(e) => {
                for (c, &v) in row.iter().enumerate() {
                    let want = coordinate_value(e.cam as usize, e.v as usize, e.u as usize, c, l.img_h, l.img_w, 4);
                    assert_eq!(v, want);
                }
            }
        }
    }
}

#[test]
fn depth_weights_match_brute_force_lookup() {
    let g = fixture_graph();
    let spec = StackSpec { channels: 1, features: FeatureGen::Constant(1.0), depth: DepthGen::SoftmaxRandom { seed: 9 } };
    let (features, depth) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();
    let weights = gather_depth_weights(&depth, &g).unwrap();
    let expected = brute_force(&fixture_grid(), &ring6(), &fixture_binning(), &features, Some(&depth));
    assert_eq!(bits(&weights), bits(&expected));
}

#[test]
fn oracle_and_scatter_match_decomposed() {
    let g = fixture_graph();
    let spec = StackSpec { channels: 16, features: FeatureGen::Uniform { seed: 4 }, depth: DepthGen::SoftmaxRandom { seed: 5 } };
    let (features, depth) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();

    let off = transform(&features, None, &g).unwrap();
    assert!(transform_monolithic(&fixture_config(false), &features, None).unwrap().bit_eq(&off));
    assert!(atomic_scatter_baseline(&features, &fixture_config(false)).unwrap().bit_eq(&off));

    let on = transform(&features, Some(&depth), &g).unwrap();
    assert!(transform_monolithic(&fixture_config(true), &features, Some(&depth)).unwrap().bit_eq(&on));
}

#[test]
fn scatter_is_thread_count_independent() {
    let spec = StackSpec { channels: 8, features: FeatureGen::Uniform { seed: 6 }, depth: DepthGen::Ones };
    let (features, _) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| atomic_scatter_baseline(&features, &fixture_config(false)).unwrap())
    };
    assert!(run(1).bit_eq(&run(4)));
}

#[test]
fn constant_stack_reads_constant_times_weight() {
    let g = fixture_graph();
    let spec = StackSpec { channels: 3, features: FeatureGen::Constant(3.5), depth: DepthGen::SoftmaxRandom { seed: 2 } };
    let (features, depth) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();
    let weights = gather_depth_weights(&depth, &g).unwrap();
    let bev = transform(&features, Some(&depth), &g).unwrap();
    for (i, entry) in g.entries().iter().enumerate() {
        let want = if entry.is_some() { 3.5 * weights[i] } else { 0.0 };
        assert!(bev.as_slice()[i * 3..(i + 1) * 3].iter().all(|&v| v == want));
    }
}

#[test]
fn stacks_are_unchanged_by_the_pipeline() {
    let g = fixture_graph();
    let spec = StackSpec { channels: 4, features: FeatureGen::Uniform { seed: 8 }, depth: DepthGen::SoftmaxRandom { seed: 8 } };
    let (features, depth) = make_stacks(&spec, &ring6(), &fixture_binning()).unwrap();
    let (f0, d0) = (bits(features.values()), bits(depth.values()));
    transform(&features, Some(&depth), &g).unwrap();
    interpret(&lower(&g, true), GraphInputs { features: &features, depth: Some(&depth) }).unwrap();
    assert_eq!((bits(features.values()), bits(depth.values())), (f0, d0));
}
