//! Compares the decomposed pipeline with the monolithic reference on a few
//! random rigs and reports the first voxel where they differ, if any.
//!
//!     cargo run --release --example oracle_equivalence -- [cases] [seed]

use bevlut::verify::{random_case, run_case};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bevlut::Result<()> {
    let mut args = std::env::args().skip(1);
    let cases: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for i in 0..cases {
        let case = random_case(&mut rng, i, None)?;
        let report = run_case(&case)?;
        let status = match &report.divergence {
            None => "ok".to_string(),
            Some(d) => {
                failures += 1;
                d.to_string()
            }
        };
        println!("{case} valid={}/{}: {status}", report.valid_voxels, report.num_voxels);
    }
    println!("{failures} of {cases} cases diverged");
    if failures > 0 {
        std::process::exit(1);
    }
    Ok(())
}
