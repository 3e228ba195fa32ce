// Best linear approximation by subspace identification, and the linear
// map that recovers the state from a window of past inputs and outputs.
//
// cargo run --release --example bla

use subnet_id::data::{generate_white_gaussian, simulate_wh, Normalizer, WhSystemConfig};
use subnet_id::eval::evaluate_bla;
use subnet_id::linear_id::{build_recon_maps, n4sid_estimate};

pub fn run_example() -> subnet_id::Result<()> {
    let u = generate_white_gaussian(6_000, 0.8, 3);
    let ds = simulate_wh(&WhSystemConfig::default(), &u, 0.0, 0)?;
    let ds = Normalizer::fit(&ds)?.apply(&ds)?;
    let (est, test) = (ds.slice(0, 5_000), ds.slice(5_000, 6_000));

    let bla = n4sid_estimate(&est, 4, 16)?;
    println!("poles:");
    for p in bla.eigenvalues().iter() {
        println!("  {:+.4} {:+.4}i  (|p| = {:.4})", p.re, p.im, p.norm());
    }

    let (report, _) = evaluate_bla(&bla, &test, 4)?;
    println!("test NRMS {:.4}, nonlinearity {:.2} %", report.nrms, report.percent_nl.unwrap());

    let maps = build_recon_maps(&bla, 4)?;
    let x = maps.reconstruct_state(&test.y()[..4], &test.u()[..4])?;
    println!("state at t = 4 from the first four samples: {x:.4?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> subnet_id::Result<()> {
    run_example()
}
