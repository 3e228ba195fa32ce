// Measured data from CSV files with the order-6 benchmark layout. Here
// the "measurements" are synthesized so the example runs standalone; point
// the preset at real files instead.
//
// cargo run --release --example external_csv

use subnet_id::cli::{cmd_experiment, ExperimentConfig};
use subnet_id::data::{generate_white_gaussian, simulate_wh, split_counts, WhSystemConfig};
use subnet_id::subnet::Scheme;

pub fn run_example() -> subnet_id::Result<()> {
    let dir = std::env::temp_dir().join("subnet-id-external");
    std::fs::create_dir_all(&dir)?;
    let u = generate_white_gaussian(4_000, 1.0, 11);
    let ds = simulate_wh(&WhSystemConfig::default(), &u, 1e-3, 12)?;
    let s = split_counts(&ds, [3_000, 500, 500])?;
    let paths = [dir.join("train.csv"), dir.join("val.csv"), dir.join("test.csv")];
    s.train.save(&paths[0])?;
    s.val.save(&paths[1])?;
    s.test.save(&paths[2])?;

    let [train, val, test] = paths;
    let mut cfg = ExperimentConfig::wh_benchmark(train, val, test);
    cfg.schemes = vec![Scheme::LinDyLinEnc];
    cfg.runs = 1;
    cfg.train.epochs = 2;
    cfg.model.hidden = vec![8, 8];
    cfg.output_dir = dir.join("run");
    let summary = cmd_experiment(&cfg)?;
    let bla = &summary.bla[0];
    println!("BLA test NRMS {:.4} ({:.1} %nl)", bla.test_nrms, bla.percent_nl);
    println!("trained test NRMS {:.4}", summary.cells[0].test_nrms);
    Ok(())
}

#[allow(dead_code)]
fn main() -> subnet_id::Result<()> {
    run_example()
}
