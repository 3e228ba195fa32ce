// A miniature sweep over nonlinearity levels, schemes and seeds, writing
// `summary.csv`, `medians.csv`, histories and models.
//
// cargo run --release --example experiment_grid

use subnet_id::cli::{cmd_experiment, ExperimentConfig};
use subnet_id::subnet::Scheme;

pub fn run_example() -> subnet_id::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.data.n_train = 3_000;
    cfg.data.n_val = 500;
    cfg.data.n_test = 500;
    cfg.nl_targets = vec![5.0, 20.0];
    cfg.schemes = vec![Scheme::RanDyRanEnc, Scheme::LinDyLinEnc];
    cfg.runs = 2;
    cfg.train.epochs = 2;
    cfg.model.hidden = vec![8, 8];
    cfg.output_dir = std::env::temp_dir().join("subnet-id-grid");

    let summary = cmd_experiment(&cfg)?;
    for m in &summary.medians {
        println!("{:>4} %nl  {:<14} median test NRMS {:.4}", m.nl_target.unwrap(), m.scheme.to_string(), m.median_test_nrms);
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> subnet_id::Result<()> {
    run_example()
}
