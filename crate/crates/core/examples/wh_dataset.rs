// Simulate the Wiener-Hammerstein system, pick the input level for a target
// nonlinearity and write train/val/test CSV files.
//
// cargo run --release --example wh_dataset

use subnet_id::data::{
    calibrate_input_std, generate_white_gaussian, load_dataset, simulate_wh, split_counts, CalibrationSettings,
    WhSystemConfig,
};

pub fn run_example() -> subnet_id::Result<()> {
    let system = WhSystemConfig::default();
    let settings = CalibrationSettings {
        record_len: 5_000,
        ..Default::default()
    };
    let cal = calibrate_input_std(10.0, &system, 4, 1, &settings)?;
    println!("input std {:.4} -> {:.2} %nl after {} steps", cal.input_std, cal.achieved_nl, cal.steps);

    // same seed as calibration: the training split is the calibration record
    let u: Vec<f64> = generate_white_gaussian(7_000, 1.0, 1).iter().map(|v| v * cal.input_std).collect();
    let ds = simulate_wh(&system, &u, 0.0, 0)?;
    let splits = split_counts(&ds, [5_000, 1_000, 1_000])?;

    let dir = std::env::temp_dir().join("subnet-id-wh-dataset");
    std::fs::create_dir_all(&dir)?;
    splits.train.save(dir.join("train.csv"))?;
    splits.val.save(dir.join("val.csv"))?;
    splits.test.save(dir.join("test.csv"))?;
    let back = load_dataset(dir.join("train.csv"), None)?;
    assert_eq!(back.len(), 5_000);
    println!("wrote {} / {} / {} samples to {}", back.len(), splits.val.len(), splits.test.len(), dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> subnet_id::Result<()> {
    run_example()
}
