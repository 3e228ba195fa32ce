// Train a small model from the BLA-based initialization and score it on
// held-out data in engineering units.
//
// cargo run --release --example train_subnet

use subnet_id::data::{generate_white_gaussian, simulate_wh, split_counts, Normalizer, WhSystemConfig};
use subnet_id::eval::evaluate_model;
use subnet_id::linear_id::{build_recon_maps, n4sid_estimate};
use subnet_id::subnet::{apply_init_scheme, subnet_new, train, Scheme, SubnetDims, TrainConfig};

pub fn run_example() -> subnet_id::Result<()> {
    let u = generate_white_gaussian(4_000, 1.0, 9);
    let ds = simulate_wh(&WhSystemConfig::default(), &u, 0.0, 0)?;
    let s = split_counts(&ds, [3_000, 500, 500])?;
    let norm = Normalizer::fit(&s.train)?;
    let (tr, va) = (norm.apply(&s.train)?, norm.apply(&s.val)?);

    let bla = n4sid_estimate(&tr, 4, 16)?;
    let maps = build_recon_maps(&bla, 4)?;
    let dims = SubnetDims {
        n_x: 4,
        n_u: 1,
        n_y: 1,
        n_a: 4,
        n_b: 4,
    };
    let init = apply_init_scheme(&subnet_new(dims, &[16, 16], 0), Scheme::LinDyLinEnc, Some(&bla), Some(&maps))?;

    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 128,
        scheme: Scheme::LinDyLinEnc,
        ..Default::default()
    };
    let (mut model, history) = train(&init, &tr, &va, &cfg)?;
    for r in &history.records {
        println!("epoch {:>2}  train {:.3e}  val NRMS {:.5}", r.epoch, r.train_loss, r.val_nrms);
    }
    model.normalizer = Some(norm.clone());
    let (report, _) = evaluate_model(&model, &s.test, &norm)?;
    println!("best epoch {}, test NRMS {:.5}", history.best_epoch, report.nrms);
    Ok(())
}

#[allow(dead_code)]
fn main() -> subnet_id::Result<()> {
    run_example()
}
