// The three initialization schemes side by side. With both the linear
// dynamics and the linear encoder taken from the BLA, the untrained
// network simulates exactly like the BLA.
//
// cargo run --release --example init_schemes

use subnet_id::data::{generate_white_gaussian, simulate_wh, Normalizer, WhSystemConfig};
use subnet_id::eval::evaluate_bla;
use subnet_id::linear_id::{build_recon_maps, n4sid_estimate};
use subnet_id::subnet::{apply_init_scheme, subnet_new, validation_nrms, Scheme, SubnetDims};

pub fn run_example() -> subnet_id::Result<()> {
    let u = generate_white_gaussian(5_000, 0.6, 5);
    let ds = simulate_wh(&WhSystemConfig::default(), &u, 0.0, 0)?;
    let ds = Normalizer::fit(&ds)?.apply(&ds)?;
    let (est, val) = (ds.slice(0, 4_000), ds.slice(4_000, 5_000));

    let bla = n4sid_estimate(&est, 4, 16)?;
    let maps = build_recon_maps(&bla, 4)?;
    let (bla_report, _) = evaluate_bla(&bla, &val, 4)?;
    println!("{:<14} NRMS {:.5}", "BLA", bla_report.nrms);

    let dims = SubnetDims {
        n_x: 4,
        n_u: 1,
        n_y: 1,
        n_a: 4,
        n_b: 4,
    };
    let base = subnet_new(dims, &[16, 16], 0);
    for scheme in Scheme::ALL {
        let model = apply_init_scheme(&base, scheme, Some(&bla), Some(&maps))?;
        println!("{:<14} NRMS {:.5}", scheme.to_string(), validation_nrms(&model, &val)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> subnet_id::Result<()> {
    run_example()
}
