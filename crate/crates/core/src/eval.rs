//! Simulation-error metrics and model evaluation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::linear_id::{build_recon_maps, simulate_lss, LinearSS};
use crate::subnet::SubnetModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Normalized RMS simulation error as a fraction.
    pub nrms: f64,
    /// Nonlinearity level, present when the evaluated model is a BLA.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percent_nl: Option<f64>,
    /// Initial samples used by the encoder and excluded from scoring.
    pub n: usize,
    /// Number of scored samples.
    pub n_scored: usize,
    /// `y_hat - y` per scored sample, row-major over output channels.
    pub errors: Vec<f64>,
}

impl EvalReport {
    fn new(y_hat: &[f64], y: &[f64], n_y: usize, n: usize) -> Result<Self> {
        Ok(Self {
            nrms: nrms(y_hat, y, n_y)?,
            percent_nl: None,
            n,
            n_scored: y.len() / n_y,
            errors: y_hat.iter().zip(y).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Root-mean-square of `||y_hat[t] - y[t]||` divided by the (population)
/// standard deviation of `y` over the same samples. For several outputs the
/// deviation is pooled: `sigma^2 = mean_t ||y[t] - mean(y)||^2`.
pub fn nrms(y_hat: &[f64], y: &[f64], n_y: usize) -> Result<f64> {
    if y_hat.len() != y.len() || y.len() % n_y != 0 || y.is_empty() {
        return Err(Error::Dimension {
            context: "nrms signals",
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    let count = (y.len() / n_y) as f64;
    let mut mean = vec![0.0; n_y];
    for sample in y.chunks(n_y) {
        for (m, v) in mean.iter_mut().zip(sample) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let var = y
        .chunks(n_y)
        .map(|s| s.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / count;
    if !(var > 0.0) {
        return Err(Error::DegenerateOutput);
    }
    let mse = y_hat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / count;
    Ok((mse / var).sqrt())
}

/// Nonlinearity level in percent: the share of output behavior the best
/// linear approximation leaves unexplained, `100 * NRMS_BLA`.
pub fn percent_nl(nrms_bla: f64) -> f64 {
    if nrms_bla > 1.0 {
        log::warn!("linear model NRMS {nrms_bla} exceeds 1; it does worse than predicting the mean");
    }
    100.0 * nrms_bla
}

/// Encoder-initialized free-run simulation of `model` on raw data. Outputs
/// cover samples `n..N` with `n = max(n_a, n_b)`, in engineering units.
pub fn simulate_model(model: &SubnetModel, ds: &Dataset, normalizer: &Normalizer) -> Result<Vec<f64>> {
    let normalized = normalizer.apply(ds)?;
    let mut y_hat = model.simulate(&normalized)?;
    normalizer.denormalize_y(&mut y_hat);
    Ok(y_hat)
}

/// Scores a model on raw data; returns the report and the simulated outputs.
pub fn evaluate_model(model: &SubnetModel, ds: &Dataset, normalizer: &Normalizer) -> Result<(EvalReport, Vec<f64>)> {
    let n = model.dims.lag();
    let y_hat = simulate_model(model, ds, normalizer)?;
    let report = EvalReport::new(&y_hat, &ds.y()[n * ds.n_y()..], ds.n_y(), n)?;
    Ok((report, y_hat))
}

/// Linear simulation whose initial state at sample `n` is recovered with the
/// reconstructability map from samples `0..n`. Outputs cover `n..N`.
pub fn simulate_bla(ss: &LinearSS, ds: &Dataset, n: usize) -> Result<Vec<f64>> {
    if ds.len() <= n {
        return Err(Error::InvalidDataset(format!(
            "simulation needs more than {n} samples, got {}",
            ds.len()
        )));
    }
    let maps = build_recon_maps(ss, n)?;
    let x0 = maps.reconstruct_state(&ds.y()[..n * ds.n_y()], &ds.u()[..n * ds.n_u()])?;
    Ok(simulate_lss(ss, &ds.u()[n * ds.n_u()..], &x0))
}

/// BLA simulation NRMS and nonlinearity level on a (normalized) dataset.
pub fn evaluate_bla(ss: &LinearSS, ds: &Dataset, n: usize) -> Result<(EvalReport, Vec<f64>)> {
    let y_hat = simulate_bla(ss, ds, n)?;
    let mut report = EvalReport::new(&y_hat, &ds.y()[n * ds.n_y()..], ds.n_y(), n)?;
    report.percent_nl = Some(percent_nl(report.nrms));
    Ok((report, y_hat))
}

/// Per-sample CSV `t,y,y_hat,err` (first output channel per row group when
/// `n_y > 1`: one row per channel and sample).
pub fn write_errors_csv<W: Write>(w: W, first_t: usize, y: &[f64], y_hat: &[f64], n_y: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "y", "y_hat", "err"])?;
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        let t = first_t + i / n_y;
        wtr.write_record([t.to_string(), a.to_string(), b.to_string(), (b - a).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
