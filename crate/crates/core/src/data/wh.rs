//! Wiener-Hammerstein simulation system: two second-order low-pass filters
//! around a static nonlinearity, and input-level calibration against a
//! target nonlinearity level.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{generate_white_gaussian, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::eval::evaluate_bla;
use crate::linear_id::n4sid_estimate;
use crate::matrix::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Sine,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Sine => x.sin(),
            Nonlinearity::Identity => x,
        }
    }
}

/// SISO Wiener-Hammerstein system `G2 . g . G1` in state-space form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhSystemConfig {
    pub a1: Mat,
    pub b1: Mat,
    pub c1: Mat,
    pub a2: Mat,
    pub b2: Mat,
    pub c2: Mat,
    pub nonlinearity: Nonlinearity,
    pub sample_rate: f64,
    pub input_std: f64,
}

impl Default for WhSystemConfig {
    /// 200 Hz and 350 Hz Butterworth low-pass filters sampled at 1 kHz around
    /// a sine.
    fn default() -> Self {
        let fs = 1000.0;
        let (a1, b1, c1) = butterworth2(200.0, fs);
        let (a2, b2, c2) = butterworth2(350.0, fs);
        Self {
            a1,
            b1,
            c1,
            a2,
            b2,
            c2,
            nonlinearity: Nonlinearity::Sine,
            sample_rate: fs,
            input_std: 1.0,
        }
    }
}

/// Second-order Butterworth low-pass with cutoff `fc` (Hz), discretized with
/// a zero-order hold at `fs` and realized in controllable canonical form
/// `(A, B, C)` without feed-through. Unity DC gain.
pub fn butterworth2(fc: f64, fs: f64) -> (Mat, Mat, Mat) {
    let w = 2.0 * std::f64::consts::PI * fc;
    let ts = 1.0 / fs;
    // continuous: x'' + sqrt(2) w x' + w^2 x = w^2 u, augmented for ZOH
    let mut m = DMatrix::<f64>::zeros(3, 3);
    m[(0, 1)] = 1.0;
    m[(1, 0)] = -w * w;
    m[(1, 1)] = -std::f64::consts::SQRT_2 * w;
    m[(1, 2)] = 1.0;
    let e = (m * ts).exp();
    let ad = e.view((0, 0), (2, 2)).clone_owned();
    let bd = e.view((0, 2), (2, 1)).clone_owned();
    let cc = DMatrix::from_row_slice(1, 2, &[w * w, 0.0]);

    // denominator z^2 + a1 z + a2, numerator b1 z + b2 from Markov parameters
    let a1 = -ad.trace();
    let a2 = ad.determinant();
    let h1 = (&cc * &bd)[(0, 0)];
    let h2 = (&cc * &ad * &bd)[(0, 0)];
    let (num1, num2) = (h1, h2 + a1 * h1);
    (
        Mat::from_rows(&[vec![-a1, -a2], vec![1.0, 0.0]]).unwrap(),
        Mat::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
        Mat::from_rows(&[vec![num1, num2]]).unwrap(),
    )
}

fn spectral_radius(m: &Mat) -> f64 {
    m.to_dmatrix().complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

impl WhSystemConfig {
    pub fn state_dim(&self) -> usize {
        self.a1.rows + self.a2.rows
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = (self.a1.rows, self.a2.rows);
        let ok = self.a1.cols == n1
            && self.b1.rows == n1
            && self.b1.cols == 1
            && self.c1.rows == 1
            && self.c1.cols == n1
            && self.a2.cols == n2
            && self.b2.rows == n2
            && self.b2.cols == 1
            && self.c2.rows == 1
            && self.c2.cols == n2;
        if !ok {
            return Err(Error::Config("inconsistent Wiener-Hammerstein filter dimensions".into()));
        }
        for a in [&self.a1, &self.a2] {
            let rho = spectral_radius(a);
            if !(rho < 1.0) {
                return Err(Error::Unstable(rho));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output record plus the full state trajectory (`state_dim` values per
/// sample, `x[t]` before applying `u[t]`).
#[derive(Debug, Clone)]
pub struct WhTrajectory {
    pub dataset: Dataset,
    pub states: Vec<f64>,
    pub state_dim: usize,
}

/// Simulates from the zero state. Output noise (if `noise_std > 0`) is i.i.d.
/// Gaussian drawn from a stream seeded with `noise_seed`.
pub fn simulate_wh(cfg: &WhSystemConfig, u: &[f64], noise_std: f64, noise_seed: u64) -> Result<Dataset> {
    Ok(simulate_wh_trajectory(cfg, u, noise_std, noise_seed)?.dataset)
}

pub fn simulate_wh_trajectory(cfg: &WhSystemConfig, u: &[f64], noise_std: f64, noise_seed: u64) -> Result<WhTrajectory> {
    cfg.validate()?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("non-finite excitation".into()));
    }
    let (n1, n2) = (cfg.a1.rows, cfg.a2.rows);
    let mut x1 = vec![0.0; n1];
    let mut x2 = vec![0.0; n2];
    let mut states = Vec::with_capacity(u.len() * (n1 + n2));
    let mut y = Vec::with_capacity(u.len());
    for &ut in u {
        states.extend_from_slice(&x1);
        states.extend_from_slice(&x2);
        y.push(cfg.c2.matvec(&x2)[0]);
        let w = cfg.nonlinearity.eval(cfg.c1.matvec(&x1)[0]);
        let mut next1 = cfg.a1.matvec(&x1);
        for (r, v) in next1.iter_mut().enumerate() {
            *v += cfg.b1.get(r, 0) * ut;
        }
        let mut next2 = cfg.a2.matvec(&x2);
        for (r, v) in next2.iter_mut().enumerate() {
            *v += cfg.b2.get(r, 0) * w;
        }
        x1 = next1;
        x2 = next2;
    }
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        rng.set_stream(7);
        for v in &mut y {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += noise_std * z;
        }
    }
    let dataset = Dataset::siso(u.to_vec(), y)?.with_sample_rate(cfg.sample_rate);
    Ok(WhTrajectory {
        dataset,
        states,
        state_dim: n1 + n2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    /// Length of the calibration record (samples).
    pub record_len: usize,
    /// Block rows of the subspace fit; `None` uses `4 * order`.
    pub horizon: Option<usize>,
    /// Past window used to initialize the linear simulation.
    pub window: usize,
    /// Input standard deviation bracket.
    pub std_lo: f64,
    pub std_hi: f64,
    pub max_steps: usize,
    /// Stop once the level is within this many percentage points.
    pub tol: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            record_len: 20_000,
            horizon: None,
            window: 4,
            std_lo: 1e-3,
            std_hi: 5.0,
            max_steps: 40,
            tol: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub input_std: f64,
    pub achieved_nl: f64,
    pub steps: usize,
}

/// Nonlinearity level of the system excited by `input_std * unit_input`:
/// normalizes the record, fits a BLA of order `bla_order` and scores its
/// simulation on the same record.
pub fn measure_percent_nl(
    cfg: &WhSystemConfig,
    input_std: f64,
    unit_input: &[f64],
    bla_order: usize,
    horizon: usize,
    window: usize,
) -> Result<f64> {
    let u: Vec<f64> = unit_input.iter().map(|v| v * input_std).collect();
    let ds = simulate_wh(cfg, &u, 0.0, 0)?;
    let ds = Normalizer::fit(&ds)?.apply(&ds)?;
    let bla = n4sid_estimate(&ds, bla_order, horizon)?;
    let (report, _) = evaluate_bla(&bla, &ds, window)?;
    Ok(report.percent_nl.unwrap_or(100.0 * report.nrms))
}

/// Bisection (on a log scale) over the input standard deviation until the
/// measured nonlinearity level is within `settings.tol` of `target_nl`.
pub fn calibrate_input_std(
    target_nl: f64,
    cfg: &WhSystemConfig,
    bla_order: usize,
    seed: u64,
    settings: &CalibrationSettings,
) -> Result<Calibration> {
    if !(0.5..=60.0).contains(&target_nl) {
        return Err(Error::Config(format!("target {target_nl}%nl is outside [0.5, 60]")));
    }
    let horizon = settings.horizon.unwrap_or(4 * bla_order);
    let unit = generate_white_gaussian(settings.record_len, 1.0, seed);
    let measure = |std: f64| measure_percent_nl(cfg, std, &unit, bla_order, horizon, settings.window);

    let (mut lo, mut hi) = (settings.std_lo.ln(), settings.std_hi.ln());
    let nl_lo = measure(settings.std_lo)?;
    if nl_lo > target_nl {
        return Err(Error::Calibration {
            target: target_nl,
            achieved: nl_lo,
            reason: format!("level at the lower bracket std {} is already above target", settings.std_lo),
        });
    }
    let nl_hi = measure(settings.std_hi)?;
    if nl_hi < target_nl {
        return Err(Error::Calibration {
            target: target_nl,
            achieved: nl_hi,
            reason: format!("level at the upper bracket std {} is below target", settings.std_hi),
        });
    }

    let mut best = if (nl_lo - target_nl).abs() < (nl_hi - target_nl).abs() {
        (settings.std_lo, nl_lo)
    } else {
        (settings.std_hi, nl_hi)
    };
    for step in 1..=settings.max_steps {
        let mid = 0.5 * (lo + hi);
        let std = mid.exp();
        let nl = measure(std)?;
        if (nl - target_nl).abs() < (best.1 - target_nl).abs() {
            best = (std, nl);
        }
        if (nl - target_nl).abs() <= settings.tol {
            return Ok(Calibration {
                input_std: std,
                achieved_nl: nl,
                steps: step,
            });
        }
        if nl < target_nl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target_nl).abs() <= 1.0 {
        return Ok(Calibration {
            input_std: best.0,
            achieved_nl: best.1,
            steps: settings.max_steps,
        });
    }
    Err(Error::Calibration {
        target: target_nl,
        achieved: best.1,
        reason: format!("not within 1 point after {} bisection steps", settings.max_steps),
    })
}
