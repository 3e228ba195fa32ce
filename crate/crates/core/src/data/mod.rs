//! Input/output records: CSV ingestion, normalization, contiguous splits and
//! white Gaussian excitation.

mod wh;

pub use wh::{
    butterworth2, calibrate_input_std, measure_percent_nl, simulate_wh, simulate_wh_trajectory, Calibration,
    CalibrationSettings, Nonlinearity, WhSystemConfig,
};

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned input/output samples. Both signals are stored row-major: sample
/// `t` of the input occupies `u[t * n_u..(t + 1) * n_u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    u: Vec<f64>,
    y: Vec<f64>,
    n_u: usize,
    n_y: usize,
    pub sample_rate: Option<f64>,
}

impl Dataset {
    pub fn new(u: Vec<f64>, y: Vec<f64>, n_u: usize, n_y: usize) -> Result<Self> {
        if n_u == 0 || n_y == 0 {
            return Err(Error::InvalidDataset("channel counts must be at least 1".into()));
        }
        if u.len() % n_u != 0 || y.len() % n_y != 0 || u.len() / n_u != y.len() / n_y {
            return Err(Error::InvalidDataset(format!(
                "input ({} values / {n_u} channels) and output ({} values / {n_y} channels) are not aligned",
                u.len(),
                y.len()
            )));
        }
        if u.is_empty() {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        if u.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite sample".into()));
        }
        Ok(Self {
            u,
            y,
            n_u,
            n_y,
            sample_rate: None,
        })
    }

    /// Single-input single-output dataset.
    pub fn siso(u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(u, y, 1, 1)
    }

    pub fn with_sample_rate(mut self, rate: f64) -> Self {
        self.sample_rate = Some(rate);
        self
    }

    pub fn len(&self) -> usize {
        self.u.len() / self.n_u
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn u_at(&self, t: usize) -> &[f64] {
        &self.u[t * self.n_u..(t + 1) * self.n_u]
    }

    pub fn y_at(&self, t: usize) -> &[f64] {
        &self.y[t * self.n_y..(t + 1) * self.n_y]
    }

    /// Samples `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            u: self.u[start * self.n_u..end * self.n_u].to_vec(),
            y: self.y[start * self.n_y..end * self.n_y].to_vec(),
            n_u: self.n_u,
            n_y: self.n_y,
            sample_rate: self.sample_rate,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.n_u)
            .map(|i| format!("u_{i}"))
            .chain((0..self.n_y).map(|i| format!("y_{i}")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.column_names())?;
        let mut row = Vec::with_capacity(self.n_u + self.n_y);
        for t in 0..self.len() {
            row.clear();
            row.extend(self.u_at(t).iter().chain(self.y_at(t)).map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Expected channel counts of a dataset file. Columns beyond the requested
/// ones are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub n_u: usize,
    pub n_y: usize,
}

/// Reads a dataset CSV. With `layout == None` the channel counts are inferred
/// from the contiguous `u_i` / `y_i` header columns.
pub fn load_dataset(path: impl AsRef<Path>, layout: Option<ColumnLayout>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), layout)
}

pub fn read_dataset<R: Read>(reader: R, layout: Option<ColumnLayout>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let count_prefix = |p: char| (0..).take_while(|i| find(&format!("{p}_{i}")).is_some()).count();

    let (n_u, n_y) = match layout {
        Some(l) => (l.n_u, l.n_y),
        None => (count_prefix('u').max(1), count_prefix('y').max(1)),
    };
    let names: Vec<String> = (0..n_u)
        .map(|i| format!("u_{i}"))
        .chain((0..n_y).map(|i| format!("y_{i}")))
        .collect();
    let mut index = Vec::with_capacity(names.len());
    for name in &names {
        index.push(find(name).ok_or_else(|| Error::MissingColumn(name.clone()))?);
    }

    let mut u = Vec::new();
    let mut y = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (k, (&col, name)) in index.iter().zip(&names).enumerate() {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.clone(),
                    value: cell.to_owned(),
                })?;
            if k < n_u {
                u.push(value);
            } else {
                y.push(value);
            }
        }
    }
    Dataset::new(u, y, n_u, n_y)
}

/// Per-channel affine scaling to zero mean and unit (population) standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean_u: Vec<f64>,
    pub std_u: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub std_y: Vec<f64>,
}

const DEGENERATE_STD: f64 = 1e-12;

fn channel_stats(data: &[f64], n_ch: usize, ch: usize) -> (f64, f64) {
    let n = (data.len() / n_ch) as f64;
    let mean = data.iter().skip(ch).step_by(n_ch).sum::<f64>() / n;
    let var = data.iter().skip(ch).step_by(n_ch).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.len() < 2 {
            return Err(Error::InvalidDataset("normalization needs at least 2 samples".into()));
        }
        let stats = |data: &[f64], n_ch: usize, prefix: char| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut means = Vec::with_capacity(n_ch);
            let mut stds = Vec::with_capacity(n_ch);
            for ch in 0..n_ch {
                let (m, s) = channel_stats(data, n_ch, ch);
                if s <= DEGENERATE_STD {
                    return Err(Error::DegenerateChannel {
                        channel: format!("{prefix}_{ch}"),
                        std: s,
                    });
                }
                means.push(m);
                stds.push(s);
            }
            Ok((means, stds))
        };
        let (mean_u, std_u) = stats(ds.u(), ds.n_u(), 'u')?;
        let (mean_y, std_y) = stats(ds.y(), ds.n_y(), 'y')?;
        Ok(Self {
            mean_u,
            std_u,
            mean_y,
            std_y,
        })
    }

    /// Scaling that leaves data untouched.
    pub fn identity(n_u: usize, n_y: usize) -> Self {
        Self {
            mean_u: vec![0.0; n_u],
            std_u: vec![1.0; n_u],
            mean_y: vec![0.0; n_y],
            std_y: vec![1.0; n_y],
        }
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if self.mean_u.len() != ds.n_u() {
            return Err(Error::Dimension {
                context: "normalizer inputs",
                expected: self.mean_u.len(),
                got: ds.n_u(),
            });
        }
        if self.mean_y.len() != ds.n_y() {
            return Err(Error::Dimension {
                context: "normalizer outputs",
                expected: self.mean_y.len(),
                got: ds.n_y(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        scale_in_place(&mut out.u, &self.mean_u, &self.std_u, false);
        scale_in_place(&mut out.y, &self.mean_y, &self.std_y, false);
        Ok(out)
    }

    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        scale_in_place(&mut out.u, &self.mean_u, &self.std_u, true);
        scale_in_place(&mut out.y, &self.mean_y, &self.std_y, true);
        Ok(out)
    }

    /// Maps normalized output samples (row-major, `n_y` per sample) back to
    /// engineering units.
    pub fn denormalize_y(&self, y: &mut [f64]) {
        scale_in_place(y, &self.mean_y, &self.std_y, true);
    }
}

fn scale_in_place(data: &mut [f64], mean: &[f64], std: &[f64], invert: bool) {
    let n_ch = mean.len();
    for sample in data.chunks_mut(n_ch) {
        for ((v, m), s) in sample.iter_mut().zip(mean).zip(std) {
            *v = if invert { *v * s + m } else { (*v - m) / s };
        }
    }
}

/// Contiguous train/validation/test segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits by fractions; the first two lengths are `floor(N * f)` and the
/// test segment takes the remainder.
pub fn split_dataset(ds: &Dataset, fractions: [f64; 3]) -> Result<Splits> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n = ds.len() as f64;
    // small slack so that e.g. 30000 * (2/3) is not floored to 19999
    let n_train = (n * fractions[0] + 1e-9).floor() as usize;
    let n_val = (n * fractions[1] + 1e-9).floor() as usize;
    let n_test = ds.len().saturating_sub(n_train + n_val);
    split_counts(ds, [n_train, n_val, n_test])
}

/// Splits into segments of exactly the given lengths, which must cover `ds`.
pub fn split_counts(ds: &Dataset, counts: [usize; 3]) -> Result<Splits> {
    if counts.iter().sum::<usize>() != ds.len() {
        return Err(Error::Split(format!(
            "segment lengths {counts:?} do not cover {} samples",
            ds.len()
        )));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        let name = ["train", "validation", "test"][k];
        return Err(Error::Split(format!("{name} segment would be empty")));
    }
    let [a, b, _] = counts;
    Ok(Splits {
        train: ds.slice(0, a),
        val: ds.slice(a, a + b),
        test: ds.slice(a + b, ds.len()),
    })
}

/// i.i.d. zero-mean Gaussian samples from a ChaCha8 stream seeded with `seed`.
/// The sequence for `std = s` is exactly `s` times the unit-variance sequence.
pub fn generate_white_gaussian(n: usize, std: f64, seed: u64) -> Vec<f64> {
    assert!(std > 0.0 && std.is_finite(), "excitation std must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect()
}
