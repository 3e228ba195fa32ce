//! Linear state-space identification (subspace method) and the time-inverted
//! reconstructability map of a linear model.

use log::warn;
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::serde_dmatrix;

/// Relative singular-value threshold used for ranks and pseudo-inverses.
pub const RANK_TOL: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e12;

/// Discrete-time linear state-space model without feed-through:
/// `x[t+1] = A x[t] + B u[t]`, `y[t] = C x[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSS {
    #[serde(with = "serde_dmatrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_dmatrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_dmatrix")]
    pub c: DMatrix<f64>,
    pub n_x: usize,
}

impl LinearSS {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n_x = a.nrows();
        if a.ncols() != n_x {
            return Err(Error::Dimension {
                context: "state matrix columns",
                expected: n_x,
                got: a.ncols(),
            });
        }
        if b.nrows() != n_x {
            return Err(Error::Dimension {
                context: "input matrix rows",
                expected: n_x,
                got: b.nrows(),
            });
        }
        if c.ncols() != n_x {
            return Err(Error::Dimension {
                context: "output matrix columns",
                expected: n_x,
                got: c.ncols(),
            });
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear state-space matrices"));
        }
        Ok(Self { a, b, c, n_x })
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// `C A^k B`.
    pub fn markov(&self, k: usize) -> DMatrix<f64> {
        let mut m = self.b.clone();
        for _ in 0..k {
            m = &self.a * m;
        }
        &self.c * m
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.a.clone().complex_eigenvalues().iter().copied().collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ss: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(ss.a, ss.b, ss.c)
    }
}

/// Runs the linear recursion from `x0`. `u` holds `n_u` values per sample;
/// the result holds `n_y` values per sample, `y[t] = C x[t]`.
pub fn simulate_lss(ss: &LinearSS, u: &[f64], x0: &[f64]) -> Vec<f64> {
    let (n_x, n_u, n_y) = (ss.n_x, ss.n_u(), ss.n_y());
    assert_eq!(x0.len(), n_x, "initial state dimension");
    assert_eq!(u.len() % n_u, 0, "input length");
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n_x];
    let mut y = Vec::with_capacity(u.len() / n_u * n_y);
    for ut in u.chunks(n_u) {
        for r in 0..n_y {
            y.push((0..n_x).map(|c| ss.c[(r, c)] * x[c]).sum());
        }
        for r in 0..n_x {
            next[r] = (0..n_x).map(|c| ss.a[(r, c)] * x[c]).sum::<f64>()
                + (0..n_u).map(|c| ss.b[(r, c)] * ut[c]).sum::<f64>();
        }
        std::mem::swap(&mut x, &mut next);
    }
    y
}

/// Moore-Penrose pseudo-inverse via SVD, discarding singular values below
/// `rel_tol * sigma_max`. Returns the inverse and the numerical rank.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = rel_tol * s_max;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            out += (v_t.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    (out, rank)
}

fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.solve(b, RANK_TOL * s_max).expect("svd with u and v_t")
}

/// Subspace identification with past/future block-Hankel matrices of
/// `horizon` block rows. The order is fixed to `n_x`; `D` is zero.
///
/// The oblique projection of future outputs onto past data along future
/// inputs is formed from an LQ factorization; `A` and `C` come from the
/// shift structure of the extended observability matrix and `B` (jointly
/// with a discarded initial state) from least squares on the output
/// equation.
pub fn n4sid_estimate(ds: &Dataset, n_x: usize, horizon: usize) -> Result<LinearSS> {
    let (n_u, n_y, n) = (ds.n_u(), ds.n_y(), ds.len());
    let i = horizon;
    if n_x == 0 {
        return Err(Error::Config("model order must be at least 1".into()));
    }
    if i <= n_x {
        return Err(Error::Config(format!("horizon {i} must exceed the order {n_x}")));
    }
    if n < 10 * i * n_u.max(n_y) || n < 2 * i {
        return Err(Error::Config(format!(
            "{n} samples are too few for horizon {i} (need at least {})",
            10 * i * n_u.max(n_y)
        )));
    }

    let j = n - 2 * i + 1;
    let (ru, ry) = (i * n_u, i * n_y);
    let width = 2 * ru + 2 * ry;
    // Rows are time columns of the Hankel matrices: [U_f | U_p | Y_p | Y_f].
    let mut h = DMatrix::<f64>::zeros(j, width);
    for col in 0..j {
        for k in 0..i {
            for c in 0..n_u {
                h[(col, k * n_u + c)] = ds.u_at(col + i + k)[c];
                h[(col, ru + k * n_u + c)] = ds.u_at(col + k)[c];
            }
            for c in 0..n_y {
                h[(col, 2 * ru + k * n_y + c)] = ds.y_at(col + k)[c];
                h[(col, 2 * ru + ry + k * n_y + c)] = ds.y_at(col + i + k)[c];
            }
        }
    }
    h /= (j as f64).sqrt();
    let l = h.qr().r().transpose();

    let wp = ru + ry;
    let l21 = l.view((ru, 0), (wp, ru)).clone_owned();
    let l22 = l.view((ru, ru), (wp, wp)).clone_owned();
    let l32 = l.view((ru + wp, ru), (ry, wp)).clone_owned();
    let (l22_pinv, _) = pinv(&l22, RANK_TOL);
    let mut past = DMatrix::zeros(wp, ru + wp);
    past.view_mut((0, 0), (wp, ru)).copy_from(&l21);
    past.view_mut((0, ru), (wp, wp)).copy_from(&l22);
    let projection = l32 * l22_pinv * past;

    let svd = projection.svd(true, false);
    let sv = &svd.singular_values;
    let s_max = sv.iter().copied().fold(0.0, f64::max);
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(Error::Identifiability("oblique projection is zero or non-finite".into()));
    }
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * s_max).count();
    if rank < n_x {
        return Err(Error::Order { requested: n_x, rank });
    }
    // nalgebra orders singular values decreasingly only after sorting
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let u_mat = svd.u.unwrap();
    let mut gamma = DMatrix::zeros(ry, n_x);
    for (k, &idx) in order.iter().take(n_x).enumerate() {
        gamma.set_column(k, &(u_mat.column(idx) * sv[idx].sqrt()));
    }

    let c = gamma.rows(0, n_y).clone_owned();
    let upper = gamma.rows(0, ry - n_y).clone_owned();
    let lower = gamma.rows(n_y, ry - n_y).clone_owned();
    let a = lstsq(&upper, &lower);

    let b = estimate_b(ds, &a, &c)?;
    let ss = LinearSS::new(a, b, c)?;
    let rho = ss.spectral_radius();
    if rho >= 1.0 {
        warn!("estimated linear model is unstable (spectral radius {rho:.4})");
    }
    Ok(ss)
}

/// Least-squares fit of `B` and an initial state given `A`, `C` and `D = 0`.
fn estimate_b(ds: &Dataset, a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n_u, n_y, n) = (ds.n_u(), ds.n_y(), ds.len());
    let n_x = a.nrows();
    let n_par = n_x + n_x * n_u;
    let mut phi = DMatrix::<f64>::zeros(n * n_y, n_par);

    // initial-state columns: C A^t e_m
    let mut ca = c.clone();
    for t in 0..n {
        for r in 0..n_y {
            for m in 0..n_x {
                phi[(t * n_y + r, m)] = ca[(r, m)];
            }
        }
        ca = &ca * a;
    }
    // input columns: response to B = E_{row,col}
    for row in 0..n_x {
        for col in 0..n_u {
            let p = n_x + row * n_u + col;
            let mut x = DVector::<f64>::zeros(n_x);
            for t in 0..n {
                let y = c * &x;
                for r in 0..n_y {
                    phi[(t * n_y + r, p)] = y[r];
                }
                x = a * x;
                x[row] += ds.u_at(t)[col];
            }
        }
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Identifiability(
            "input-matrix regression overflowed (strongly unstable A estimate)".into(),
        ));
    }
    let target = DMatrix::from_column_slice(n * n_y, 1, ds.y());
    let theta = lstsq(&phi, &target);
    Ok(DMatrix::from_fn(n_x, n_u, |r, col| theta[(n_x + r * n_u + col, 0)]))
}

/// Time-inverted output and input maps over a past window of `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconMaps {
    /// `(n n_y) x n_x`; block row `i` is `C A^-(n-i)`, i.e. the row for
    /// `y[t-n+i]`.
    pub ca_map: DMatrix<f64>,
    /// `(n n_y) x (n n_u)` in the anti-triangular layout: block `(i, j)` is
    /// `C A^-(n-i-j) B` when `i + j < n`, else zero. Block column `j`
    /// multiplies `u[t-1-j]` (newest input first).
    pub cab_map: DMatrix<f64>,
    /// Left pseudo-inverse of `ca_map`.
    pub ca_pinv: DMatrix<f64>,
    pub n: usize,
    n_u: usize,
    n_y: usize,
}

pub fn build_recon_maps(ss: &LinearSS, n: usize) -> Result<ReconMaps> {
    let (n_x, n_u, n_y) = (ss.n_x, ss.n_u(), ss.n_y());
    if n == 0 {
        return Err(Error::Config("past window length must be at least 1".into()));
    }
    let sv = ss.a.singular_values();
    let s_max = sv.iter().copied().fold(0.0, f64::max);
    let s_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !(cond < MAX_CONDITION) {
        return Err(Error::NotInvertible(cond));
    }

    // powers[m - 1] = C A^-m, computed by repeated solves with A^T
    let lu_t = ss.a.transpose().lu();
    let mut powers: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut cur = ss.c.transpose();
    for _ in 0..n {
        cur = lu_t.solve(&cur).ok_or(Error::NotInvertible(cond))?;
        powers.push(cur.transpose());
    }

    let mut ca_map = DMatrix::zeros(n * n_y, n_x);
    for i in 0..n {
        ca_map.view_mut((i * n_y, 0), (n_y, n_x)).copy_from(&powers[n - i - 1]);
    }
    let mut cab_map = DMatrix::zeros(n * n_y, n * n_u);
    for i in 0..n {
        for j in 0..n - i {
            let blk = &powers[n - i - j - 1] * &ss.b;
            cab_map.view_mut((i * n_y, j * n_u), (n_y, n_u)).copy_from(&blk);
        }
    }

    let (ca_pinv, rank) = pinv(&ca_map, RANK_TOL);
    if rank < n_x {
        return Err(Error::NotObservable { rank, n_x });
    }
    Ok(ReconMaps {
        ca_map,
        cab_map,
        ca_pinv,
        n,
        n_u,
        n_y,
    })
}

impl ReconMaps {
    /// `cab_map` with its block columns reordered oldest input first, so it
    /// acts on `[u[t-n]; ...; u[t-1]]` like the encoder windows do.
    pub fn cab_map_chronological(&self) -> DMatrix<f64> {
        let (n, n_u) = (self.n, self.n_u);
        let mut out = DMatrix::zeros(self.cab_map.nrows(), self.cab_map.ncols());
        for j in 0..n {
            let src = self.cab_map.columns(j * n_u, n_u);
            out.columns_mut((n - 1 - j) * n_u, n_u).copy_from(&src);
        }
        out
    }

    /// Linear encoder gain on the stacked past inputs.
    pub fn input_gain(&self) -> DMatrix<f64> {
        &self.ca_pinv * self.cab_map_chronological()
    }

    /// Linear encoder gain on the stacked past outputs.
    pub fn output_gain(&self) -> DMatrix<f64> {
        self.ca_pinv.clone()
    }

    /// State at time `t` from `y_past = [y[t-n]; ...; y[t-1]]` and
    /// `u_past = [u[t-n]; ...; u[t-1]]`.
    pub fn reconstruct_state(&self, y_past: &[f64], u_past: &[f64]) -> Result<Vec<f64>> {
        if y_past.len() != self.n * self.n_y {
            return Err(Error::Dimension {
                context: "past output window",
                expected: self.n * self.n_y,
                got: y_past.len(),
            });
        }
        if u_past.len() != self.n * self.n_u {
            return Err(Error::Dimension {
                context: "past input window",
                expected: self.n * self.n_u,
                got: u_past.len(),
            });
        }
        let y = DVector::from_column_slice(y_past);
        let u = DVector::from_column_slice(u_past);
        let x = &self.ca_pinv * (y + self.cab_map_chronological() * u);
        Ok(x.iter().copied().collect())
    }
}
