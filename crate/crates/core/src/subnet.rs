//! Subspace-encoder state-space model: linear bypass plus neural state,
//! output and encoder functions, trained with a multiple-shooting loss over
//! short simulated sections.
//!
//! Model equations (no feed-through):
//!
//! ```text
//! x[k+1] = A x[k] + B u[k] + f([x[k]; u[k]])
//! y[k]   = C x[k] + h(x[k])
//! x[t|t] = W_u u[t-nb..t-1] + W_y y[t-na..t-1] + psi([y[t-na..t-1]; u[t-nb..t-1]])
//! ```
//!
//! Flattened parameter order: `A, B, C, W_u, W_y` (row-major), then the
//! layers of `f`, `h` and `psi` as documented in [`crate::nnet`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::linear_id::{LinearSS, ReconMaps};
use crate::matrix::{gemm, Mat};
use crate::nnet::{adam_step, AdamState, Gradient, Mlp, MlpCache};

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Everything random.
    #[serde(rename = "RanDY+RanENC")]
    RanDyRanEnc,
    /// Linear bypass from the BLA, random encoder.
    #[serde(rename = "LinDY+RanENC")]
    LinDyRanEnc,
    /// Linear bypass and encoder from the BLA.
    #[serde(rename = "LinDY+LinENC")]
    LinDyLinEnc,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::RanDyRanEnc, Scheme::LinDyRanEnc, Scheme::LinDyLinEnc];

    /// File-name friendly tag.
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::RanDyRanEnc => "randy-ranenc",
            Scheme::LinDyRanEnc => "lindy-ranenc",
            Scheme::LinDyLinEnc => "lindy-linenc",
        }
    }

    pub fn needs_bla(self) -> bool {
        self != Scheme::RanDyRanEnc
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::RanDyRanEnc => "RanDY+RanENC",
            Scheme::LinDyRanEnc => "LinDY+RanENC",
            Scheme::LinDyLinEnc => "LinDY+LinENC",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "randyranenc" => Ok(Scheme::RanDyRanEnc),
            "lindyranenc" => Ok(Scheme::LinDyRanEnc),
            "lindylinenc" => Ok(Scheme::LinDyLinEnc),
            _ => Err(Error::Config(format!("unknown initialization scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetDims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl SubnetDims {
    /// Length of the encoder window, `max(n_a, n_b)`.
    pub fn lag(&self) -> usize {
        self.n_a.max(self.n_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetModel {
    pub dims: SubnetDims,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub w_u: Mat,
    pub w_y: Mat,
    pub f_net: Mlp,
    pub h_net: Mlp,
    pub psi_net: Mlp,
    /// Scaling of the data the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<Normalizer>,
}

fn uniform_mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let bound = 1.0 / (cols as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

/// Randomly initialized model: every weight uniform in
/// `[-1/sqrt(n_in), 1/sqrt(n_in)]`, every bias zero.
pub fn subnet_new(dims: SubnetDims, hidden: &[usize], seed: u64) -> SubnetModel {
    let SubnetDims { n_x, n_u, n_y, n_a, n_b } = dims;
    assert!(n_x >= 1 && n_u >= 1 && n_y >= 1 && n_a >= 1 && n_b >= 1, "dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform_mat(n_x, n_x, &mut rng);
    let b = uniform_mat(n_x, n_u, &mut rng);
    let c = uniform_mat(n_y, n_x, &mut rng);
    let w_u = uniform_mat(n_x, n_b * n_u, &mut rng);
    let w_y = uniform_mat(n_x, n_a * n_y, &mut rng);
    let f_net = Mlp::init_with(n_x + n_u, hidden, n_x, &mut rng);
    let h_net = Mlp::init_with(n_x, hidden, n_y, &mut rng);
    let psi_net = Mlp::init_with(n_a * n_y + n_b * n_u, hidden, n_x, &mut rng);
    SubnetModel {
        dims,
        a,
        b,
        c,
        w_u,
        w_y,
        f_net,
        h_net,
        psi_net,
        normalizer: None,
    }
}

/// Returns a copy of `model` initialized according to `scheme`.
pub fn apply_init_scheme(
    model: &SubnetModel,
    scheme: Scheme,
    bla: Option<&LinearSS>,
    maps: Option<&ReconMaps>,
) -> Result<SubnetModel> {
    let mut out = model.clone();
    if scheme == Scheme::RanDyRanEnc {
        return Ok(out);
    }
    let d = model.dims;
    let bla = bla.ok_or_else(|| Error::Config(format!("scheme {scheme} requires a linear model")))?;
    if bla.n_x != d.n_x || bla.n_u() != d.n_u || bla.n_y() != d.n_y {
        return Err(Error::Config(format!(
            "linear model dimensions (n_x={}, n_u={}, n_y={}) do not match the network (n_x={}, n_u={}, n_y={})",
            bla.n_x,
            bla.n_u(),
            bla.n_y(),
            d.n_x,
            d.n_u,
            d.n_y
        )));
    }
    out.a = Mat::from_dmatrix(&bla.a);
    out.b = Mat::from_dmatrix(&bla.b);
    out.c = Mat::from_dmatrix(&bla.c);
    out.f_net.zero_last_layer();
    out.h_net.zero_last_layer();

    if scheme == Scheme::LinDyLinEnc {
        let maps = maps.ok_or_else(|| Error::Config(format!("scheme {scheme} requires reconstructability maps")))?;
        if d.n_a != d.n_b || d.n_a != maps.n {
            return Err(Error::LagMismatch {
                n_a: d.n_a,
                n_b: d.n_b,
                n: maps.n,
            });
        }
        out.w_u = Mat::from_dmatrix(&maps.input_gain());
        out.w_y = Mat::from_dmatrix(&maps.output_gain());
        out.psi_net.zero_last_layer();
    }
    Ok(out)
}

/// Activations recorded by a batched unroll for the reverse pass.
#[derive(Default)]
struct Tape {
    /// Step-major states, `T x S x n_x`.
    xs: Vec<f64>,
    /// Step-major state-network inputs `[x; u]`.
    zs: Vec<f64>,
    f: Vec<MlpCache>,
    h: Vec<MlpCache>,
}

/// Reusable scratch for batched evaluation.
#[derive(Default)]
struct Workspace {
    enc_in: Vec<f64>,
    psi_cache: MlpCache,
    u_steps: Vec<f64>,
    y_steps: Vec<f64>,
    tape: Tape,
}

impl SubnetModel {
    pub fn num_params(&self) -> usize {
        self.a.data.len()
            + self.b.data.len()
            + self.c.data.len()
            + self.w_u.data.len()
            + self.w_y.data.len()
            + self.f_net.num_params()
            + self.h_net.num_params()
            + self.psi_net.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in [&self.a, &self.b, &self.c, &self.w_u, &self.w_y] {
            out.extend_from_slice(&m.data);
        }
        self.f_net.append_params(&mut out);
        self.h_net.append_params(&mut out);
        self.psi_net.append_params(&mut out);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "model parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut pos = 0;
        for m in [&mut self.a, &mut self.b, &mut self.c, &mut self.w_u, &mut self.w_y] {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        pos += self.f_net.load_params(&flat[pos..]);
        pos += self.h_net.load_params(&flat[pos..]);
        self.psi_net.load_params(&flat[pos..]);
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows, m.cols);
        Self {
            dims: self.dims,
            a: z(&self.a),
            b: z(&self.b),
            c: z(&self.c),
            w_u: z(&self.w_u),
            w_y: z(&self.w_y),
            f_net: self.f_net.zeros_like(),
            h_net: self.h_net.zeros_like(),
            psi_net: self.psi_net.zeros_like(),
            normalizer: None,
        }
    }

    /// Checks the shape and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let SubnetDims { n_x, n_u, n_y, n_a, n_b } = self.dims;
        let shapes = [
            ("A", &self.a, n_x, n_x),
            ("B", &self.b, n_x, n_u),
            ("C", &self.c, n_y, n_x),
            ("W_u", &self.w_u, n_x, n_b * n_u),
            ("W_y", &self.w_y, n_x, n_a * n_y),
        ];
        for (name, m, r, c) in shapes {
            if m.rows != r || m.cols != c || m.data.len() != r * c {
                return Err(Error::Config(format!("{name} must be {r}x{c}, found {}x{}", m.rows, m.cols)));
            }
        }
        let nets = [
            ("f", &self.f_net, n_x + n_u, n_x),
            ("h", &self.h_net, n_x, n_y),
            ("psi", &self.psi_net, n_a * n_y + n_b * n_u, n_x),
        ];
        for (name, net, i, o) in nets {
            net.validate()?;
            if net.in_dim() != i || net.out_dim() != o {
                return Err(Error::Config(format!(
                    "network {name} must map {i} -> {o}, found {} -> {}",
                    net.in_dim(),
                    net.out_dim()
                )));
            }
        }
        if !self.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }

    /// Initial state from `u_past = [u[t-nb]; ...; u[t-1]]` and
    /// `y_past = [y[t-na]; ...; y[t-1]]`.
    pub fn encode(&self, u_past: &[f64], y_past: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims;
        if u_past.len() != d.n_b * d.n_u {
            return Err(Error::Dimension {
                context: "encoder input window",
                expected: d.n_b * d.n_u,
                got: u_past.len(),
            });
        }
        if y_past.len() != d.n_a * d.n_y {
            return Err(Error::Dimension {
                context: "encoder output window",
                expected: d.n_a * d.n_y,
                got: y_past.len(),
            });
        }
        let mut enc_in = Vec::with_capacity(y_past.len() + u_past.len());
        enc_in.extend_from_slice(y_past);
        enc_in.extend_from_slice(u_past);
        let mut x0 = vec![0.0; d.n_x];
        let mut cache = MlpCache::default();
        self.encode_batch(&enc_in, 1, &mut cache, &mut x0);
        Ok(x0)
    }

    /// `x0 = W_y Y + W_u U + psi([Y, U])` for `s` rows of `[Y, U]`.
    fn encode_batch(&self, enc_in: &[f64], s: usize, cache: &mut MlpCache, x0: &mut [f64]) {
        let d = self.dims;
        let w = d.n_a * d.n_y + d.n_b * d.n_u;
        let ny = d.n_a * d.n_y;
        self.psi_net.forward_batch(enc_in, s, cache, x0);
        gemm(s, ny, d.n_x, 1.0, enc_in, w, false, &self.w_y.data, ny, true, 1.0, x0, d.n_x);
        gemm(s, d.n_b * d.n_u, d.n_x, 1.0, &enc_in[ny..], w, false, &self.w_u.data, d.n_b * d.n_u, true, 1.0, x0, d.n_x);
    }

    /// Simulates `s` sections in lockstep from `x0` (`S x n_x`) over
    /// `u_steps` (step-major, `T x S x n_u`), returning step-major outputs.
    fn unroll(&self, x0: &[f64], s: usize, u_steps: &[f64], t_len: usize, mut tape: Option<&mut Tape>) -> Result<Vec<f64>> {
        let SubnetDims { n_x, n_u, n_y, .. } = self.dims;
        let nz = n_x + n_u;
        let mut y_hat = vec![0.0; t_len * s * n_y];
        let mut x = x0.to_vec();
        let mut x_next = vec![0.0; s * n_x];
        let mut z = vec![0.0; s * nz];
        let mut local_f = MlpCache::default();
        let mut local_h = MlpCache::default();
        if let Some(tp) = tape.as_deref_mut() {
            tp.xs.resize(t_len * s * n_x, 0.0);
            tp.zs.resize(t_len * s * nz, 0.0);
            tp.f.resize_with(t_len, MlpCache::default);
            tp.h.resize_with(t_len, MlpCache::default);
        }

        for k in 0..t_len {
            let u_k = &u_steps[k * s * n_u..(k + 1) * s * n_u];
            let y_k = &mut y_hat[k * s * n_y..(k + 1) * s * n_y];
            let (f_cache, h_cache) = match tape.as_deref_mut() {
                Some(tp) => {
                    tp.xs[k * s * n_x..(k + 1) * s * n_x].copy_from_slice(&x);
                    (&mut tp.f[k], &mut tp.h[k])
                }
                None => (&mut local_f, &mut local_h),
            };

            self.h_net.forward_batch(&x, s, h_cache, y_k);
            gemm(s, n_x, n_y, 1.0, &x, n_x, false, &self.c.data, n_x, true, 1.0, y_k, n_y);
            if y_k.iter().any(|v| !v.is_finite()) {
                return Err(Error::RolloutDivergence { step: k });
            }
            if k + 1 == t_len {
                break;
            }

            for ((zr, xr), ur) in z.chunks_mut(nz).zip(x.chunks(n_x)).zip(u_k.chunks(n_u)) {
                zr[..n_x].copy_from_slice(xr);
                zr[n_x..].copy_from_slice(ur);
            }
            self.f_net.forward_batch(&z, s, f_cache, &mut x_next);
            gemm(s, n_x, n_x, 1.0, &x, n_x, false, &self.a.data, n_x, true, 1.0, &mut x_next, n_x);
            gemm(s, n_u, n_x, 1.0, u_k, n_u, false, &self.b.data, n_u, true, 1.0, &mut x_next, n_x);
            if x_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::RolloutDivergence { step: k + 1 });
            }
            if let Some(tp) = tape.as_deref_mut() {
                tp.zs[k * s * nz..(k + 1) * s * nz].copy_from_slice(&z);
            }
            std::mem::swap(&mut x, &mut x_next);
        }
        Ok(y_hat)
    }

    /// Free-run simulation from `x0`; returns `T` outputs (`n_y` each).
    pub fn rollout(&self, x0: &[f64], u_seg: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims;
        if x0.len() != d.n_x {
            return Err(Error::Dimension {
                context: "rollout initial state",
                expected: d.n_x,
                got: x0.len(),
            });
        }
        if u_seg.len() % d.n_u != 0 {
            return Err(Error::Dimension {
                context: "rollout input length",
                expected: u_seg.len() / d.n_u * d.n_u,
                got: u_seg.len(),
            });
        }
        let t_len = u_seg.len() / d.n_u;
        self.unroll(x0, 1, u_seg, t_len, None)
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.n_u() != self.dims.n_u {
            return Err(Error::Dimension {
                context: "dataset inputs",
                expected: self.dims.n_u,
                got: ds.n_u(),
            });
        }
        if ds.n_y() != self.dims.n_y {
            return Err(Error::Dimension {
                context: "dataset outputs",
                expected: self.dims.n_y,
                got: ds.n_y(),
            });
        }
        Ok(())
    }

    /// Encoder initial state at sample `n = max(n_a, n_b)` followed by a
    /// free run to the end of `ds`. Returns outputs for samples `n..N`
    /// (normalized units, same as `ds`).
    pub fn simulate(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(ds)?;
        let d = self.dims;
        let n = d.lag();
        if ds.len() <= n {
            return Err(Error::InvalidDataset(format!(
                "simulation needs more than {n} samples, got {}",
                ds.len()
            )));
        }
        let mut enc_in = Vec::new();
        push_window(ds, n, d, &mut enc_in);
        let mut x0 = vec![0.0; d.n_x];
        self.encode_batch(&enc_in, 1, &mut MlpCache::default(), &mut x0);
        self.unroll(&x0, 1, &ds.u()[n * d.n_u..], ds.len() - n, None)
    }

    /// Sum of squared output errors over the sections starting at `starts`
    /// (each simulated for `t_len` steps). With `grad`, adds the gradient of
    /// `scale * sse` into it.
    fn sections_sse(
        &self,
        ds: &Dataset,
        starts: &[usize],
        t_len: usize,
        ws: &mut Workspace,
        grad: Option<(&mut SubnetModel, f64)>,
    ) -> Result<f64> {
        let d = self.dims;
        let SubnetDims { n_x, n_u, n_y, .. } = d;
        let s = starts.len();
        let enc_w = d.n_a * n_y + d.n_b * n_u;

        ws.enc_in.clear();
        for &t in starts {
            push_window(ds, t, d, &mut ws.enc_in);
        }
        ws.u_steps.resize(t_len * s * n_u, 0.0);
        ws.y_steps.resize(t_len * s * n_y, 0.0);
        for k in 0..t_len {
            for (j, &t) in starts.iter().enumerate() {
                let off = (k * s + j) * n_u;
                ws.u_steps[off..off + n_u].copy_from_slice(ds.u_at(t + k));
                let off = (k * s + j) * n_y;
                ws.y_steps[off..off + n_y].copy_from_slice(ds.y_at(t + k));
            }
        }

        let mut x0 = vec![0.0; s * n_x];
        self.encode_batch(&ws.enc_in, s, &mut ws.psi_cache, &mut x0);
        let want_grad = grad.is_some();
        let y_hat = self.unroll(&x0, s, &ws.u_steps, t_len, want_grad.then_some(&mut ws.tape))?;

        let mut sse = 0.0;
        let mut err = y_hat;
        for (e, y) in err.iter_mut().zip(&ws.y_steps) {
            *e -= y;
            sse += *e * *e;
        }

        let Some((g, scale)) = grad else {
            return Ok(sse);
        };
        let tape = &ws.tape;
        let nz = n_x + n_u;
        let mut g_x = vec![0.0; s * n_x];
        let mut g_z = vec![0.0; s * nz];
        let mut g_prev = vec![0.0; s * n_x];
        for k in (0..t_len).rev() {
            let x_k = &tape.xs[k * s * n_x..(k + 1) * s * n_x];
            let d_y: Vec<f64> = err[k * s * n_y..(k + 1) * s * n_y].iter().map(|e| 2.0 * scale * e).collect();

            // output equation
            gemm(n_y, s, n_x, 1.0, &d_y, n_y, true, x_k, n_x, false, 1.0, &mut g.c.data, n_x);
            gemm(s, n_y, n_x, 1.0, &d_y, n_y, false, &self.c.data, n_x, false, 1.0, &mut g_x, n_x);
            self.h_net.backward_batch(x_k, &tape.h[k], &d_y, s, &mut g.h_net, Some(&mut g_x), true);

            if k == 0 {
                break;
            }
            // state equation from step k-1 to k
            let x_prev = &tape.xs[(k - 1) * s * n_x..k * s * n_x];
            let z_prev = &tape.zs[(k - 1) * s * nz..k * s * nz];
            let u_prev = &ws.u_steps[(k - 1) * s * n_u..k * s * n_u];
            gemm(n_x, s, n_x, 1.0, &g_x, n_x, true, x_prev, n_x, false, 1.0, &mut g.a.data, n_x);
            gemm(n_x, s, n_u, 1.0, &g_x, n_x, true, u_prev, n_u, false, 1.0, &mut g.b.data, n_u);
            self.f_net.backward_batch(z_prev, &tape.f[k - 1], &g_x, s, &mut g.f_net, Some(&mut g_z), false);
            gemm(s, n_x, n_x, 1.0, &g_x, n_x, false, &self.a.data, n_x, false, 0.0, &mut g_prev, n_x);
            for ((gp, gz), _) in g_prev.chunks_mut(n_x).zip(g_z.chunks(nz)).zip(0..s) {
                for (a, b) in gp.iter_mut().zip(&gz[..n_x]) {
                    *a += b;
                }
            }
            std::mem::swap(&mut g_x, &mut g_prev);
        }

        // encoder
        let ny_w = d.n_a * n_y;
        let nu_w = d.n_b * n_u;
        gemm(n_x, s, ny_w, 1.0, &g_x, n_x, true, &ws.enc_in, enc_w, false, 1.0, &mut g.w_y.data, ny_w);
        gemm(n_x, s, nu_w, 1.0, &g_x, n_x, true, &ws.enc_in[ny_w..], enc_w, false, 1.0, &mut g.w_u.data, nu_w);
        self.psi_net.backward_batch(&ws.enc_in, &ws.psi_cache, &g_x, s, &mut g.psi_net, None, false);
        Ok(sse)
    }

    fn check_starts(&self, ds: &Dataset, starts: &[usize], t_len: usize) -> Result<()> {
        self.check_dataset(ds)?;
        if t_len == 0 {
            return Err(Error::Config("rollout length T must be at least 1".into()));
        }
        let min = self.dims.lag();
        let max = ds.len().checked_sub(t_len).filter(|&m| m >= min).ok_or_else(|| {
            Error::InvalidDataset(format!(
                "{} samples cannot hold an encoder window of {min} and a rollout of {t_len}",
                ds.len()
            ))
        })?;
        if let Some(&bad) = starts.iter().find(|&&t| t < min || t > max) {
            return Err(Error::Index { start: bad, min, max });
        }
        Ok(())
    }
}

/// Appends `[y[t-na..t-1]; u[t-nb..t-1]]` (oldest first) to `out`.
fn push_window(ds: &Dataset, t: usize, d: SubnetDims, out: &mut Vec<f64>) {
    for i in t - d.n_a..t {
        out.extend_from_slice(ds.y_at(i));
    }
    for i in t - d.n_b..t {
        out.extend_from_slice(ds.u_at(i));
    }
}

/// All section starts admissible for rollout length `t_len`:
/// `lag..=N - t_len` (0-based; a section at `t` uses samples `t-lag..t+T`).
pub fn valid_starts(dims: SubnetDims, n_samples: usize, t_len: usize) -> Vec<usize> {
    let lag = dims.lag();
    match n_samples.checked_sub(t_len) {
        Some(max) if max >= lag => (lag..=max).collect(),
        _ => Vec::new(),
    }
}

const CHUNK: usize = 512;

/// Multiple-shooting loss `(1/(|starts| T)) sum_t sum_k ||y_hat[t+k|t] - y[t+k]||^2`.
pub fn batch_loss(model: &SubnetModel, ds: &Dataset, starts: &[usize], t_len: usize) -> Result<f64> {
    model.check_starts(ds, starts, t_len)?;
    if starts.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut ws = Workspace::default();
    let mut sse = 0.0;
    for chunk in starts.chunks(CHUNK) {
        sse += model.sections_sse(ds, chunk, t_len, &mut ws, None)?;
    }
    Ok(sse / (starts.len() * t_len) as f64)
}

/// [`batch_loss`] together with its exact gradient in flattened parameter
/// order.
pub fn batch_loss_and_grad(model: &SubnetModel, ds: &Dataset, starts: &[usize], t_len: usize) -> Result<(f64, Gradient)> {
    model.check_starts(ds, starts, t_len)?;
    if starts.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / (starts.len() * t_len) as f64;
    let mut grad = model.zeros_like();
    let mut ws = Workspace::default();
    let mut sse = 0.0;
    for chunk in starts.chunks(CHUNK) {
        sse += model.sections_sse(ds, chunk, t_len, &mut ws, Some((&mut grad, scale)))?;
    }
    let g = Gradient(grad.params());
    if !g.is_finite() {
        return Err(Error::NonFinite("loss gradient"));
    }
    Ok((sse * scale, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Rollout length `T`.
    pub t_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_len: 50,
            batch_size: 256,
            lr: 1e-3,
            epochs: 100,
            seed: 0,
            scheme: Scheme::LinDyLinEnc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_len == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("T, batch_size and epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based: epoch 1 is the state after the first pass over the data.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_nrms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "train_loss", "val_loss", "val_nrms", "is_best"])?;
        for r in &self.records {
            wtr.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_nrms.to_string(),
                u8::from(r.epoch == self.best_epoch).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Free-run simulation NRMS of `model` on a normalized dataset; infinite when
/// the simulation diverges.
pub fn validation_nrms(model: &SubnetModel, ds: &Dataset) -> Result<f64> {
    let n = model.dims.lag();
    match model.simulate(ds) {
        Ok(y_hat) => crate::eval::nrms(&y_hat, &ds.y()[n * ds.n_y()..], ds.n_y()),
        Err(Error::RolloutDivergence { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

const DIVERGENCE_LOSS: f64 = 1e12;

/// Mini-batch Adam training on the multiple-shooting loss. Every epoch
/// shuffles all valid section starts, takes one step per batch and scores
/// the validation set by free-run simulation; the snapshot with the lowest
/// validation loss (earliest on ties) is returned.
pub fn train(model: &SubnetModel, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<(SubnetModel, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    model.check_dataset(train_ds)?;
    model.check_dataset(val_ds)?;
    let mut starts = valid_starts(model.dims, train_ds.len(), cfg.t_len);
    if starts.is_empty() {
        return Err(Error::Config(format!(
            "training set of {} samples is too short for T = {} and lag {}",
            train_ds.len(),
            cfg.t_len,
            model.dims.lag()
        )));
    }
    if val_ds.len() <= model.dims.lag() {
        return Err(Error::Config("validation set is shorter than the encoder window".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut current = model.clone();
    let mut params = current.params();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = (current.clone(), 1, f64::INFINITY);

    for epoch in 1..=cfg.epochs {
        starts.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch_idx, batch) in starts.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_loss_and_grad(&current, train_ds, batch, cfg.t_len).map_err(|e| match e {
                Error::RolloutDivergence { .. } | Error::NonFinite(_) => Error::TrainingDivergence {
                    epoch,
                    batch: batch_idx,
                    loss: f64::INFINITY,
                },
                other => other,
            })?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::TrainingDivergence {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            weighted += loss * batch.len() as f64;
            adam_step(&mut params, &grad, &mut adam);
            current.set_params(&params)?;
        }
        let val_nrms = validation_nrms(&current, val_ds)?;
        let val_loss = val_nrms * val_nrms;
        if epoch == 1 || val_loss < best.2 {
            best = (current.clone(), epoch, val_loss);
        }
        log::debug!("epoch {epoch}: val_nrms {val_nrms:.5}");
        records.push(EpochRecord {
            epoch,
            train_loss: weighted / starts.len() as f64,
            val_loss,
            val_nrms,
        });
    }
    let (best_model, best_epoch, _) = best;
    Ok((best_model, TrainHistory { records, best_epoch }))
}
