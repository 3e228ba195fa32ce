//! Test-only oracles, independent of the library's computation paths.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subnet_id::data::Dataset;
use subnet_id::linear_id::LinearSS;
use subnet_id::subnet::SubnetModel;

/// Random stable system of order `n_x` whose eigenvalues have magnitude in
/// `[0.5, 0.9]`, in a random well-conditioned basis. Dense `B` and `C`.
pub fn random_stable_system(n_x: usize, n_u: usize, n_y: usize, seed: u64) -> LinearSS {
    random_system_with_poles(n_x, n_u, n_y, seed).0
}

/// As [`random_stable_system`], also returning the poles it was built from.
pub fn random_system_with_poles(n_x: usize, n_u: usize, n_y: usize, seed: u64) -> (LinearSS, Vec<(f64, f64)>) {
    let mut poles = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modal = DMatrix::<f64>::zeros(n_x, n_x);
    let mut i = 0;
    while i < n_x {
        let r: f64 = rng.gen_range(0.5..0.9);
        if i + 1 < n_x && rng.gen_bool(0.5) {
            let th: f64 = rng.gen_range(0.2..2.5);
            modal[(i, i)] = r * th.cos();
            modal[(i, i + 1)] = -r * th.sin();
            modal[(i + 1, i)] = r * th.sin();
            modal[(i + 1, i + 1)] = r * th.cos();
            poles.push((r * th.cos(), r * th.sin()));
            poles.push((r * th.cos(), -r * th.sin()));
            i += 2;
        } else {
            modal[(i, i)] = if rng.gen_bool(0.5) { r } else { -r };
            poles.push((modal[(i, i)], 0.0));
            i += 1;
        }
    }
    let t = DMatrix::<f64>::identity(n_x, n_x) + DMatrix::from_fn(n_x, n_x, |_, _| rng.gen_range(-0.3..0.3));
    let t_inv = t.clone().try_inverse().unwrap();
    let a = &t * modal * t_inv;
    let b = DMatrix::from_fn(n_x, n_u, |_, _| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    let c = DMatrix::from_fn(n_y, n_x, |_, _| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    (LinearSS::new(a, b, c).unwrap(), poles)
}

/// Plain state recursion returning states `x[0..=len]` and outputs.
pub fn trajectory(ss: &LinearSS, u: &[f64], x0: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_u = ss.n_u();
    let mut x = nalgebra::DVector::from_column_slice(x0);
    let mut states = vec![x.iter().copied().collect::<Vec<_>>()];
    let mut y = Vec::new();
    for ut in u.chunks(n_u) {
        y.extend((&ss.c * &x).iter());
        x = &ss.a * &x + &ss.b * nalgebra::DVector::from_column_slice(ut);
        states.push(x.iter().copied().collect());
    }
    (states, y)
}

/// Markov parameter `C A^k B` by explicit powers.
pub fn markov(ss: &LinearSS, k: usize) -> DMatrix<f64> {
    let mut p = DMatrix::<f64>::identity(ss.n_x, ss.n_x);
    for _ in 0..k {
        p = &ss.a * p;
    }
    &ss.c * p * &ss.b
}

/// Sorted eigenvalues as (re, im) pairs.
pub fn sorted_eigs(ss: &LinearSS) -> Vec<(f64, f64)> {
    let mut e: Vec<(f64, f64)> = ss.eigenvalues().iter().map(|l| (l.re, l.im)).collect();
    e.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    e
}

pub fn tanh_mlp(net: &subnet_id::nnet::Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in &net.hidden {
        h = (0..layer.weight.rows)
            .map(|r| {
                let z: f64 = (0..layer.weight.cols).map(|c| layer.weight.get(r, c) * h[c]).sum::<f64>() + layer.bias[r];
                z.tanh()
            })
            .collect();
    }
    (0..net.last.weight.rows)
        .map(|r| (0..net.last.weight.cols).map(|c| net.last.weight.get(r, c) * h[c]).sum::<f64>() + net.last.bias[r])
        .collect()
}

/// Direct evaluation of `V = 1/M sum_{t} sum_{k<T} ||y_hat[t+k|t] - y[t+k]||^2`
/// over all valid starts, one scalar loop per section.
pub fn brute_force_loss(m: &SubnetModel, ds: &Dataset, t_len: usize) -> f64 {
    let d = m.dims;
    let n = d.n_a.max(d.n_b);
    let big_n = ds.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for t in n..=big_n - t_len {
        let mut y_past = Vec::new();
        for i in t - d.n_a..t {
            y_past.extend_from_slice(ds.y_at(i));
        }
        let mut u_past = Vec::new();
        for i in t - d.n_b..t {
            u_past.extend_from_slice(ds.u_at(i));
        }
        let mut enc_in = y_past.clone();
        enc_in.extend_from_slice(&u_past);
        let psi = tanh_mlp(&m.psi_net, &enc_in);
        let wy = m.w_y.matvec(&y_past);
        let wu = m.w_u.matvec(&u_past);
        let mut x: Vec<f64> = (0..d.n_x).map(|i| wy[i] + wu[i] + psi[i]).collect();
        for k in 0..t_len {
            let cx = m.c.matvec(&x);
            let hx = tanh_mlp(&m.h_net, &x);
            for (j, y) in ds.y_at(t + k).iter().enumerate() {
                total += (cx[j] + hx[j] - y).powi(2);
            }
            let u = ds.u_at(t + k);
            let mut z = x.clone();
            z.extend_from_slice(u);
            let f = tanh_mlp(&m.f_net, &z);
            let ax = m.a.matvec(&x);
            let bu = m.b.matvec(u);
            x = (0..d.n_x).map(|i| ax[i] + bu[i] + f[i]).collect();
        }
        count += 1;
    }
    total / (count * t_len) as f64
}

pub fn random_dataset(n: usize, n_u: usize, n_y: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..n * n_u).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = (0..n * n_y).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Dataset::new(u, y, n_u, n_y).unwrap()
}

/// Central finite difference of `f` at `params` along coordinate `i`.
pub fn central_difference(params: &[f64], i: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    p[i] = params[i] + h;
    let up = f(&p);
    p[i] = params[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}
