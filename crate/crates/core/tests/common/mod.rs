// Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ergolip_core::lipschitz::{random_lipschitz_fn, LipschitzFn};
use ergolip_core::matrix::Matrix;
use ergolip_core::processes::MarkovProcess;
use ergolip_core::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn stay09() -> MarkovProcess {
    MarkovProcess::two_state(0.9, 0.9).unwrap()
}

pub fn fair_coin() -> MarkovProcess {
    MarkovProcess::iid(&[0.5, 0.5], vec![vec![0.0], vec![1.0]]).unwrap()
}

/// Strictly positive random kernel for `states` states and order `order`.
pub fn random_kernel_chain(seed: u64, states: usize, order: usize) -> MarkovProcess {
    let mut r = rng::seeded(seed);
    let contexts = states.pow(order as u32);
    let rows: Vec<Vec<f64>> = (0..contexts)
        .map(|_| {
            let raw: Vec<f64> = (0..states).map(|_| 0.05 + r.gen::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let embedding = (0..states).map(|i| vec![i as f64 / (states - 1).max(1) as f64]).collect();
    MarkovProcess::builder(Matrix::from_rows(&rows), embedding, order).build().unwrap()
}

/// Context-chain transition matrix built from the kernel alone.
pub fn context_chain(p: &MarkovProcess) -> DMatrix<f64> {
    let (k, d) = (p.states(), p.order());
    let n = k.pow(d as u32);
    let mut m = DMatrix::zeros(n, n);
    for c in 0..n {
        for s in 0..k {
            m[(c, (c * k + s) % n)] += p.kernel()[(c, s)];
        }
    }
    m
}

/// Stationary law from an SVD null vector of `Pᵀ − I`.
pub fn reference_stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let a = p.transpose() - DMatrix::identity(n, n);
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let (idx, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let v: DVector<f64> = vt.row(idx).transpose();
    let s = v.sum();
    v / s
}

/// `β_m` by explicit repeated multiplication.
pub fn brute_force_betas(p: &MarkovProcess, max_m: usize) -> Vec<f64> {
    let pm = context_chain(p);
    let pi = reference_stationary(&pm);
    let n = pm.nrows();
    let mut power = DMatrix::identity(n, n);
    let mut out = Vec::with_capacity(max_m);
    for _ in 0..max_m {
        power = &power * &pm;
        let beta: f64 = (0..n).map(|c| pi[c] * 0.5 * (0..n).map(|j| (power[(c, j)] - pi[j]).abs()).sum::<f64>()).sum();
        out.push(beta);
    }
    out
}

pub fn witness_family(seed: u64, count: usize, dim: usize, budget: f64) -> Vec<LipschitzFn> {
    let mut r = rng::seeded(seed);
    (0..count).map(|_| random_lipschitz_fn(&mut r, dim, 12, budget).unwrap()).collect()
}

pub fn svd_norm(m: &Matrix) -> f64 {
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    d.singular_values().max()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub struct GridRow {
    pub horizon: f64,
    pub epsilon: f64,
    pub budget: f64,
    pub m: usize,
    pub c1: f64,
    pub c2: f64,
    pub d_value: f64,
    pub tail: f64,
}

/// Frozen 50-digit evaluations from `fixtures/bound_grid.py`.
pub fn bound_grid() -> Vec<GridRow> {
    include_str!("../fixtures/bound_grid.csv")
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| f[i].parse::<f64>().unwrap();
            GridRow {
                horizon: num(0),
                epsilon: num(1),
                budget: num(2),
                m: f[3].parse().unwrap(),
                c1: num(4),
                c2: num(5),
                d_value: num(6),
                tail: num(7),
            }
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
