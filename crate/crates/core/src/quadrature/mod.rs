//! Adaptive quadrature: generic nested rules, the singular torus integral
//! ∫ χ/(z − e) dμ, the model integrals behind its bound, parameter scans and
//! box resolvent kernels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::C64;

pub mod green;
pub mod model;
pub mod resolvent;
pub mod scan;
pub mod simplex;
pub mod torus_integral;

pub use green::{lapl_green_function, lapl_green_origin, scaled_bessel_i};
pub use model::{
    c1_norm, model_integral_l1, model_integral_l2, model_integral_l3, FnModel, ModelDomain, ModelFunction,
    ModelOptions, SmoothBump,
};
pub use resolvent::{
    estimate_c_resolv, eta_guard, resolvent_column, resolvent_kernel, sqrt_potential, weighted_kernel_scan,
    CResolvReport, CResolvRow, KernelScanRow, ResolventOptions,
};
pub use scan::{c2_norm_on_torus, uniform_bound_scan, BoundScan, ScanKind, ScanOptions, ScanRow, ScanTarget};
pub use torus_integral::{singular_torus_integral, TorusIntegralOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralResult {
    #[serde(with = "complex_pair")]
    pub value: C64,
    pub abs_error_estimate: f64,
    pub subdivisions: usize,
    pub converged: bool,
}

pub(crate) mod complex_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::C64;

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Cached rules of the orders used in inner loops.
pub(crate) fn gl(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static RULES: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (1..=32).map(gauss_legendre).collect());
    &rules[n.clamp(1, 32) - 1]
}

/// Tensor Gauss–Legendre rule of order q per axis on a box.
pub fn tensor_gauss<F: Fn(&[f64]) -> C64>(f: &F, lo: &[f64], hi: &[f64], q: usize) -> C64 {
    let (x, w) = gl(q);
    let d = lo.len();
    let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let jac: f64 = half.iter().product();
    let total = q.pow(d as u32);
    let mut p = vec![0.0; d];
    let mut acc = C64::new(0.0, 0.0);
    for mut idx in 0..total {
        let mut wt = jac;
        for k in (0..d).rev() {
            let i = idx % q;
            idx /= q;
            p[k] = mid[k] + half[k] * x[i];
            wt *= w[i];
        }
        acc += f(&p) * wt;
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubatureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Gauss points per axis.
    pub order: usize,
    /// Cells split in each direction before adapting.
    pub initial_split: usize,
    /// Refinement budget (cells split).
    pub max_splits: usize,
}

impl Default for CubatureOptions {
    fn default() -> Self {
        CubatureOptions { abs_tol: 1e-10, rel_tol: 0.0, order: 6, initial_split: 2, max_splits: 200_000 }
    }
}

struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: C64,
    err: f64,
    children: Vec<C64>,
    serial: usize,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then_with(|| other.serial.cmp(&self.serial))
    }
}

fn split(lo: &[f64], hi: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let d = lo.len();
    (0..1usize << d)
        .map(|mask| {
            let mut a = lo.to_vec();
            let mut b = hi.to_vec();
            for k in 0..d {
                let m = 0.5 * (lo[k] + hi[k]);
                if mask >> k & 1 == 1 {
                    a[k] = m;
                } else {
                    b[k] = m;
                }
            }
            (a, b)
        })
        .collect()
}

/// Global adaptive dyadic refinement with an arbitrary cell rule. A cell's
/// value is the sum of its children's rules; its error estimate is the
/// difference to its own rule. The cell with the largest error is split first.
pub fn adaptive_cells<R>(rule: R, lo: &[f64], hi: &[f64], opts: &CubatureOptions) -> IntegralResult
where
    R: Fn(&[f64], &[f64]) -> C64,
{
    let d = lo.len();
    let mut serial = 0;
    let mut make = |a: Vec<f64>, b: Vec<f64>, own: Option<C64>| -> Cell {
        let own = own.unwrap_or_else(|| rule(&a, &b));
        let children: Vec<C64> = split(&a, &b).iter().map(|(x, y)| rule(x, y)).collect();
        let value: C64 = children.iter().sum();
        serial += 1;
        Cell { err: (value - own).norm(), lo: a, hi: b, value, children, serial }
    };
    let mut heap = BinaryHeap::new();
    let n0 = opts.initial_split.max(1);
    for idx in 0..n0.pow(d as u32) {
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut r = idx;
        for k in (0..d).rev() {
            let i = r % n0;
            r /= n0;
            let h = (hi[k] - lo[k]) / n0 as f64;
            a[k] = lo[k] + i as f64 * h;
            b[k] = if i + 1 == n0 { hi[k] } else { lo[k] + (i + 1) as f64 * h };
        }
        heap.push(make(a, b, None));
    }
    let mut splits = 0;
    loop {
        let (total, err) = heap.iter().fold((C64::new(0.0, 0.0), 0.0), |(s, e), c| (s + c.value, e + c.err));
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        // a non-finite estimate cannot improve by splitting
        if err <= target || splits >= opts.max_splits || !err.is_finite() {
            return IntegralResult { value: total, abs_error_estimate: err, subdivisions: splits, converged: err <= target };
        }
        // split a batch of the worst cells before re-summing
        let batch = (heap.len() / 8).max(1);
        for _ in 0..batch {
            let Some(cell) = heap.pop() else { break };
            if cell.err == 0.0 {
                heap.push(cell);
                break;
            }
            for ((a, b), own) in split(&cell.lo, &cell.hi).into_iter().zip(cell.children) {
                heap.push(make(a, b, Some(own)));
            }
            splits += 1;
        }
    }
}

/// Adaptive tensor Gauss–Legendre cubature on a box.
pub fn adaptive_cubature<F>(f: F, lo: &[f64], hi: &[f64], opts: &CubatureOptions) -> IntegralResult
where
    F: Fn(&[f64]) -> C64,
{
    let q = opts.order;
    adaptive_cells(|a, b| tensor_gauss(&f, a, b, q), lo, hi, opts)
}

/// Adaptive 1-D Gauss–Legendre (order 10, bisection error estimate) with
/// user breakpoints, for integrands with integrable endpoint singularities.
pub fn adaptive_1d<F>(f: F, a: f64, b: f64, breakpoints: &[f64], abs_tol: f64, max_splits: usize) -> IntegralResult
where
    F: Fn(f64) -> C64,
{
    let mut pts: Vec<f64> = vec![a];
    let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    pts.extend(inner);
    pts.push(b);
    let rule = |lo: &[f64], hi: &[f64]| -> C64 {
        let (x, w) = gl(10);
        let (m, h) = (0.5 * (lo[0] + hi[0]), 0.5 * (hi[0] - lo[0]));
        x.iter().zip(w).map(|(&t, &wt)| f(m + h * t) * (wt * h)).sum()
    };
    let mut value = C64::new(0.0, 0.0);
    let mut err = 0.0;
    let mut subdivisions = 0;
    let mut converged = true;
    let per = abs_tol / (pts.len() - 1) as f64;
    for w in pts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let opts = CubatureOptions { abs_tol: per, rel_tol: 0.0, order: 10, initial_split: 1, max_splits };
        let r = adaptive_cells(rule, &w[..1], &w[1..], &opts);
        value += r.value;
        err += r.abs_error_estimate;
        subdivisions += r.subdivisions;
        converged &= r.converged;
    }
    IntegralResult { value, abs_error_estimate: err, subdivisions, converged }
}
