//! Lattice Green function of e_Lapl at energy 0 (d ≥ 3) by the heat kernel:
//! G(x) = ∫ e^{ipx}/e_Lapl(p) dμ = ∫_0^∞ Π_k e^{−2t} I_{|x_k|}(2t) dt.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_cubature, CubatureOptions, IntegralResult};
use crate::C64;

/// e^{−x} I_n(x) for x ≥ 0.
pub fn scaled_bessel_i(n: u32, x: f64) -> f64 {
    assert!(x >= 0.0 && x.is_finite(), "scaled_bessel_i needs finite x ≥ 0");
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if x > (80.0f64).max(nf * nf) {
        // Hankel expansion, truncated at the smallest term
        let mu = 4.0 * nf * nf;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            let j = (2 * k - 1) as f64;
            let next = -term * (mu - j * j) / (k as f64 * 8.0 * x);
            if next.abs() >= term.abs() || next == 0.0 {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return sum / (2.0 * PI * x).sqrt();
    }
    // power series in log space: all terms positive
    let lh = (0.5 * x).ln();
    let mut lt = nf * lh - (1..=n).map(|k| (k as f64).ln()).sum::<f64>() - x;
    let mut logs = vec![lt];
    let mut peak = lt;
    let mut k = 0.0f64;
    loop {
        k += 1.0;
        lt += 2.0 * lh - k.ln() - (k + nf).ln();
        logs.push(lt);
        peak = peak.max(lt);
        if k > 0.5 * x && lt < peak - 40.0 {
            break;
        }
    }
    peak.exp() * logs.iter().map(|l| (l - peak).exp()).sum::<f64>()
}

const S_MIN: f64 = -40.0;
const S_MAX: f64 = 40.0;
const STEP: f64 = 0.025;

/// Heat-kernel nodes: t = e^s on a uniform s grid, with the factor t·h.
struct HeatGrid {
    t: Vec<f64>,
    w: Vec<f64>,
}

impl HeatGrid {
    fn new() -> Self {
        let n = ((S_MAX - S_MIN) / STEP).round() as usize;
        let mut t = Vec::with_capacity(n + 1);
        let mut w = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let s = S_MIN + i as f64 * STEP;
            let ti = s.exp();
            t.push(ti);
            w.push(if i == 0 || i == n { 0.5 } else { 1.0 } * STEP * ti);
        }
        HeatGrid { t, w }
    }
}

/// G(x) for every x with |x_k| ≤ max_abs, computed once per symmetry class
/// (sorted absolute coordinates). Returns a lookup closure.
pub fn lapl_green_function(d: usize, max_abs: u32) -> Result<impl Fn(&[i32]) -> f64> {
    if d < 3 {
        return Err(Error::precondition("the zero-energy lattice Green function needs d ≥ 3"));
    }
    let grid = HeatGrid::new();
    let nb = max_abs as usize + 1;
    // table[n][i] = e^{−2t_i} I_n(2t_i)
    let table: Vec<Vec<f64>> =
        (0..nb).map(|n| grid.t.iter().map(|&t| scaled_bessel_i(n as u32, 2.0 * t)).collect()).collect();
    // beyond T = e^{S_MAX}: Π ≈ (4πt)^{−d/2}
    let big_t = S_MAX.exp();
    let half = d as f64 / 2.0;
    let tail = (4.0 * PI).powf(-half) * big_t.powf(1.0 - half) / (half - 1.0);

    let mut classes = std::collections::HashMap::new();
    let mut key = vec![0u32; d];
    enumerate_classes(d, max_abs, 0, 0, &mut key, &mut |k: &[u32]| {
        let mut acc = 0.0;
        for i in 0..grid.t.len() {
            let mut p = grid.w[i];
            for &n in k {
                p *= table[n as usize][i];
            }
            acc += p;
        }
        classes.insert(k.to_vec(), acc + tail);
    });
    Ok(move |x: &[i32]| -> f64 {
        let mut k: Vec<u32> = x.iter().map(|v| v.unsigned_abs()).collect();
        k.sort_unstable();
        *classes.get(&k).expect("site outside the tabulated range")
    })
}

fn enumerate_classes(d: usize, max: u32, pos: usize, from: u32, key: &mut Vec<u32>, f: &mut impl FnMut(&[u32])) {
    if pos == d {
        f(key);
        return;
    }
    for v in from..=max {
        key[pos] = v;
        enumerate_classes(d, max, pos + 1, v, key, f);
    }
}

/// G(0) = ∫ dμ/e_Lapl by direct cubature: the last axis is integrated in closed
/// form, ∫ dp/(2π) (A + 2 − 2cos p)⁻¹ = (A(A+4))^{−1/2}, and the remaining
/// (d−1)-cube [0,π]^{d−1} is split into pyramids around the singular corner.
/// In the pyramid where p_1 is largest, p = s(1, u), s ∈ [0,π], u ∈ [0,1]^{d−2},
/// and the Jacobian s^{d−2} cancels the 1/s singularity; all pyramids agree.
pub fn lapl_green_origin(d: usize, abs_tol: f64) -> Result<IntegralResult> {
    if d < 3 {
        return Err(Error::precondition("∫ dμ/e_Lapl diverges for d < 3"));
    }
    let k = d - 1;
    let opts = CubatureOptions { abs_tol: abs_tol * PI.powi(k as i32) / k as f64, order: 7, initial_split: 1, ..Default::default() };
    let lo = vec![0.0; k];
    let mut hi = vec![1.0; k];
    hi[0] = PI;
    let r = adaptive_cubature(
        |q| {
            let s = q[0];
            if s == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let mut a = 2.0 - 2.0 * s.cos();
            for &u in &q[1..] {
                a += 2.0 - 2.0 * (s * u).cos();
            }
            C64::new(s.powi(k as i32 - 1) / (a * (a + 4.0)).sqrt(), 0.0)
        },
        &lo,
        &hi,
        &opts,
    );
    let scale = PI.powi(k as i32) / k as f64;
    Ok(IntegralResult {
        value: r.value / scale,
        abs_error_estimate: r.abs_error_estimate / scale,
        subdivisions: r.subdivisions,
        converged: r.converged,
    })
}
