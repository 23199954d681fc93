use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::simplex::{box_rule, kuhn_simplices};
use crate::quadrature::{adaptive_cells, tensor_gauss, CubatureOptions, IntegralResult};
use crate::torus::{cm_norm, Dispersion};
use crate::C64;

#[derive(Clone, Debug, PartialEq)]
pub struct TorusIntegralOptions {
    /// Absolute tolerance on the normalized integral.
    pub abs_tol: f64,
    pub gauss_order: usize,
    /// Initial cells per axis; defaults to max(4, 4·range(e)).
    pub initial_n: Option<usize>,
    pub max_splits: usize,
}

impl TorusIntegralOptions {
    pub fn new(abs_tol: f64) -> Self {
        TorusIntegralOptions { abs_tol, gauss_order: 4, initial_n: None, max_splits: 400_000 }
    }
}

/// ∫ χ(p)/(z − e(p)) dμ(p) over [−π,π)^d with dμ = dp/(2π)^d.
///
/// Cells whose center satisfies |z − e(c)| ≥ 2·diam·‖e‖_{C¹} see a smooth
/// integrand and get tensor Gauss–Legendre; cells near the level set
/// e = Re z use the exact affine-simplex rule, which stays bounded as Im z → 0.
pub fn singular_torus_integral<F>(chi: F, e: &Dispersion, z: C64, opts: &TorusIntegralOptions) -> Result<IntegralResult>
where
    F: Fn(&[f64]) -> C64,
{
    if z.im == 0.0 || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::precondition("singular_torus_integral needs finite z with Im z ≠ 0"));
    }
    let d = e.dim();
    if d > 5 {
        return Err(Error::precondition("simplex rule implemented for d ≤ 5"));
    }
    let c1 = cm_norm(e, 1);
    let simplices = kuhn_simplices(d);
    let q = opts.gauss_order;
    let integrand = |p: &[f64]| chi(p) / (z - e.value(p));
    let rule = |lo: &[f64], hi: &[f64]| -> C64 {
        let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let diam = lo.iter().zip(hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        if (z - e.value(&center)).norm() >= 2.0 * diam * c1 {
            return tensor_gauss(&integrand, lo, hi, q);
        }
        let n = 1usize << d;
        let mut eps = Vec::with_capacity(n);
        let mut chis = Vec::with_capacity(n);
        let mut p = vec![0.0; d];
        for corner in 0..n {
            for k in 0..d {
                p[k] = if corner >> k & 1 == 1 { hi[k] } else { lo[k] };
            }
            eps.push(e.value(&p));
            chis.push(chi(&p));
        }
        let volume: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        box_rule(z, volume, &eps, &chis, &simplices)
    };
    let vol = (2.0 * PI).powi(d as i32);
    let n0 = opts.initial_n.unwrap_or_else(|| (4 * e.range()).max(4));
    let copts = CubatureOptions {
        abs_tol: opts.abs_tol * vol,
        rel_tol: 0.0,
        order: q,
        initial_split: n0,
        max_splits: opts.max_splits,
    };
    let r = adaptive_cells(rule, &vec![-PI; d], &vec![PI; d], &copts);
    Ok(IntegralResult {
        value: r.value / vol,
        abs_error_estimate: r.abs_error_estimate / vol,
        subdivisions: r.subdivisions,
        converged: r.converged,
    })
}
