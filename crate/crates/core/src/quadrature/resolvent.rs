//! Box resolvents (z − H)⁻¹ for the limiting-absorption checks.
//!
//! H is real symmetric, so (z − H)u = b is solved through the real positive
//! definite normal operator (z̄ − H)(z − H) = (H − a)² + b², a + ib = z,
//! followed by u = (z̄ − H)w. The normal residual is the original residual.

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::phi_finite;
use crate::lattice::{euclidean_norm, g_vector, hamiltonian_sparse, BoxLattice, Potential, Site};
use crate::linalg::{conjugate_gradient, hermitian_eigenvalues, norm, Csr};
use crate::torus::{cm_norm, Dispersion};
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolventOptions {
    /// η(ℓ) = kappa·e_max/ℓ.
    pub kappa: f64,
    /// Accept |Im z| below η(ℓ).
    pub override_guard: bool,
    pub residual_tol: f64,
    pub max_iter: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions { kappa: 8.0, override_guard: false, residual_tol: 1e-10, max_iter: 50_000 }
    }
}

/// Smallest |Im z| for which box resolvents are read as infinite-volume ones.
/// e_max is taken as sup|e|, which is e_max for nonnegative dispersions.
pub fn eta_guard(e: &Dispersion, b: &BoxLattice, kappa: f64) -> f64 {
    kappa * cm_norm(e, 0) / b.half_width as f64
}

fn check_z(e: &Dispersion, b: &BoxLattice, z: C64, opts: &ResolventOptions) -> Result<()> {
    if z.im == 0.0 || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::precondition("resolvent needs finite z with Im z ≠ 0"));
    }
    let eta = eta_guard(e, b, opts.kappa);
    if !opts.override_guard && z.im.abs() < eta {
        return Err(Error::precondition(format!(
            "|Im z| = {} is below the finite-volume guard η(ℓ) = {eta} (ℓ = {})",
            z.im.abs(),
            b.half_width
        )));
    }
    Ok(())
}

fn apply_real(h: &Csr<f64>, x: &[C64], y: &mut [C64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = h.row(i).fold(C64::new(0.0, 0.0), |s, (j, v)| s + x[j] * v);
    }
}

/// Solver for (z − H)u = rhs on one box and one z.
pub(crate) struct BoxResolvent {
    h: Csr<f64>,
    z: C64,
    tol: f64,
    max_iter: usize,
}

impl BoxResolvent {
    pub(crate) fn new(e: &Dispersion, v: &Potential, b: &BoxLattice, z: C64, opts: &ResolventOptions) -> Result<Self> {
        check_z(e, b, z, opts)?;
        Ok(BoxResolvent { h: hamiltonian_sparse(e, v, b)?, z, tol: opts.residual_tol, max_iter: opts.max_iter })
    }

    pub(crate) fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        let n = rhs.len();
        let (a, bim) = (self.z.re, self.z.im);
        let shifted = |x: &[C64], y: &mut [C64]| {
            apply_real(&self.h, x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi -= xi * a;
            }
        };
        let normal = |x: &[C64], y: &mut [C64]| {
            let mut t = vec![C64::new(0.0, 0.0); n];
            shifted(x, &mut t);
            shifted(&t, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += xi * (bim * bim);
            }
        };
        let cg = conjugate_gradient(normal, rhs, 0.01 * self.tol, self.max_iter);
        // u = (z̄ − H)w = −(H − a)w − ib w
        let mut u = vec![C64::new(0.0, 0.0); n];
        shifted(&cg.x, &mut u);
        for (ui, wi) in u.iter_mut().zip(&cg.x) {
            *ui = -*ui - C64::new(0.0, bim) * wi;
        }
        // true residual of (z − H)u = rhs
        let mut hu = vec![C64::new(0.0, 0.0); n];
        apply_real(&self.h, &u, &mut hu);
        let r: Vec<C64> = rhs.iter().zip(&u).zip(&hu).map(|((&f, &ui), &hi)| f - (self.z * ui - hi)).collect();
        let rel = norm(&r) / norm(rhs).max(1e-300);
        if rel > self.tol {
            return Err(Error::numerical(format!("resolvent solve residual {rel:.3e} exceeds {:.1e}", self.tol)));
        }
        Ok(u)
    }
}

fn delta(n: usize, i: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); n];
    v[i] = C64::new(1.0, 0.0);
    v
}

fn site_index(b: &BoxLattice, x: &[i32]) -> Result<usize> {
    b.index(x).ok_or_else(|| Error::precondition(format!("site {x:?} outside the box")))
}

/// The column u = (z − H)⁻¹δ_y on the whole box.
pub fn resolvent_column(
    e: &Dispersion,
    v: &Potential,
    z: C64,
    y: &[i32],
    b: &BoxLattice,
    opts: &ResolventOptions,
) -> Result<Vec<C64>> {
    let iy = site_index(b, y)?;
    BoxResolvent::new(e, v, b, z, opts)?.solve(&delta(b.len(), iy))
}

/// ⟨δ_x, (z − H)⁻¹ δ_y⟩ on the box.
pub fn resolvent_kernel(
    e: &Dispersion,
    v: &Potential,
    z: C64,
    x: &[i32],
    y: &[i32],
    b: &BoxLattice,
    opts: &ResolventOptions,
) -> Result<C64> {
    let ix = site_index(b, x)?;
    Ok(resolvent_column(e, v, z, y, b, opts)?[ix])
}

/// Complex square root with (V^{1/2})² = V: √|V| for V ≥ 0, i√|V| for V < 0.
pub fn sqrt_potential(v: f64) -> C64 {
    if v >= 0.0 {
        C64::new(v.sqrt(), 0.0)
    } else {
        C64::new(0.0, (-v).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CResolvRow {
    pub probe: usize,
    pub z: [f64; 2],
    pub expression: &'static str,
    pub norm: f64,
    /// The Φ weight or (1+|x|)² envelope the norm is divided by.
    pub weight: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CResolvReport {
    pub rows: Vec<CResolvRow>,
    pub c_hat: f64,
    /// Default bound threshold c = 1/(2ĉ).
    pub c_default: f64,
    pub eta: f64,
    pub half_width: usize,
    pub options: ResolventOptions,
}

fn spectral_norm(m: &Mat<C64>) -> Result<f64> {
    let g = m.adjoint() * m;
    let ev = hermitian_eigenvalues(&g)?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Empirical constant of the weighted resolvent bounds for h(e) on a box:
/// per probe V and z, the norms of V^{1/2}RV^{1/2} (÷Φ_{2,2}), V^{1/2}RAV^{1/2},
/// V^{1/2}ARV^{1/2}, V^{1/2}ARAV^{1/2} (÷Φ_{2,3}), the kernel |R(x,y)| (as
/// √(|R|/((1+|x|)²(1+|y|)²)), the bound being ĉ²), and ‖V^{1/2}Rδ_x‖,
/// ‖V^{1/2}ARδ_x‖ (÷(1+|x|)²Φ^{1/2}), for x, y over the origin and supp V.
/// R = (z − h)⁻¹, φ_x = δ_x.
pub fn estimate_c_resolv(
    e: &Dispersion,
    probes: &[Potential],
    z_grid: &[C64],
    b: &BoxLattice,
    opts: &ResolventOptions,
) -> Result<CResolvReport> {
    let n = b.len();
    let zero = Potential::zero(b.dim);
    let a_op = crate::lattice::conjugate_sparse(e, b)?;
    let mut rows = Vec::new();
    for (pi, probe) in probes.iter().enumerate() {
        let supp: Vec<(Site, f64)> = probe
            .restricted_to(b)
            .support()
            .ok_or_else(|| Error::precondition("resolvent probes must have finite support"))?;
        if probe.support_size() != Some(supp.len()) {
            return Err(Error::precondition(format!("probe {pi} has support outside the box")));
        }
        if supp.is_empty() {
            continue;
        }
        let phi22 = phi_finite(supp.iter().map(|(x, v)| (x.as_slice(), *v)), 2, 2);
        let phi23 = phi_finite(supp.iter().map(|(x, v)| (x.as_slice(), *v)), 2, 3);
        if !phi22.is_finite() || !phi23.is_finite() {
            return Err(Error::precondition(format!("probe {pi} has infinite Φ")));
        }
        let idx: Vec<usize> = supp.iter().map(|(x, _)| b.index(x).expect("inside")).collect();
        let roots: Vec<C64> = supp.iter().map(|(_, v)| sqrt_potential(*v)).collect();
        let k = supp.len();
        for &z in z_grid {
            let res = BoxResolvent::new(e, &zero, b, z, opts)?;
            // columns Rδ_s and R g_s (g_s = Aδ_s)
            let mut r_delta = Vec::with_capacity(k);
            let mut r_g = Vec::with_capacity(k);
            for (s, x) in idx.iter().zip(&supp) {
                r_delta.push(res.solve(&delta(n, *s))?);
                let mut g = vec![C64::new(0.0, 0.0); n];
                for (j, gj) in g_vector(e, b, &x.0) {
                    g[j] = gj;
                }
                r_g.push(res.solve(&g)?);
            }
            let a_apply = |u: &[C64]| a_op.mul_vec(u);
            let ar_delta: Vec<Vec<C64>> = r_delta.iter().map(|u| a_apply(u)).collect();
            let ar_g: Vec<Vec<C64>> = r_g.iter().map(|u| a_apply(u)).collect();
            // D M D with D = diag(V^{1/2}) on supp
            let sandwich = |cols: &[Vec<C64>]| Mat::<C64>::from_fn(k, k, |i, j| roots[i] * cols[j][idx[i]] * roots[j]);
            let zz = [z.re, z.im];
            let mut push = |expression: &'static str, norm: f64, weight: f64| {
                rows.push(CResolvRow { probe: pi, z: zz, expression, norm, weight, ratio: norm / weight });
            };
            push("V^1/2 R V^1/2", spectral_norm(&sandwich(&r_delta))?, phi22);
            push("V^1/2 R A V^1/2", spectral_norm(&sandwich(&r_g))?, phi23);
            push("V^1/2 A R V^1/2", spectral_norm(&sandwich(&ar_delta))?, phi23);
            push("V^1/2 A R A V^1/2", spectral_norm(&sandwich(&ar_g))?, phi23);

            // kernel and φ_x-expressions for x over origin ∪ supp
            let mut xs: Vec<(Site, usize)> = vec![(b.site(b.origin()), b.origin())];
            for (s, x) in idx.iter().zip(&supp) {
                if *s != b.origin() {
                    xs.push((x.0.clone(), *s));
                }
            }
            let mut cols: Vec<Vec<C64>> = Vec::with_capacity(xs.len());
            for (x, ix) in &xs {
                let col = match idx.iter().position(|s| s == ix) {
                    Some(p) => r_delta[p].clone(),
                    None => res.solve(&delta(n, *ix))?,
                };
                let wx = (1.0 + euclidean_norm(x)).powi(2);
                let v_r: f64 = idx.iter().zip(&roots).map(|(&s, r)| (r * col[s]).norm_sqr()).sum::<f64>().sqrt();
                let acol = a_apply(&col);
                let v_ar: f64 = idx.iter().zip(&roots).map(|(&s, r)| (r * acol[s]).norm_sqr()).sum::<f64>().sqrt();
                push("V^1/2 R phi_x", v_r, wx * phi22.sqrt());
                push("V^1/2 A R phi_x", v_ar, wx * phi23.sqrt());
                cols.push(col);
            }
            for (col, (x, _)) in cols.iter().zip(&xs) {
                for (y, iy) in &xs {
                    let w = (1.0 + euclidean_norm(x)).powi(2) * (1.0 + euclidean_norm(y)).powi(2);
                    let kv = col[*iy].norm();
                    rows.push(CResolvRow {
                        probe: pi,
                        z: zz,
                        expression: "kernel (sqrt)",
                        norm: kv,
                        weight: w,
                        ratio: (kv / w).sqrt(),
                    });
                }
            }
        }
    }
    let c_hat = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    if c_hat == 0.0 {
        return Err(Error::precondition("no nonzero probe inside the box"));
    }
    Ok(CResolvReport {
        rows,
        c_hat,
        c_default: 1.0 / (2.0 * c_hat),
        eta: eta_guard(e, b, opts.kappa),
        half_width: b.half_width,
        options: opts.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelScanRow {
    pub half_width: usize,
    pub z: [f64; 2],
    /// max over y ∈ {0} ∪ supp V and every box site x of |R(x,y)|/((1+|x|)²(1+|y|)²)
    pub max_ratio: f64,
    pub argmax: (Site, Site),
}

/// Weighted kernel ratios of (z − H)⁻¹ with Im z = η(ℓ) tied to the box size.
pub fn weighted_kernel_scan(
    e: &Dispersion,
    v: &Potential,
    re_grid: &[f64],
    half_widths: &[usize],
    opts: &ResolventOptions,
) -> Result<Vec<KernelScanRow>> {
    let mut rows = Vec::new();
    for &l in half_widths {
        let b = BoxLattice::new(e.dim(), l)?;
        let eta = eta_guard(e, &b, opts.kappa);
        let mut ys: Vec<Site> = vec![vec![0; e.dim()]];
        for (x, _) in v.restricted_to(&b).support().expect("finite after restriction") {
            if !ys.contains(&x) {
                ys.push(x);
            }
        }
        for &a in re_grid {
            let z = C64::new(a, eta);
            let res = BoxResolvent::new(e, v, &b, z, opts)?;
            let mut best = (0.0f64, (ys[0].clone(), ys[0].clone()));
            for y in &ys {
                let col = res.solve(&delta(b.len(), site_index(&b, y)?))?;
                let wy = (1.0 + euclidean_norm(y)).powi(2);
                for (i, c) in col.iter().enumerate() {
                    let x = b.site(i);
                    let r = c.norm() / ((1.0 + euclidean_norm(&x)).powi(2) * wy);
                    if r > best.0 {
                        best = (r, (x, y.clone()));
                    }
                }
            }
            rows.push(KernelScanRow { half_width: l, z: [a, eta], max_ratio: best.0, argmax: best.1 });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn guardless() -> ResolventOptions {
        ResolventOptions { override_guard: true, ..Default::default() }
    }

    #[test]
    fn one_dimensional_kernel_against_closed_form() {
        // infinite chain: G(x) = ζ^{|x|}/(z − 2 − 2ζ) ... use the torus formula at x = 0
        let e = Dispersion::laplacian(1);
        let b = BoxLattice::new(1, 60).unwrap();
        let z = C64::new(1.0, 1.0);
        let g = resolvent_kernel(&e, &Potential::zero(1), z, &[0], &[0], &b, &guardless()).unwrap();
        let w = z - 2.0;
        let mut s = (w * w - 4.0).sqrt();
        if (1.0 / s).im * z.im > 0.0 {
            s = -s;
        }
        assert!((g - 1.0 / s).norm() < 1e-10, "{g} {}", 1.0 / s);
        assert!(g.norm() <= 1.0 / z.im);
    }

    #[test]
    fn kernel_symmetry_and_norm_bound() {
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 5).unwrap();
        let v = Potential::finite(2, [(vec![1, 0], -1.5), (vec![0, 2], 0.7)]).unwrap();
        let z = C64::new(3.0, 0.4);
        let uxy = resolvent_kernel(&e, &v, z, &[2, -1], &[0, 3], &b, &guardless()).unwrap();
        let uyx = resolvent_kernel(&e, &v, z, &[0, 3], &[2, -1], &b, &guardless()).unwrap();
        assert!((uxy - uyx).norm() < 1e-11);
        let col = resolvent_column(&e, &v, z, &[0, 0], &b, &guardless()).unwrap();
        assert!(norm(&col) <= 1.0 / z.im + 1e-12);
    }

    #[test]
    fn guard_is_enforced() {
        let e = Dispersion::laplacian(3);
        let b = BoxLattice::new(3, 4).unwrap();
        let eta = eta_guard(&e, &b, 8.0);
        assert!((eta - 8.0 * 12.0 / 4.0).abs() < 1e-9);
        let z = C64::new(0.0, 0.5 * eta);
        let r = resolvent_kernel(&e, &Potential::zero(3), z, &[0, 0, 0], &[0, 0, 0], &b, &ResolventOptions::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
        assert!(resolvent_kernel(&e, &Potential::zero(3), C64::new(1.0, 0.0), &[0; 3], &[0; 3], &b, &guardless()).is_err());
    }

    #[test]
    fn single_site_probe_ratio_is_kernel() {
        let e = Dispersion::laplacian(2);
        let b = BoxLattice::new(2, 6).unwrap();
        let probe = Potential::single_site(2, vec![0, 0], -0.3).unwrap();
        let z = C64::new(2.0, 1.0);
        let rep = estimate_c_resolv(&e, &[probe], &[z], &b, &guardless()).unwrap();
        let first = rep.rows.iter().find(|r| r.expression == "V^1/2 R V^1/2").unwrap();
        let k = resolvent_kernel(&e, &Potential::zero(2), z, &[0, 0], &[0, 0], &b, &guardless()).unwrap();
        assert!((first.ratio - k.norm()).abs() < 1e-10);
        assert!((rep.c_default - 0.5 / rep.c_hat).abs() < 1e-15);
        // Φ_{2,3} ≥ Φ_{2,2} termwise, and A-weighted columns are larger on generic probes
        let probe = Potential::finite(2, [(vec![1, 0], 0.4), (vec![-1, 2], -0.2)]).unwrap();
        let rep = estimate_c_resolv(&e, &[probe], &[z], &b, &guardless()).unwrap();
        let get = |name: &str| rep.rows.iter().find(|r| r.expression == name).unwrap().norm;
        assert!(get("V^1/2 A R A V^1/2") > get("V^1/2 R V^1/2"));
    }

    #[test]
    fn kernel_scan_reports_every_box_and_energy() {
        let e = Dispersion::laplacian(1);
        let v = Potential::single_site(1, vec![2], -0.5).unwrap();
        let rows = weighted_kernel_scan(&e, &v, &[1.0, 3.0], &[10, 20], &ResolventOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let b = BoxLattice::new(1, r.half_width).unwrap();
            assert!((r.z[1] - eta_guard(&e, &b, 8.0)).abs() < 1e-15);
            let (x, y) = &r.argmax;
            let k = resolvent_kernel(&e, &v, C64::new(r.z[0], r.z[1]), x, y, &b, &ResolventOptions::default()).unwrap();
            let w = (1.0 + x[0].abs() as f64).powi(2) * (1.0 + y[0].abs() as f64).powi(2);
            assert!((k.norm() / w - r.max_ratio).abs() < 1e-9);
        }
    }
}
