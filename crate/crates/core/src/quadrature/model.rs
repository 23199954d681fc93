//! The three local model integrals near regular level-set points and Morse
//! critical points, evaluated through spherical averages and the
//! integration-by-parts ln/arctan forms.
//!
//! L1 = ∫_{B_{d−1}} dy ∫_{−r}^{r} dx f(x,y)/(ib − x)
//! L2 = ∫_{B_d} f(x)/(a + ib − x²) dx
//! L3 = ∫_{B_{d−m}} ∫_{B_m} f(x,y)/(a + ib − x² + y²) dx dy
//! with B_n the radius-r ball in ℝ^n.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_1d, gl};
use crate::C64;

pub trait ModelFunction {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Fourth-order central differences unless overridden.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-3;
        let mut y = x.to_vec();
        (0..x.len())
            .map(|k| {
                let mut at = |t: f64| {
                    y[k] = x[k] + t * h;
                    let v = self.value(&y);
                    y[k] = x[k];
                    v
                };
                (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
            })
            .collect()
    }
}

/// A closure as a model function.
pub struct FnModel<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> ModelFunction for FnModel<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// (1 − |x|²/ρ²)² inside the ball of radius ρ, 0 outside; C¹ with compact support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothBump {
    pub dim: usize,
    pub radius: f64,
}

impl ModelFunction for SmoothBump {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        let t = 1.0 - x.iter().map(|v| v * v).sum::<f64>() / (self.radius * self.radius);
        if t > 0.0 {
            t * t
        } else {
            0.0
        }
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r2 = self.radius * self.radius;
        let t = 1.0 - x.iter().map(|v| v * v).sum::<f64>() / r2;
        if t > 0.0 {
            x.iter().map(|v| -4.0 * t * v / r2).collect()
        } else {
            vec![0.0; x.len()]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOptions {
    pub r: f64,
    /// Angular resolution of the sphere rules.
    pub sphere_n: usize,
    pub abs_tol: f64,
    pub max_splits: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions { r: 0.5, sphere_n: 24, abs_tol: 1e-10, max_splits: 20_000 }
    }
}

/// Quadrature on S^{k−1} ⊂ ℝ^k with total weight |S^{k−1}|.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(k: usize, n: usize) -> Self {
        match k {
            0 => SphereRule { points: vec![vec![]], weights: vec![1.0] },
            1 => SphereRule { points: vec![vec![-1.0], vec![1.0]], weights: vec![1.0, 1.0] },
            2 => {
                let points = (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect();
                SphereRule { points, weights: vec![2.0 * PI / n as f64; n] }
            }
            _ => {
                // polar angle θ; the k = 3 case integrates in t = cos θ
                let sub = SphereRule::new(k - 1, n);
                // sin^{k−2} is less friendly to GL than the k = 3 polynomial weight
                let (x, w) = gl(if k == 3 { (n / 2).max(4) } else { n.max(8) });
                let mut points = Vec::new();
                let mut weights = Vec::new();
                for (&xi, &wi) in x.iter().zip(w) {
                    let (c, s, wt) = if k == 3 {
                        (xi, (1.0 - xi * xi).sqrt(), wi)
                    } else {
                        let th = 0.5 * PI * (xi + 1.0);
                        (th.cos(), th.sin(), 0.5 * PI * wi * th.sin().powi(k as i32 - 2))
                    };
                    for (p, &pw) in sub.points.iter().zip(&sub.weights) {
                        let mut q = vec![c];
                        q.extend(p.iter().map(|v| s * v));
                        points.push(q);
                        weights.push(wt * pw);
                    }
                }
                SphereRule { points, weights }
            }
        }
    }
}

pub fn sphere_area(k: usize) -> f64 {
    // |S^{k+1}| = 2π/k · |S^{k−1}|, from |S^0| = 2 and |S^1| = 2π
    if k == 0 {
        return 0.0;
    }
    let (mut kk, mut area) = if k % 2 == 0 { (2, 2.0 * PI) } else { (1, 2.0) };
    while kk < k {
        area *= 2.0 * PI / kk as f64;
        kk += 2;
    }
    area
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical("non-finite model function sample"))
    }
}

fn require(r: &crate::quadrature::IntegralResult, what: &str) -> Result<C64> {
    if !r.value.re.is_finite() || !r.value.im.is_finite() {
        return Err(Error::numerical(format!("{what}: non-finite result")));
    }
    Ok(r.value)
}

/// L1 via subtraction of f(0,y): the remainder is bounded, and
/// ∫_{−r}^{r} dx/(ib − x) = −2i·sgn(b)·arctan(r/|b|).
pub fn model_integral_l1<M: ModelFunction + ?Sized>(f: &M, b: f64, opts: &ModelOptions) -> Result<C64> {
    if b == 0.0 || !b.is_finite() {
        return Err(Error::precondition("model integral L1 needs b ≠ 0"));
    }
    let d = f.dim();
    if d == 0 {
        return Err(Error::precondition("model function dimension must be ≥ 1"));
    }
    let r = opts.r;
    let log_term = C64::new(0.0, -2.0 * b.signum() * (r / b.abs()).atan());
    let err = std::cell::Cell::new(false);
    let line = |y: &[f64]| -> C64 {
        let mut p = vec![0.0; d];
        p[1..].copy_from_slice(y);
        let f0 = f.value(&p);
        if !f0.is_finite() {
            err.set(true);
        }
        let inner = adaptive_1d(
            |x| {
                let mut q = p.clone();
                q[0] = x;
                let v = f.value(&q);
                if !v.is_finite() {
                    err.set(true);
                }
                C64::new(v - f0, 0.0) / C64::new(-x, b)
            },
            -r,
            r,
            &[0.0],
            opts.abs_tol * 0.1,
            opts.max_splits,
        );
        inner.value + log_term * f0
    };
    let total = if d == 1 {
        line(&[])
    } else {
        let sphere = SphereRule::new(d - 1, opts.sphere_n);
        let res = adaptive_1d(
            |rho| {
                let mut acc = C64::new(0.0, 0.0);
                for (w, th) in sphere.weights.iter().zip(&sphere.points) {
                    let y: Vec<f64> = th.iter().map(|t| rho * t).collect();
                    acc += line(&y) * *w;
                }
                acc * rho.powi(d as i32 - 2)
            },
            0.0,
            r,
            &[],
            opts.abs_tol,
            opts.max_splits,
        );
        require(&res, "L1")?
    };
    if err.get() {
        return Err(Error::numerical("non-finite model function sample"));
    }
    Ok(total)
}

/// g(s) and g'(s) for the spherical total of f over the sphere of radius s.
fn radial_profile<M: ModelFunction + ?Sized>(f: &M, sphere: &SphereRule, s: f64) -> Result<(f64, f64)> {
    let mut g = 0.0;
    let mut gp = 0.0;
    for (w, th) in sphere.weights.iter().zip(&sphere.points) {
        let x: Vec<f64> = th.iter().map(|t| s * t).collect();
        g += w * check_finite(f.value(&x))?;
        let grad = f.gradient(&x);
        gp += w * th.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok((g, gp))
}

/// L2 by spherical averaging and integration by parts:
/// Re = (1/4)∫ (g s^{d−2})' ln[(a−s²)²+b²] ds − boundary,
/// Im = −(sgn b/2)∫ (g s^{d−2})' arctan[(a−s²)/|b|] ds + boundary.
pub fn model_integral_l2<M: ModelFunction + ?Sized>(f: &M, a: f64, b: f64, opts: &ModelOptions) -> Result<C64> {
    let d = f.dim();
    if d < 3 {
        return Err(Error::precondition("model integral L2 needs d ≥ 3"));
    }
    if b == 0.0 || !b.is_finite() || !a.is_finite() {
        return Err(Error::precondition("model integral L2 needs finite a and b ≠ 0"));
    }
    let r = opts.r;
    let sphere = SphereRule::new(d, opts.sphere_n);
    let sb = b.signum();
    let ln_term = |s: f64| ((a - s * s).powi(2) + b * b).ln();
    let at_term = |s: f64| ((a - s * s) / b.abs()).atan();
    let failed = std::cell::Cell::new(false);
    let res = adaptive_1d(
        |s| match radial_profile(f, &sphere, s) {
            Ok((g, gp)) => {
                let dg = gp * s.powi(d as i32 - 2) + (d as f64 - 2.0) * g * s.powi(d as i32 - 3);
                C64::new(0.25 * dg * ln_term(s), -0.5 * sb * dg * at_term(s))
            }
            Err(_) => {
                failed.set(true);
                C64::new(0.0, 0.0)
            }
        },
        0.0,
        r,
        &[a.max(0.0).sqrt()],
        opts.abs_tol,
        opts.max_splits,
    );
    if failed.get() {
        return Err(Error::numerical("non-finite model function sample"));
    }
    let (gr, _) = radial_profile(f, &sphere, r)?;
    let edge = gr * r.powi(d as i32 - 2);
    let boundary = C64::new(-0.25 * edge * ln_term(r), 0.5 * sb * edge * at_term(r));
    Ok(require(&res, "L2")? + boundary)
}

struct BiProfile {
    outer: SphereRule,
    inner: SphereRule,
    dx: usize,
}

impl BiProfile {
    /// g, ∂_x g, ∂_y g at radii (x, y).
    fn eval<M: ModelFunction + ?Sized>(&self, f: &M, x: f64, y: f64) -> Result<(f64, f64, f64)> {
        let (mut g, mut gx, mut gy) = (0.0, 0.0, 0.0);
        let mut p = vec![0.0; self.dx + self.inner.points[0].len()];
        for (w1, th) in self.outer.weights.iter().zip(&self.outer.points) {
            for (w2, ka) in self.inner.weights.iter().zip(&self.inner.points) {
                for (k, t) in th.iter().enumerate() {
                    p[k] = x * t;
                }
                for (k, t) in ka.iter().enumerate() {
                    p[self.dx + k] = y * t;
                }
                let w = w1 * w2;
                g += w * check_finite(f.value(&p))?;
                let grad = f.gradient(&p);
                gx += w * th.iter().zip(&grad[..self.dx]).map(|(a, b)| a * b).sum::<f64>();
                gy += w * ka.iter().zip(&grad[self.dx..]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok((g, gx, gy))
    }
}

/// L3 in the coordinates x = s(1+u), y = s(1−u) (Jacobian 2s), where the
/// denominator becomes a + ib − 4s²u, followed by integration by parts in u.
pub fn model_integral_l3<M: ModelFunction + ?Sized>(f: &M, a: f64, b: f64, m: usize, opts: &ModelOptions) -> Result<C64> {
    let d = f.dim();
    if d < 3 || m < 1 || m > d - 1 {
        return Err(Error::precondition("model integral L3 needs d ≥ 3 and 1 ≤ m ≤ d − 1"));
    }
    if b == 0.0 || !b.is_finite() || !a.is_finite() {
        return Err(Error::precondition("model integral L3 needs finite a and b ≠ 0"));
    }
    let r = opts.r;
    let dx = d - m;
    let prof = BiProfile { outer: SphereRule::new(dx, opts.sphere_n), inner: SphereRule::new(m, opts.sphere_n), dx };
    let (pe, qe) = (dx as i32 - 1, m as i32 - 1);
    let sb = b.signum();
    let failed = std::cell::Cell::new(false);

    // g̃(s,u) and ∂_u g̃
    let gt = |s: f64, u: f64| -> (f64, f64) {
        match prof.eval(f, s * (1.0 + u), s * (1.0 - u)) {
            Ok((g, gx, gy)) => {
                let (a1, b1) = (1.0 + u, 1.0 - u);
                let wgt = a1.powi(pe) * b1.powi(qe);
                let dw = if pe > 0 { pe as f64 * a1.powi(pe - 1) * b1.powi(qe) } else { 0.0 }
                    - if qe > 0 { qe as f64 * a1.powi(pe) * b1.powi(qe - 1) } else { 0.0 };
                (wgt * g, dw * g + wgt * s * (gx - gy))
            }
            Err(_) => {
                failed.set(true);
                (0.0, 0.0)
            }
        }
    };
    // s^{d−3}·{ −(1/4)([g̃ ln]−∫∂g̃ ln) + i(sgn b/2)([g̃ atan]−∫∂g̃ atan) }
    let outer = |s: f64| -> C64 {
        let u0 = (-1.0f64).max(1.0 - r / s);
        let u1 = 1.0f64.min(r / s - 1.0);
        if u1 <= u0 {
            return C64::new(0.0, 0.0);
        }
        let xfun = |u: f64| a - 4.0 * s * s * u;
        let lnf = |u: f64| (xfun(u).powi(2) + b * b).ln();
        let atf = |u: f64| (xfun(u) / b.abs()).atan();
        let ustar = a / (4.0 * s * s);
        let inner = adaptive_1d(
            |u| {
                let (_, dg) = gt(s, u);
                C64::new(dg * lnf(u), dg * atf(u))
            },
            u0,
            u1,
            &[ustar],
            opts.abs_tol * 0.1,
            opts.max_splits,
        );
        let (g1, _) = gt(s, u1);
        let (g0, _) = gt(s, u0);
        let re = -0.25 * ((g1 * lnf(u1) - g0 * lnf(u0)) - inner.value.re);
        let im = 0.5 * sb * ((g1 * atf(u1) - g0 * atf(u0)) - inner.value.im);
        C64::new(re, im) * s.powi(d as i32 - 3)
    };
    let mut breaks = vec![0.5 * r, 0.5 * a.abs().sqrt()];
    // zeros of X at the moving ends u = r/s − 1 and u = 1 − r/s
    for disc in [r * r - a, r * r + a] {
        if disc >= 0.0 {
            breaks.push(0.5 * (r + disc.sqrt()));
            breaks.push(0.5 * (r - disc.sqrt()));
        }
    }
    let res = adaptive_1d(outer, 0.0, r, &breaks, opts.abs_tol, opts.max_splits);
    if failed.get() {
        return Err(Error::numerical("non-finite model function sample"));
    }
    require(&res, "L3")
}

/// Domain of a model integral, for C¹ envelopes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelDomain {
    /// (−r, r) × B_{d−1}
    Slab,
    Ball,
    /// B_{d−m} × B_m
    BallProduct(usize),
}

/// max(sup|f|, sup_k |∂_k f|) over the domain, on a uniform grid of the bounding cube.
pub fn c1_norm<M: ModelFunction + ?Sized>(f: &M, domain: ModelDomain, r: f64, n: usize) -> f64 {
    let d = f.dim();
    let total = n.pow(d as u32);
    let mut best = 0.0f64;
    let mut p = vec![0.0; d];
    for mut idx in 0..total {
        for k in (0..d).rev() {
            p[k] = -r + 2.0 * r * (idx % n) as f64 / (n - 1) as f64;
            idx /= n;
        }
        let inside = match domain {
            ModelDomain::Slab => p[1..].iter().map(|v| v * v).sum::<f64>() <= r * r,
            ModelDomain::Ball => p.iter().map(|v| v * v).sum::<f64>() <= r * r,
            ModelDomain::BallProduct(m) => {
                p[..d - m].iter().map(|v| v * v).sum::<f64>() <= r * r
                    && p[d - m..].iter().map(|v| v * v).sum::<f64>() <= r * r
            }
        };
        if !inside {
            continue;
        }
        best = best.max(f.value(&p).abs());
        for g in f.gradient(&p) {
            best = best.max(g.abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{adaptive_cubature, CubatureOptions};

    fn one(d: usize) -> FnModel<impl Fn(&[f64]) -> f64> {
        FnModel { dim: d, f: |_: &[f64]| 1.0 }
    }

    #[test]
    fn sphere_rules_integrate_polynomials() {
        for k in 1..=5 {
            let s = SphereRule::new(k, 24);
            let total: f64 = s.weights.iter().sum();
            assert!((total - sphere_area(k)).abs() < 1e-10, "k={k} {total} {}", sphere_area(k));
            // ∫ x_0² dσ = |S^{k−1}|/k
            let m2: f64 = s.weights.iter().zip(&s.points).map(|(w, p)| w * p[0] * p[0]).sum();
            assert!((m2 - sphere_area(k) / k as f64).abs() < 1e-10, "k={k}: {m2} vs {}", sphere_area(k) / k as f64);
        }
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn l1_constant_closed_form() {
        let opts = ModelOptions::default();
        for b in [1.0, 0.1, 1e-4, -0.3] {
            let v = model_integral_l1(&one(1), b, &opts).unwrap();
            let exact = C64::new(0.0, -2.0 * f64::signum(b) * (opts.r / f64::abs(b)).atan());
            assert!((v - exact).norm() < 1e-10);
            assert!(v.norm() <= PI);
        }
        // d = 3: multiply by the disc area π r²
        let v = model_integral_l1(&one(3), 0.2, &opts).unwrap();
        let exact = C64::new(0.0, -2.0 * (0.5f64 / 0.2).atan()) * (PI * 0.25);
        assert!((v - exact).norm() < 1e-8);
    }

    #[test]
    fn l1_against_direct_quadrature() {
        let f = SmoothBump { dim: 2, radius: 0.7 };
        let opts = ModelOptions::default();
        let b = 0.3;
        let v = model_integral_l1(&f, b, &opts).unwrap();
        let direct = adaptive_cubature(
            |p| C64::new(f.value(p), 0.0) / C64::new(-p[0], b),
            &[-0.5, -0.5],
            &[0.5, 0.5],
            &CubatureOptions { abs_tol: 1e-12, ..Default::default() },
        );
        assert!((v - direct.value).norm() < 1e-8, "{v} {}", direct.value);
    }

    fn l2_oracle<M: ModelFunction + ?Sized>(m: &M, a: f64, b: f64) -> C64 {
        // ∫_0^r g(s) s² /(a+ib−s²) ds, plain adaptive on the unreduced form
        let sphere = SphereRule::new(3, 24);
        adaptive_1d(
            |s| {
                let gs: f64 = sphere
                    .weights
                    .iter()
                    .zip(&sphere.points)
                    .map(|(w, t)| w * m.value(&[s * t[0], s * t[1], s * t[2]]))
                    .sum();
                C64::new(gs * s * s, 0.0) / C64::new(a - s * s, b)
            },
            0.0,
            0.5,
            &[],
            1e-13,
            10_000,
        )
        .value
    }

    #[test]
    fn l2_against_direct_radial() {
        let opts = ModelOptions::default();
        let bump = SmoothBump { dim: 3, radius: 0.45 };
        let poly = FnModel { dim: 3, f: |x: &[f64]| 1.0 + x[0] - 0.5 * x[1] * x[2] + x[2] * x[2] };
        for (a, b) in [(-0.3, 0.5), (0.1, 0.2), (1.0, -1.0)] {
            let v = model_integral_l2(&bump, a, b, &opts).unwrap();
            let o = l2_oracle(&bump, a, b);
            assert!((v - o).norm() < 1e-7, "bump a={a} b={b}: {v} vs {o}");
            let v = model_integral_l2(&poly, a, b, &opts).unwrap();
            let o = l2_oracle(&poly, a, b);
            assert!((v - o).norm() < 1e-7, "poly a={a} b={b}: {v} vs {o}");
        }
        let zero = FnModel { dim: 3, f: |_: &[f64]| 0.0 };
        assert_eq!(model_integral_l2(&zero, 0.1, 0.1, &opts).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn l3_reduced_equals_direct_tensor() {
        let opts = ModelOptions::default();
        let r = opts.r;
        let fm = FnModel { dim: 3, f: |x: &[f64]| (1.0 - x[0] * x[0]) * (1.0 + 0.3 * x[2]) + 0.2 * x[1] };
        for m in [1usize, 2] {
            for (a, b) in [(1.5, 1.0), (-1.2, -1.0), (2.0, 0.5)] {
                let v = model_integral_l3(&fm, a, b, m, &opts).unwrap();
                let dx = 3 - m;
                let prof =
                    BiProfile { outer: SphereRule::new(dx, opts.sphere_n), inner: SphereRule::new(m, opts.sphere_n), dx };
                let direct = adaptive_cubature(
                    |p| {
                        let (g, _, _) = prof.eval(&fm, p[0], p[1]).unwrap();
                        let w = p[0].powi(dx as i32 - 1) * p[1].powi(m as i32 - 1);
                        C64::new(g * w, 0.0) / C64::new(a - p[0] * p[0] + p[1] * p[1], b)
                    },
                    &[0.0, 0.0],
                    &[r, r],
                    &CubatureOptions { abs_tol: 1e-12, ..Default::default() },
                );
                assert!((v - direct.value).norm() < 1e-8, "m={m} a={a} b={b}: {v} vs {}", direct.value);
            }
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let opts = ModelOptions::default();
        let f = SmoothBump { dim: 3, radius: 0.5 };
        let a = 0.1;
        let p = model_integral_l2(&f, a, 0.01, &opts).unwrap();
        let q = model_integral_l2(&f, a, -0.01, &opts).unwrap();
        assert!((p - q.conj()).norm() < 1e-9);
        let p = model_integral_l3(&f, a, 0.01, 1, &opts).unwrap();
        let q = model_integral_l3(&f, a, -0.01, 1, &opts).unwrap();
        assert!((p - q.conj()).norm() < 1e-9);
        let p = model_integral_l1(&f, 0.01, &opts).unwrap();
        let q = model_integral_l1(&f, -0.01, &opts).unwrap();
        assert!((p - q.conj()).norm() < 1e-9);
    }

    #[test]
    fn c1_norm_of_bump() {
        let f = SmoothBump { dim: 3, radius: 0.5 };
        let n = c1_norm(&f, ModelDomain::Ball, 0.5, 21);
        // sup|∇f| = max_t 4 t (1−t²)/ρ at t = 1/√3: 8/(3√3 ρ)
        let exact = 8.0 / (3.0 * 3f64.sqrt() * 0.5);
        assert!(n <= exact + 1e-12 && n > 0.95 * exact);
    }
}
