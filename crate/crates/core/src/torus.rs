//! Dispersions as even trigonometric polynomials on the torus [−π, π)^d and
//! their critical structure.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub type Freq = Vec<i32>;

/// Wrap a coordinate into [−π, π).
pub fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

/// Euclidean distance on the torus.
pub fn torus_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| wrap(a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Σ a_m · cos(⟨p,m⟩ + order·π/2): a dispersion (order 0) or one of its
/// partial derivatives. Differentiating bumps the order and multiplies by m_k.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CosSeries {
    dim: usize,
    terms: Vec<(Vec<f64>, f64)>,
    order: u32,
}

#[inline]
fn shifted_cos(x: f64, order: u32) -> f64 {
    match order % 4 {
        0 => x.cos(),
        1 => -x.sin(),
        2 => -x.cos(),
        _ => x.sin(),
    }
}

impl CosSeries {
    pub(crate) fn derivative(&self, axis: usize) -> CosSeries {
        let terms = self
            .terms
            .iter()
            .filter(|(m, _)| m[axis] != 0.0)
            .map(|(m, a)| (m.clone(), a * m[axis]))
            .collect();
        CosSeries { dim: self.dim, terms, order: self.order + 1 }
    }

    pub(crate) fn value(&self, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, a)| a * shifted_cos(dot(m, p), self.order))
            .sum()
    }

    pub(crate) fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (m, a) in &self.terms {
            let s = a * shifted_cos(dot(m, p), self.order + 1);
            for k in 0..self.dim {
                g[k] += s * m[k];
            }
        }
        g
    }

    /// Value, gradient and Hessian in one pass.
    pub(crate) fn jet(&self, p: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let (mut v, mut g, mut h) = (0.0, vec![0.0; d], vec![vec![0.0; d]; d]);
        for (m, a) in &self.terms {
            let x = dot(m, p);
            let (s, c) = x.sin_cos();
            // shifted cosines of order o, o+1, o+2
            let (c0, c1, c2) = match self.order % 4 {
                0 => (c, -s, -c),
                1 => (-s, -c, s),
                2 => (-c, s, c),
                _ => (s, c, -s),
            };
            v += a * c0;
            for j in 0..d {
                g[j] += a * c1 * m[j];
                for k in 0..=j {
                    h[j][k] += a * c2 * m[j] * m[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                h[k][j] = h[j][k];
            }
        }
        (v, g, h)
    }

    fn range(&self) -> usize {
        self.terms
            .iter()
            .map(|(m, _)| m.iter().fold(0.0f64, |r, x| r.max(x.abs())) as usize)
            .max()
            .unwrap_or(0)
    }

    /// max_p |f(p)|: uniform grid, Newton polish of the best cells, grid
    /// doubling until the maximum is stable to relative 1e−6.
    pub(crate) fn max_abs(&self) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        let d = self.dim;
        let cap = 1usize << 18;
        let mut n = (4 * self.range() + 4).max(8);
        let mut prev: Option<f64> = None;
        loop {
            let cur = self.max_abs_on_grid(n);
            if let Some(pv) = prev {
                if (cur - pv).abs() <= 1e-6 * cur.max(1e-300) {
                    return cur.max(pv);
                }
            }
            let next = n * 2;
            if next.checked_pow(d as u32).map_or(true, |t| t > cap) {
                return prev.map_or(cur, |pv| cur.max(pv));
            }
            prev = Some(cur);
            n = next;
        }
    }

    fn max_abs_on_grid(&self, n: usize) -> f64 {
        let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
        const KEEP: usize = 16;
        for p in grid_points(self.dim, n) {
            let v = self.value(&p).abs();
            if best.len() < KEEP || v > best[best.len() - 1].0 {
                let pos = best.partition_point(|(b, _)| *b >= v);
                best.insert(pos, (v, p));
                best.truncate(KEEP);
            }
        }
        let mut m = best.first().map_or(0.0, |b| b.0);
        for (_, p) in best {
            if let Some(q) = newton_critical(self, &p, 1e-13 * (1.0 + m), 50) {
                m = m.max(self.value(&q).abs());
            }
        }
        m
    }
}

fn dot(m: &[f64], p: &[f64]) -> f64 {
    m.iter().zip(p).map(|(a, b)| a * b).sum()
}

/// Cell centers of the uniform n^d grid on [−π, π)^d, lexicographic.
pub(crate) fn grid_points(dim: usize, n: usize) -> impl Iterator<Item = Vec<f64>> {
    let h = 2.0 * PI / n as f64;
    let total = n.pow(dim as u32);
    (0..total).map(move |mut idx| {
        let mut p = vec![0.0; dim];
        for k in (0..dim).rev() {
            p[k] = -PI + (idx % n) as f64 * h + 0.5 * h;
            idx /= n;
        }
        p
    })
}

/// Solve a small dense system by partial pivoting; None when (near) singular.
pub(crate) fn solve_small(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
        let mut r = r.clone();
        r.push(bi);
        r
    }).collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    Some(x)
}

/// Newton on ∇f = 0 from `start`; returns the wrapped root when |∇f| ≤ tol.
fn newton_critical(f: &CosSeries, start: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let mut p = start.to_vec();
    for _ in 0..max_iter {
        let (_, g, h) = f.jet(&p);
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gn <= tol {
            return Some(p.iter().map(|&x| wrap(x)).collect());
        }
        let mut step = solve_small(&h, &g)?;
        let sn = step.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !sn.is_finite() {
            return None;
        }
        if sn > 0.5 {
            step.iter_mut().for_each(|s| *s *= 0.5 / sn);
        }
        for k in 0..p.len() {
            p[k] = wrap(p[k] - step[k]);
        }
    }
    let g = f.gradient(&p);
    (g.iter().map(|x| x * x).sum::<f64>().sqrt() <= tol).then(|| p)
}

/// A real-valued trigonometric polynomial e(p) = Σ ê(m) e^{i⟨p,m⟩} with ê(−m) = ê(m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DispersionRepr", into = "DispersionRepr")]
pub struct Dispersion {
    dim: usize,
    coeffs: BTreeMap<Freq, f64>,
    series: CosSeries,
}

impl Dispersion {
    /// Builds a dispersion from (frequency, coefficient) pairs; repeated
    /// frequencies accumulate. Rejects asymmetric sets.
    pub fn new(dim: usize, coeffs: impl IntoIterator<Item = (Freq, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::precondition("dispersion dimension must be positive"));
        }
        let mut map: BTreeMap<Freq, f64> = BTreeMap::new();
        for (m, v) in coeffs {
            if m.len() != dim {
                return Err(Error::precondition(format!(
                    "frequency {m:?} does not have dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::precondition(format!("non-finite coefficient at {m:?}")));
            }
            *map.entry(m).or_insert(0.0) += v;
        }
        let scale = map.values().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
        let mut sym = BTreeMap::new();
        for (m, &v) in &map {
            let neg: Freq = m.iter().map(|x| -x).collect();
            let w = map.get(&neg).copied().unwrap_or(0.0);
            if (v - w).abs() > 1e-12 * scale {
                return Err(Error::precondition(format!(
                    "asymmetric coefficients: ê({m:?}) = {v} but ê({neg:?}) = {w}"
                )));
            }
            let avg = 0.5 * (v + w);
            if avg != 0.0 {
                sym.insert(m.clone(), avg);
                sym.insert(neg, avg);
            }
        }
        Ok(Self::from_symmetric(dim, sym))
    }

    fn from_symmetric(dim: usize, coeffs: BTreeMap<Freq, f64>) -> Self {
        let terms = coeffs
            .iter()
            .map(|(m, &v)| (m.iter().map(|&x| x as f64).collect(), v))
            .collect();
        Dispersion { dim, coeffs, series: CosSeries { dim, terms, order: 0 } }
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_symmetric(dim, BTreeMap::new())
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut map = BTreeMap::new();
        if c != 0.0 {
            map.insert(vec![0; dim], c);
        }
        Self::from_symmetric(dim, map)
    }

    /// e(p) = 2 Σ_k (1 − cos p_k).
    pub fn laplacian(dim: usize) -> Self {
        let mut map = BTreeMap::new();
        map.insert(vec![0; dim], 2.0 * dim as f64);
        for k in 0..dim {
            for s in [-1, 1] {
                let mut m = vec![0; dim];
                m[k] = s;
                map.insert(m, -1.0);
            }
        }
        Self::from_symmetric(dim, map)
    }

    /// e(p) = 3d/2 − Σ_k [2 cos p_k − cos 2p_k]; e(0) = d/2, minimum 0 at p_k = ±π/3.
    pub fn embedded(dim: usize) -> Self {
        let mut map = BTreeMap::new();
        map.insert(vec![0; dim], 1.5 * dim as f64);
        for k in 0..dim {
            for (step, v) in [(1, -1.0), (2, 0.5)] {
                for s in [-1, 1] {
                    let mut m = vec![0; dim];
                    m[k] = s * step;
                    map.insert(m, v);
                }
            }
        }
        Self::from_symmetric(dim, map)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &BTreeMap<Freq, f64> {
        &self.coeffs
    }

    pub fn coeff(&self, m: &[i32]) -> f64 {
        self.coeffs.get(m).copied().unwrap_or(0.0)
    }

    /// Largest |m|_∞ with ê(m) ≠ 0.
    pub fn range(&self) -> usize {
        self.coeffs
            .keys()
            .map(|m| m.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::precondition(format!(
                "point has dimension {} but dispersion has dimension {}",
                p.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64> {
        self.check_dim(p)?;
        Ok(self.value(p))
    }

    pub fn grad(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        Ok(self.series.gradient(p))
    }

    pub fn hessian(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(p)?;
        Ok(self.series.jet(p).2)
    }

    /// Unchecked evaluation for inner loops.
    #[inline]
    pub fn value(&self, p: &[f64]) -> f64 {
        self.series.value(p)
    }

    #[inline]
    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        self.series.gradient(p)
    }

    /// Coefficients of |∇e|²: ŵ(n) = −Σ_k Σ_{m+m'=n} m_k m'_k ê(m) ê(m').
    pub fn grad_squared(&self) -> Dispersion {
        let mut map: BTreeMap<Freq, f64> = BTreeMap::new();
        for (m, &a) in &self.coeffs {
            for (mp, &b) in &self.coeffs {
                let mm: i64 = m.iter().zip(mp).map(|(&x, &y)| x as i64 * y as i64).sum();
                if mm == 0 {
                    continue;
                }
                let n: Freq = m.iter().zip(mp).map(|(x, y)| x + y).collect();
                *map.entry(n).or_insert(0.0) -= mm as f64 * a * b;
            }
        }
        map.retain(|_, v| *v != 0.0);
        Self::from_symmetric(self.dim, map)
    }

    /// Coefficients of Σ_k ∂²_k e, i.e. −|m|² ê(m).
    pub fn laplacian_of(&self) -> Dispersion {
        let map = self
            .coeffs
            .iter()
            .filter(|(m, _)| m.iter().any(|&x| x != 0))
            .map(|(m, &v)| (m.clone(), -(m.iter().map(|&x| (x * x) as f64).sum::<f64>()) * v))
            .collect();
        Self::from_symmetric(self.dim, map)
    }

    /// e + c.
    pub fn shifted(&self, c: f64) -> Dispersion {
        let mut map = self.coeffs.clone();
        let zero = vec![0; self.dim];
        let v = map.get(&zero).copied().unwrap_or(0.0) + c;
        if v == 0.0 {
            map.remove(&zero);
        } else {
            map.insert(zero, v);
        }
        Self::from_symmetric(self.dim, map)
    }

    pub fn scaled(&self, s: f64) -> Dispersion {
        let map = if s == 0.0 {
            BTreeMap::new()
        } else {
            self.coeffs.iter().map(|(m, &v)| (m.clone(), s * v)).collect()
        };
        Self::from_symmetric(self.dim, map)
    }

    /// Termwise bound Σ_m |m|^k |ê(m)| on ‖e‖_{C^k}.
    pub fn coefficient_bound(&self, k: u32) -> f64 {
        self.coeffs
            .iter()
            .map(|(m, v)| {
                let mx = m.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0) as f64;
                mx.powi(k as i32) * v.abs()
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&DispersionRepr::from(self.clone())).expect("dispersion serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: DispersionRepr = serde_json::from_str(s)?;
        Dispersion::try_from(repr)
    }
}

#[derive(Serialize, Deserialize)]
struct DispersionRepr {
    dim: usize,
    coeffs: Vec<Vec<Value>>,
}

impl From<Dispersion> for DispersionRepr {
    fn from(e: Dispersion) -> Self {
        let coeffs = e
            .coeffs
            .iter()
            .map(|(m, &v)| {
                let mut row: Vec<Value> = m.iter().map(|&x| Value::from(x)).collect();
                row.push(Value::from(v));
                row
            })
            .collect();
        DispersionRepr { dim: e.dim, coeffs }
    }
}

impl TryFrom<DispersionRepr> for Dispersion {
    type Error = Error;

    fn try_from(r: DispersionRepr) -> Result<Self> {
        let mut pairs = Vec::with_capacity(r.coeffs.len());
        for row in &r.coeffs {
            if row.len() != r.dim + 1 {
                return Err(Error::parse(format!("coefficient row {row:?} must have {} entries", r.dim + 1)));
            }
            let mut m = Vec::with_capacity(r.dim);
            for x in &row[..r.dim] {
                let f = x.as_f64().ok_or_else(|| Error::parse(format!("non-numeric frequency {x}")))?;
                if f.fract() != 0.0 || f.abs() > i32::MAX as f64 {
                    return Err(Error::parse(format!("frequency component {f} is not an integer")));
                }
                m.push(f as i32);
            }
            let v = row[r.dim]
                .as_f64()
                .ok_or_else(|| Error::parse(format!("non-numeric coefficient {}", row[r.dim])))?;
            pairs.push((m, v));
        }
        Dispersion::new(r.dim, pairs)
    }
}

/// The two named dispersions, keyed "lapl" and "emb".
pub fn builtin_dispersions(dim: usize) -> BTreeMap<&'static str, Dispersion> {
    let mut out = BTreeMap::new();
    out.insert("lapl", Dispersion::laplacian(dim));
    out.insert("emb", Dispersion::embedded(dim));
    out
}

/// max over |n| = m of max_p |∂^n e(p)|.
pub fn cm_norm(e: &Dispersion, m: u32) -> f64 {
    let mut best = 0.0f64;
    for n in multi_indices(e.dim, m) {
        let mut s = e.series.clone();
        for (axis, &k) in n.iter().enumerate() {
            for _ in 0..k {
                s = s.derivative(axis);
            }
        }
        best = best.max(s.max_abs());
    }
    best
}

/// All multi-indices of length `dim` summing to `m`, lexicographic.
pub(crate) fn multi_indices(dim: usize, m: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() + 1 == dim {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(dim, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, m, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub point: Vec<f64>,
    pub value: f64,
    pub morse_index: usize,
    /// min |Hessian eigenvalue|^{1/2}
    pub curvature: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub points: Vec<CriticalPoint>,
    pub thresholds: Vec<f64>,
    pub is_morse: bool,
    pub min_curvature: f64,
    pub e_max: f64,
    pub e_min: f64,
    /// Σ (−1)^index over nondegenerate points; 0 on the torus when Morse.
    pub euler_sum: i64,
    pub unresolved_cells: usize,
    pub incomplete: bool,
    pub grid_n: usize,
    pub gradient_tolerance: f64,
    pub degeneracy_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalSearch {
    pub grid_n: usize,
    pub newton_tol: f64,
    pub dedup_radius: f64,
    /// Hessian singular when min|λ| < degeneracy · ‖e‖_{C²}.
    pub degeneracy: f64,
    pub max_iter: usize,
}

impl CriticalSearch {
    pub fn new(grid_n: usize, newton_tol: f64) -> Self {
        CriticalSearch { grid_n, newton_tol, dedup_radius: 1e-6, degeneracy: 1e-8, max_iter: 100 }
    }
}

pub fn critical_report(e: &Dispersion, grid_n: usize, newton_tol: f64) -> Result<CriticalReport> {
    critical_report_with(e, &CriticalSearch::new(grid_n, newton_tol))
}

pub(crate) fn hessian_eigenvalues(h: &[Vec<f64>]) -> Vec<f64> {
    let d = h.len();
    let m = Mat::<f64>::from_fn(d, d, |i, j| h[i][j]);
    m.self_adjoint_eigenvalues(Side::Lower).expect("small symmetric eigensolve")
}

pub fn critical_report_with(e: &Dispersion, cfg: &CriticalSearch) -> Result<CriticalReport> {
    if cfg.grid_n == 0 || !(cfg.newton_tol > 0.0) {
        return Err(Error::precondition("critical_report needs grid_n ≥ 1 and newton_tol > 0"));
    }
    let d = e.dim;
    let tol = cfg.newton_tol * e.coefficient_bound(1).max(1.0);
    let c2 = cm_norm(e, 2);
    let degeneracy_tolerance = cfg.degeneracy * c2;
    let h = 2.0 * PI / cfg.grid_n as f64;

    let mut roots: Vec<Vec<f64>> = Vec::new();
    let mut unresolved = 0;
    for seed in grid_points(d, cfg.grid_n) {
        match newton_critical(&e.series, &seed, tol, cfg.max_iter) {
            Some(p) => {
                if !roots.iter().any(|q| torus_distance(q, &p) < cfg.dedup_radius) {
                    roots.push(p);
                }
            }
            None => {
                if cell_brackets(e, &seed, h) {
                    unresolved += 1;
                }
            }
        }
    }

    let mut points: Vec<CriticalPoint> = roots
        .into_iter()
        .map(|p| {
            let (v, _, hess) = e.series.jet(&p);
            let eig = hessian_eigenvalues(&hess);
            let min_abs = eig.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
            let degenerate = c2 == 0.0 || min_abs < degeneracy_tolerance;
            CriticalPoint {
                point: p,
                value: v,
                morse_index: eig.iter().filter(|&&x| x < 0.0).count(),
                curvature: min_abs.sqrt(),
                degenerate,
            }
        })
        .collect();
    points.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| a.point.iter().zip(&b.point).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });

    let mut thresholds: Vec<f64> = Vec::new();
    for p in &points {
        match thresholds.last() {
            Some(&t) if (p.value - t).abs() <= 1e-9 * t.abs().max(1.0) => {}
            _ => thresholds.push(p.value),
        }
    }
    let is_morse = !points.is_empty() && points.iter().all(|p| !p.degenerate);
    let min_curvature = if is_morse {
        points.iter().fold(f64::INFINITY, |m, p| m.min(p.curvature))
    } else {
        0.0
    };
    let euler_sum = points
        .iter()
        .filter(|p| !p.degenerate)
        .map(|p| if p.morse_index % 2 == 0 { 1 } else { -1 })
        .sum();
    let e_min = points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let e_max = points.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(CriticalReport {
        points,
        thresholds,
        is_morse,
        min_curvature,
        e_max,
        e_min,
        euler_sum,
        unresolved_cells: unresolved,
        incomplete: unresolved > 0,
        grid_n: cfg.grid_n,
        gradient_tolerance: tol,
        degeneracy_tolerance,
    })
}

/// Does every gradient component change sign over the cell's corners?
fn cell_brackets(e: &Dispersion, center: &[f64], h: f64) -> bool {
    let d = e.dim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for corner in 0..(1usize << d) {
        let p: Vec<f64> = (0..d)
            .map(|k| center[k] + if corner >> k & 1 == 1 { 0.5 * h } else { -0.5 * h })
            .collect();
        for (k, g) in e.gradient(&p).into_iter().enumerate() {
            lo[k] = lo[k].min(g);
            hi[k] = hi[k].max(g);
        }
    }
    (0..d).all(|k| lo[k] <= 0.0 && hi[k] >= 0.0)
}

/// Condition (M): both e and |∇e|² are Morse functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseCertificate {
    pub dispersion: CriticalReport,
    pub grad_squared: CriticalReport,
    pub certified: bool,
}

/// |∇e|² has twice the range, so it is searched on a grid twice as fine.
pub fn certify_morse(e: &Dispersion, grid_n: usize, newton_tol: f64) -> Result<MorseCertificate> {
    let dispersion = critical_report(e, grid_n, newton_tol)?;
    let grad_squared = critical_report(&e.grad_squared(), 2 * grid_n, newton_tol)?;
    let certified = dispersion.is_morse
        && grad_squared.is_morse
        && !dispersion.incomplete
        && !grad_squared.incomplete;
    Ok(MorseCertificate { dispersion, grad_squared, certified })
}

/// Pair dispersion in centered form. `dispersion(q) = e(q+K/2) + e(K/2−q) − e0`,
/// i.e. e(p) + e(K−p) − e0 = dispersion(p − shift) with shift = K/2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDispersion {
    pub dispersion: Dispersion,
    pub e0: f64,
    pub shift: Vec<f64>,
}

impl PairDispersion {
    /// e(p) + e(K−p) − e0 in the original variable.
    pub fn eval_uncentered(&self, p: &[f64]) -> f64 {
        let q: Vec<f64> = p.iter().zip(&self.shift).map(|(a, s)| a - s).collect();
        self.dispersion.value(&q)
    }
}

/// e(p) + e(K−p) has coefficients ê(m)(1 + e^{−i⟨K,m⟩}); it is real but not
/// even in p. Recentering at K/2 multiplies by e^{i⟨K,m⟩/2}, giving the even
/// real coefficients 2ê(m)cos(⟨K,m⟩/2), which is what is returned.
pub fn pair_dispersion(e: &Dispersion, k: &[f64], newton_tol: f64) -> Result<PairDispersion> {
    if k.len() != e.dim {
        return Err(Error::precondition("quasi-momentum dimension mismatch"));
    }
    let scale = e.coeffs.values().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let mut centered = Vec::with_capacity(e.coeffs.len());
    for (m, &a) in &e.coeffs {
        let km: f64 = m.iter().zip(k).map(|(&x, y)| x as f64 * y).sum();
        // uncentered coefficient, then the recentering phase
        let (s, c) = km.sin_cos();
        let (re, im) = (a * (1.0 + c), -a * s);
        let (ph_s, ph_c) = (0.5 * km).sin_cos();
        let cre = re * ph_c - im * ph_s;
        let cim = re * ph_s + im * ph_c;
        if cim.abs() > 1e-12 * scale {
            return Err(Error::numerical(format!("complex residue {cim} at frequency {m:?}")));
        }
        centered.push((m.clone(), cre));
    }
    let raw = Dispersion::new(e.dim, centered)?;
    let grid_n = (4 * raw.range() + 4).max(8);
    let e0 = if raw.range() == 0 {
        raw.coeff(&vec![0; e.dim])
    } else {
        critical_report(&raw, grid_n, newton_tol)?.e_min
    };
    Ok(PairDispersion {
        dispersion: raw.shifted(-e0),
        e0,
        shift: k.iter().map(|x| 0.5 * x).collect(),
    })
}
