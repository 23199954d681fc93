//! Sparse site operators, Lanczos and CG for boxes too large for dense work,
//! and thin wrappers over the dense Hermitian eigensolver.

use faer::{Mat, Side};
use num_complex::ComplexFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::C64;

/// Scalars the iterative solvers run over: f64 or Complex64.
pub trait Scalar: ComplexFloat<Real = f64> + Default + Send + Sync + std::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_c64(self) -> C64;
    fn random(rng: &mut ChaCha8Rng) -> Self;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_c64(self) -> C64 {
        C64::new(self, 0.0)
    }
    fn random(rng: &mut ChaCha8Rng) -> Self {
        rng.gen_range(-1.0..1.0)
    }
}

impl Scalar for C64 {
    fn from_f64(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn to_c64(self) -> C64 {
        self
    }
    fn random(rng: &mut ChaCha8Rng) -> Self {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x.conj() * y)
}

pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.re() * x.re() + x.im() * x.im()).sum::<f64>().sqrt()
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<T> {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Duplicate (row, col) entries are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) out of range {n}");
            if last == Some((i, j)) {
                let k = values.len() - 1;
                values[k] = values[k] + v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Csr { n, indptr, indices, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn apply(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let mut s = T::zero();
            for k in self.indptr[i]..self.indptr[i + 1] {
                s = s + self.values[k] * x[self.indices[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.apply(x, &mut y);
        y
    }

    /// Adds a diagonal (e.g. a sampled potential).
    pub fn with_diagonal(&self, diag: &[f64]) -> Self {
        let mut t: Vec<(usize, usize, T)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push((i, j, v));
            }
            if diag[i] != 0.0 {
                t.push((i, i, T::from_f64(diag[i])));
            }
        }
        Self::from_triplets(self.n, t)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v.to_c64();
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sorted eigenvalues and orthonormal eigenvectors of a Hermitian matrix.
/// Takes the real symmetric path when every entry is real.
pub fn hermitian_eigen(m: &Mat<C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let real = (0..n).all(|j| (0..n).all(|i| m[(i, j)].im == 0.0));
    if real {
        let r = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)].re);
        let evd = r
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::numerical(format!("eigensolver failed: {e:?}")))?;
        let vals: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
        let u = evd.U();
        Ok((vals, Mat::<C64>::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0))))
    } else {
        let evd = m
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::numerical(format!("eigensolver failed: {e:?}")))?;
        let vals: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i].re).collect();
        Ok((vals, evd.U().to_owned()))
    }
}

pub fn hermitian_eigenvalues(m: &Mat<C64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let real = (0..n).all(|j| (0..n).all(|i| m[(i, j)].im == 0.0));
    let mut v = if real {
        let r = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)].re);
        r.self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::numerical(format!("eigensolver failed: {e:?}")))?
    } else {
        m.self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::numerical(format!("eigensolver failed: {e:?}")))?
    };
    v.sort_by(f64::total_cmp);
    Ok(v)
}

#[derive(Clone, Debug)]
pub struct EigenPair<T> {
    pub value: f64,
    pub vector: Vec<T>,
    /// ‖Hv − λv‖ with ‖v‖ = 1
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct LanczosOutcome<T> {
    pub pairs: Vec<EigenPair<T>>,
    pub iterations: usize,
    pub converged: bool,
}

/// All eigenpairs of a Hermitian operator below `below`, by Lanczos with full
/// reorthogonalization. Convergence: every Ritz value below `below + gap_probe`
/// has residual bound ≤ tol·‖H‖ and their count is stable across checks.
pub fn lanczos_below<T, F>(
    n: usize,
    apply: F,
    below: f64,
    norm_estimate: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> LanczosOutcome<T>
where
    T: Scalar,
    F: Fn(&[T], &mut [T]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<T> = (0..n).map(|_| T::random(&mut rng)).collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|x| *x = *x / T::from_f64(nq));
    let mut basis: Vec<Vec<T>> = vec![q];
    let (mut alpha, mut beta): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut w = vec![T::zero(); n];
    let scale = norm_estimate.max(1e-300);
    let mut last_count = usize::MAX;
    let mut stable = 0;
    let max_iter = max_iter.min(n);
    let mut converged = false;
    let mut ritz: (Vec<f64>, Mat<f64>) = (Vec::new(), Mat::zeros(0, 0));

    for j in 0..max_iter {
        apply(&basis[j], &mut w);
        let a = dot(&basis[j], &w).re();
        alpha.push(a);
        // full reorthogonalization, twice is enough
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
        }
        let bnorm = norm(&w);
        let exhausted = bnorm <= 1e-13 * scale || j + 1 == max_iter;
        if (j + 1) % 10 == 0 || exhausted {
            ritz = tridiagonal_eigen(&alpha, &beta);
            let m = alpha.len();
            let mut count = 0;
            let mut all_ok = true;
            for (i, &theta) in ritz.0.iter().enumerate() {
                if theta < below {
                    count += 1;
                    if bnorm * ritz.1[(m - 1, i)].abs() > tol * scale {
                        all_ok = false;
                    }
                }
            }
            if all_ok && count == last_count {
                stable += 1;
            } else {
                stable = 0;
            }
            last_count = count;
            if (stable >= 2 && j >= 30) || bnorm <= 1e-13 * scale {
                converged = all_ok;
                break;
            }
        }
        if exhausted {
            break;
        }
        beta.push(bnorm);
        let next: Vec<T> = w.iter().map(|&x| x / T::from_f64(bnorm)).collect();
        basis.push(next);
    }
    let m = alpha.len();
    basis.truncate(m);
    let mut pairs = Vec::new();
    for (i, &theta) in ritz.0.iter().enumerate() {
        if theta >= below {
            continue;
        }
        let mut v = vec![T::zero(); n];
        for (k, b) in basis.iter().enumerate() {
            axpy(T::from_f64(ritz.1[(k, i)]), b, &mut v);
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x = *x / T::from_f64(nv));
        let mut hv = vec![T::zero(); n];
        apply(&v, &mut hv);
        axpy(T::from_f64(-theta), &v, &mut hv);
        pairs.push(EigenPair { value: theta, vector: v, residual: norm(&hv) });
    }
    LanczosOutcome { pairs, iterations: m, converged }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Mat<f64>) {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let evd = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigensolve");
    let vals = (0..m).map(|i| evd.S().column_vector()[i]).collect();
    (vals, evd.U().to_owned())
}

#[derive(Clone, Debug)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for a Hermitian positive definite operator.
pub fn conjugate_gradient<T, F>(apply: F, b: &[T], tol: f64, max_iter: usize) -> CgOutcome<T>
where
    T: Scalar,
    F: Fn(&[T], &mut [T]),
{
    let n = b.len();
    let bn = norm(b);
    let mut x = vec![T::zero(); n];
    if bn == 0.0 {
        return CgOutcome { x, iterations: 0, relative_residual: 0.0 };
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r).re();
    let mut it = 0;
    while it < max_iter && rr.sqrt() > tol * bn {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap).re();
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        axpy(T::from_f64(a), &p, &mut x);
        axpy(T::from_f64(-a), &ap, &mut r);
        let rr_new = dot(&r, &r).re();
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + T::from_f64(beta) * *pi;
        }
        rr = rr_new;
        it += 1;
    }
    // true residual
    apply(&x, &mut ap);
    let res: Vec<T> = b.iter().zip(&ap).map(|(&bi, &ai)| bi - ai).collect();
    CgOutcome { x, iterations: it, relative_residual: norm(&res) / bn }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> Csr<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, t)
    }

    #[test]
    fn csr_sums_duplicates() {
        let a = Csr::from_triplets(2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 3.0]);
    }

    #[test]
    fn dense_eigen_tridiagonal() {
        let a = path_laplacian(3).to_dense();
        let (v, _) = hermitian_eigen(&a).unwrap();
        let s = 2f64.sqrt();
        for (x, y) in v.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn lanczos_finds_low_modes() {
        // eigenvalues 2 − 2cos(kπ/(n+1))
        let n = 200;
        let a = path_laplacian(n);
        let out = lanczos_below(n, |x: &[f64], y: &mut [f64]| a.apply(x, y), 0.01, 4.0, 1e-10, 400, 7);
        let exact: Vec<f64> = (1..=n)
            .map(|k| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .filter(|&l| l < 0.01)
            .collect();
        assert!(out.converged);
        assert_eq!(out.pairs.len(), exact.len());
        for (p, l) in out.pairs.iter().zip(&exact) {
            assert!((p.value - l).abs() < 1e-9, "{} vs {}", p.value, l);
            assert!(p.residual < 1e-8);
        }
    }

    #[test]
    fn cg_complex_shifted() {
        let n = 50;
        let a = path_laplacian(n);
        let op = |x: &[C64], y: &mut [C64]| {
            for i in 0..n {
                let mut s = C64::new(2.0 + 0.5, 0.0) * x[i];
                if i > 0 {
                    s -= x[i - 1];
                }
                if i + 1 < n {
                    s -= x[i + 1];
                }
                y[i] = s;
            }
        };
        let _ = a;
        let mut b = vec![C64::new(0.0, 0.0); n];
        b[3] = C64::new(1.0, -2.0);
        let out = conjugate_gradient(op, &b, 1e-13, 500);
        assert!(out.relative_residual < 1e-12);
    }
}
