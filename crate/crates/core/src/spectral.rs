//! Eigen-analysis on boxes: classification against [e_min, e_max] and the
//! thresholds, negative counts, the trace identity for i[V,A], Virial
//! residuals and Mourre compressions.

use faer::Mat;
use serde::Serialize;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::lattice::{
    commutator_ha, commutator_va_factors, hamiltonian, hamiltonian_sparse, hopping_sparse, BoxLattice,
    CommutatorFactors, HermitianOperator, Potential,
};
use crate::linalg::{hermitian_eigen, hermitian_eigenvalues, lanczos_below, Csr};
use crate::torus::{grid_points, CriticalReport, Dispersion};
use crate::C64;

#[derive(Clone, Debug)]
pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal columns; each column's first entry above 1e−10 in modulus is real positive.
    pub vectors: Mat<C64>,
    pub max_residual: f64,
    pub norm: f64,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        (0..self.vectors.nrows()).map(|i| self.vectors[(i, k)]).collect()
    }
}

/// Full dense decomposition, rejected when some ‖Mv − λv‖ exceeds tol·‖M‖.
pub fn eigendecompose(m: &HermitianOperator, tol: &Tolerances) -> Result<Eigen> {
    let (values, mut vectors) = hermitian_eigen(m.entries())?;
    let n = values.len();
    for k in 0..n {
        let mut phase = C64::new(1.0, 0.0);
        for i in 0..n {
            let c = vectors[(i, k)];
            if c.norm() > 1e-10 {
                phase = c.conj() / c.norm();
                break;
            }
        }
        for i in 0..n {
            vectors[(i, k)] *= phase;
        }
    }
    let norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mv = m.entries() * &vectors;
    let mut max_residual = 0.0f64;
    for k in 0..n {
        let r: f64 = (0..n).map(|i| (mv[(i, k)] - vectors[(i, k)] * values[k]).norm_sqr()).sum::<f64>().sqrt();
        max_residual = max_residual.max(r);
    }
    if max_residual > tol.eig_residual * norm.max(f64::MIN_POSITIVE) && max_residual > 0.0 {
        return Err(Error::numerical(format!(
            "eigendecomposition of {} rejected: residual {max_residual:e} > {:e}·‖M‖",
            m.label(),
            tol.eig_residual
        )));
    }
    Ok(Eigen { values, vectors, max_residual, norm })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddedCandidate {
    pub value: f64,
    pub dist_to_thr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub e_min: f64,
    pub e_max: f64,
    pub thresholds: Vec<f64>,
    /// Eigenvalues below e_min − δ or above e_max + δ.
    pub discrete: usize,
    /// Eigenvalues inside (e_min + δ, e_max − δ).
    pub embedded: Vec<EmbeddedCandidate>,
    /// Eigenvalues within δ of the band edges.
    pub edge: usize,
    pub margin: f64,
}

/// Partition eigenvalues against the band [e_min, e_max] of the critical report
/// with margin δ = band_margin·e_max.
pub fn classify(eigs: &[f64], crit: &CriticalReport, tol: &Tolerances) -> SpectralReport {
    let mut eigenvalues = eigs.to_vec();
    eigenvalues.sort_by(f64::total_cmp);
    let delta = tol.band_margin * crit.e_max.abs().max(crit.e_min.abs()).max(f64::MIN_POSITIVE);
    let (lo, hi) = (crit.e_min, crit.e_max);
    let mut discrete = 0;
    let mut edge = 0;
    let mut embedded = Vec::new();
    for &v in &eigenvalues {
        if v < lo - delta || v > hi + delta {
            discrete += 1;
        } else if v < lo + delta || v > hi - delta {
            edge += 1;
        } else {
            let dist = crit.thresholds.iter().map(|t| (v - t).abs()).fold(f64::INFINITY, f64::min);
            embedded.push(EmbeddedCandidate { value: v, dist_to_thr: dist });
        }
    }
    SpectralReport {
        eigenvalues,
        e_min: lo,
        e_max: hi,
        thresholds: crit.thresholds.clone(),
        discrete,
        embedded,
        edge,
        margin: delta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NegativeCount {
    /// Eigenvalues < −rel_tol·‖M‖.
    pub count: usize,
    /// Eigenvalues in [−rel_tol·‖M‖, 0).
    pub ambiguous: usize,
    pub norm: f64,
    pub rel_tol: f64,
    /// Most negative eigenvalue above the cutoff and least negative below it.
    pub margin_below: Option<f64>,
    pub margin_above: Option<f64>,
}

fn count_from_eigenvalues(ev: &[f64], rel_tol: f64) -> NegativeCount {
    let norm = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = -rel_tol * norm;
    let count = ev.iter().filter(|&&v| v < cut).count();
    let ambiguous = ev.iter().filter(|&&v| v >= cut && v < 0.0).count();
    NegativeCount {
        count,
        ambiguous,
        norm,
        rel_tol,
        margin_below: ev.iter().copied().filter(|&v| v < cut).reduce(f64::max),
        margin_above: ev.iter().copied().filter(|&v| v >= cut).reduce(f64::min),
    }
}

pub fn count_negative(m: &HermitianOperator, rel_tol: f64) -> Result<NegativeCount> {
    if !(rel_tol > 0.0) {
        return Err(Error::precondition("rel_tol must be positive"));
    }
    Ok(count_from_eigenvalues(&hermitian_eigenvalues(m.entries())?, rel_tol))
}

/// Nonzero spectrum of i[V,A] = U C U*, U = [δ_x | g_x], C = [[0, iV], [−iV, 0]],
/// from the 2k×2k matrix G^{1/2} C G^{1/2}, G = U*U.
pub fn commutator_spectrum(f: &CommutatorFactors) -> Result<Vec<f64>> {
    let k = f.sites.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let col = |a: usize| -> Vec<(usize, C64)> {
        if a < k {
            vec![(f.sites[a], C64::new(1.0, 0.0))]
        } else {
            f.g[a - k].clone()
        }
    };
    let cols: Vec<Vec<(usize, C64)>> = (0..2 * k).map(col).collect();
    let inner = |a: &[(usize, C64)], b: &[(usize, C64)]| -> C64 {
        let mut s = C64::new(0.0, 0.0);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1.conj() * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    };
    let g = Mat::<C64>::from_fn(2 * k, 2 * k, |a, b| inner(&cols[a], &cols[b]));
    let (gv, gq) = hermitian_eigen(&g)?;
    let sqrt = Mat::<C64>::from_fn(2 * k, 2 * k, |a, b| {
        (0..2 * k).map(|t| gq[(a, t)] * gv[t].max(0.0).sqrt() * gq[(b, t)].conj()).sum()
    });
    let i = C64::new(0.0, 1.0);
    let c = Mat::<C64>::from_fn(2 * k, 2 * k, |a, b| {
        if a < k && b == a + k {
            i * f.values[a]
        } else if a >= k && b + k == a {
            -i * f.values[b]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let mut m = &sqrt * &c * &sqrt;
    // symmetrize rounding
    let n = 2 * k;
    for a in 0..n {
        for b in 0..a {
            let avg = 0.5 * (m[(a, b)] + m[(b, a)].conj());
            m[(a, b)] = avg;
            m[(b, a)] = avg.conj();
        }
        m[(a, a)] = C64::new(m[(a, a)].re, 0.0);
    }
    hermitian_eigenvalues(&m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceIdentityReport {
    pub count: usize,
    pub support: usize,
    #[serde(rename = "match")]
    pub matches: bool,
    /// (λ, count of i[λV, A]) for λ ∈ {0.1, 1, 10}
    pub scaled_counts: Vec<(f64, usize)>,
    pub lambda_invariant: bool,
    pub detail: NegativeCount,
    /// Every support site has its g_x entirely inside the box.
    pub interior: bool,
}

/// Tr E_−(i[V,A]) against |supp V|, and its invariance under V → λV.
pub fn verify_trace_identity(v: &Potential, e: &Dispersion, b: &BoxLattice, tol: &Tolerances) -> Result<TraceIdentityReport> {
    let supp = v.support().ok_or_else(|| Error::precondition("trace identity needs a finite-support V"))?;
    if let Some((x, _)) = supp.iter().find(|(x, _)| !b.contains(x)) {
        return Err(Error::precondition(format!("support site {x:?} lies outside the box")));
    }
    let interior = supp.iter().all(|(x, _)| b.boundary_distance(x) >= e.range());
    let f = commutator_va_factors(v, e, b)?;
    let detail = count_from_eigenvalues(&commutator_spectrum(&f)?, tol.count);
    let mut scaled_counts = Vec::new();
    for lambda in [0.1, 1.0, 10.0] {
        let fl = CommutatorFactors { values: f.values.iter().map(|x| lambda * x).collect(), ..f.clone() };
        scaled_counts.push((lambda, count_from_eigenvalues(&commutator_spectrum(&fl)?, tol.count).count));
    }
    let lambda_invariant = scaled_counts.iter().all(|(_, c)| *c == detail.count);
    Ok(TraceIdentityReport {
        count: detail.count,
        support: supp.len(),
        matches: detail.count == supp.len(),
        scaled_counts,
        lambda_invariant,
        detail,
        interior,
    })
}

/// Fraction of ‖ψ‖² on sites within range(e) of the boundary.
pub fn boundary_mass(psi: &[C64], b: &BoxLattice, range: usize) -> f64 {
    let total: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let near: f64 = b
        .sites()
        .zip(psi)
        .filter(|(x, _)| b.boundary_distance(x) < range.max(1))
        .map(|(_, c)| c.norm_sqr())
        .sum();
    if total > 0.0 {
        near / total
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EigSelector {
    /// k-th lowest eigenvector (dense decomposition).
    Index(usize),
    /// Every eigenvector below e_min, by Lanczos on the sparse Hamiltonian.
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VirialRow {
    pub eigenvalue: f64,
    /// ⟨ψ, i[V2,A]ψ⟩
    pub lhs: f64,
    /// −⟨ψ, i[H(e,V1),A]ψ⟩
    pub rhs: f64,
    pub residual: f64,
    pub imag_max: f64,
    pub boundary_mass: f64,
    pub reliable: bool,
    pub eig_residual: f64,
}

fn real_quadratic(h: &Csr<f64>, psi: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for (i, p) in psi.iter().enumerate() {
        let hp: C64 = h.row(i).map(|(j, v)| psi[j] * v).sum();
        s += p.conj() * hp;
    }
    s
}

/// Virial balance ⟨ψ, i[V2,A]ψ⟩ = −⟨ψ, i[H(e,V1),A]ψ⟩ for eigenvectors of
/// H(e, V1 + V2) on the box.
pub fn virial_residual(
    e: &Dispersion,
    v1: &Potential,
    v2: &Potential,
    b: &BoxLattice,
    which: EigSelector,
    e_min: f64,
    tol: &Tolerances,
) -> Result<Vec<VirialRow>> {
    let v = v1.restricted_to(b).plus(&v2.restricted_to(b))?;
    let pairs: Vec<(f64, Vec<C64>, f64)> = match which {
        EigSelector::Index(k) => {
            if b.len() > 4096 {
                return Err(Error::precondition("indexed eigenvector selection is dense; box has more than 4096 sites"));
            }
            let eig = eigendecompose(&hamiltonian(e, &v, b)?, tol)?;
            if k >= eig.values.len() {
                return Err(Error::precondition(format!("eigenvector index {k} out of range")));
            }
            vec![(eig.values[k], eig.vector(k), eig.max_residual)]
        }
        EigSelector::Discrete => {
            let h = hamiltonian_sparse(e, &v, b)?;
            let norm_est = (0..h.n()).map(|i| h.row(i).map(|(_, x)| x.abs()).sum::<f64>()).fold(0.0, f64::max);
            let out = lanczos_below::<f64, _>(h.n(), |x, y| h.apply(x, y), e_min, norm_est, 1e-12, 2000, 7);
            if !out.converged {
                return Err(Error::numerical("Lanczos did not converge for the discrete eigenvectors"));
            }
            out.pairs
                .into_iter()
                .map(|p| (p.value, p.vector.iter().map(|&x| C64::new(x, 0.0)).collect(), p.residual))
                .collect()
        }
    };
    let f1 = commutator_va_factors(v1, e, b)?;
    let f2 = commutator_va_factors(v2, e, b)?;
    let w = hopping_sparse(&e.grad_squared(), b)?;
    let mut rows = Vec::new();
    for (value, psi, eres) in pairs {
        let lhs = f2.quadratic_form(&psi);
        let rhs = -(real_quadratic(&w, &psi) + f1.quadratic_form(&psi));
        let bm = boundary_mass(&psi, b, e.range());
        rows.push(VirialRow {
            eigenvalue: value,
            lhs: lhs.re,
            rhs: rhs.re,
            residual: (lhs.re - rhs.re).abs(),
            imag_max: lhs.im.abs().max(rhs.im.abs()),
            boundary_mass: bm,
            reliable: bm < tol.boundary_mass,
            eig_residual: eres,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MourreReport {
    pub window: [f64; 2],
    /// min{|∇e(p)|² : e(p) ∈ window} over the search grid.
    pub c_delta: f64,
    pub compression_eigenvalues: Vec<f64>,
    /// Compression eigenvalues below c_Δ − tol.
    pub below_floor: usize,
    pub window_dim: usize,
    pub dist_to_thresholds: f64,
    pub floor_tol: f64,
}

/// min of |∇e|² over {p : e(p) ∈ [a, b]} on an n^d grid (None if the band is empty).
pub fn band_floor(e: &Dispersion, window: [f64; 2], n: usize) -> Option<f64> {
    let w = e.grad_squared();
    let mut best: Option<f64> = None;
    for p in grid_points(e.dim(), n) {
        let v = e.value(&p);
        if v >= window[0] && v <= window[1] {
            let g = w.value(&p);
            best = Some(best.map_or(g, |b: f64| b.min(g)));
        }
    }
    best
}

/// Spectrum of E_Δ i[H,A] E_Δ restricted to Ran E_Δ, with i[H,A] the
/// compression of |∇e|² plus i[V,A].
pub fn mourre_compression(
    e: &Dispersion,
    v: &Potential,
    window: [f64; 2],
    b: &BoxLattice,
    crit: &CriticalReport,
    tol: &Tolerances,
) -> Result<MourreReport> {
    if !(window[0] < window[1]) {
        return Err(Error::precondition("Mourre window must satisfy a < b"));
    }
    let dist = crit
        .thresholds
        .iter()
        .map(|&t| {
            if t >= window[0] && t <= window[1] {
                0.0
            } else {
                (t - window[0]).abs().min((t - window[1]).abs())
            }
        })
        .fold(f64::INFINITY, f64::min);
    if dist <= 0.0 {
        return Err(Error::precondition("Mourre window contains a threshold of e"));
    }
    let grid = match e.dim() {
        1 => 4096,
        2 => 256,
        3 => 48,
        _ => 16,
    };
    let c_delta = band_floor(e, window, grid).unwrap_or(f64::INFINITY);
    let eig = eigendecompose(&hamiltonian(e, v, b)?, tol)?;
    let idx: Vec<usize> = (0..eig.values.len()).filter(|&k| eig.values[k] >= window[0] && eig.values[k] <= window[1]).collect();
    let floor_tol = 10.0 * tol.eig_residual * eig.norm.max(1.0);
    if idx.is_empty() {
        return Ok(MourreReport {
            window,
            c_delta,
            compression_eigenvalues: Vec::new(),
            below_floor: 0,
            window_dim: 0,
            dist_to_thresholds: dist,
            floor_tol,
        });
    }
    let mut m = commutator_ha(e, b)?.entries().to_owned();
    let f = commutator_va_factors(v, e, b)?;
    if !f.sites.is_empty() {
        m += f.to_dense();
    }
    let q = Mat::<C64>::from_fn(b.len(), idx.len(), |i, j| eig.vectors[(i, idx[j])]);
    let mut comp = q.adjoint() * &m * &q;
    let k = idx.len();
    for a in 0..k {
        for c in 0..a {
            let avg = 0.5 * (comp[(a, c)] + comp[(c, a)].conj());
            comp[(a, c)] = avg;
            comp[(c, a)] = avg.conj();
        }
        comp[(a, a)] = C64::new(comp[(a, a)].re, 0.0);
    }
    let ev = hermitian_eigenvalues(&comp)?;
    let below_floor = ev.iter().filter(|&&x| x < c_delta - floor_tol).count();
    Ok(MourreReport {
        window,
        c_delta,
        compression_eigenvalues: ev,
        below_floor,
        window_dim: k,
        dist_to_thresholds: dist,
        floor_tol,
    })
}
