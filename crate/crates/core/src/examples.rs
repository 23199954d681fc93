//! The two closed-form eigenpairs: ψ = (1+|x|)^{−(d+1)/2} with the potential
//! that makes it an eigenvector of h(e_emb) + V, and the zero-energy threshold
//! state ψ = G (the lattice Green function of e_Lapl) with a single-site well.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{cube, shell_of};
use crate::lattice::{euclidean_norm, hamiltonian, BoxLattice, Potential};
use crate::linalg::hermitian_eigenvalues;
use crate::quadrature::{lapl_green_function, lapl_green_origin, IntegralResult};
use crate::spectral::boundary_mass;
use crate::torus::Dispersion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleFamily {
    Embedded,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PsiRule {
    /// (1 + |x|)^{−exponent}
    Power { exponent: f64 },
    /// G(x) = ∫ e^{ipx}/e_Lapl(p) dμ, evaluated by the heat kernel.
    LaplGreen,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleInstance {
    pub family: ExampleFamily,
    pub dispersion: Dispersion,
    pub potential: Potential,
    pub psi: PsiRule,
    #[serde(rename = "E")]
    pub energy: f64,
    /// ∫ dμ/e_Lapl by cubature (threshold family only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_quadrature: Option<IntegralResult>,
}

impl ExampleInstance {
    pub fn dim(&self) -> usize {
        self.dispersion.dim()
    }

    /// ψ sampled on the box, in box order.
    pub fn psi_on_box(&self, b: &BoxLattice) -> Result<Vec<f64>> {
        if b.dim != self.dim() {
            return Err(Error::precondition("box and example dimensions differ"));
        }
        match self.psi {
            PsiRule::Power { exponent } => Ok(b.sites().map(|x| (1.0 + euclidean_norm(&x)).powf(-exponent)).collect()),
            PsiRule::LaplGreen => {
                let g = lapl_green_function(self.dim(), b.half_width as u32)?;
                Ok(b.sites().map(|x| g(&x)).collect())
            }
        }
    }
}

/// The literal construction at E = 3d/2.
pub fn embedded_example(d: usize) -> Result<ExampleInstance> {
    embedded_example_at(d, 1.5 * d as f64)
}

/// ψ = (1+|x|)^{−(d+1)/2}, V = −[(h(e_emb) − E)ψ]/ψ.
pub fn embedded_example_at(d: usize, energy: f64) -> Result<ExampleInstance> {
    if d == 0 {
        return Err(Error::precondition("dimension must be at least 1"));
    }
    if !energy.is_finite() {
        return Err(Error::precondition("energy must be finite"));
    }
    Ok(ExampleInstance {
        family: ExampleFamily::Embedded,
        dispersion: Dispersion::embedded(d),
        potential: Potential::embedded(d, energy),
        psi: PsiRule::Power { exponent: (d as f64 + 1.0) / 2.0 },
        energy,
        origin_quadrature: None,
    })
}

/// V = −δ_0/G(0), ψ = G, E = 0; G(0) from direct cubature.
pub fn threshold_example(d: usize) -> Result<ExampleInstance> {
    if d < 5 {
        return Err(Error::precondition(format!("the threshold state is square-summable only for d ≥ 5 (got d = {d})")));
    }
    let q = lapl_green_origin(d, 1e-9)?;
    if !q.converged {
        return Err(Error::numerical(format!(
            "∫ dμ/e_Lapl did not converge (error estimate {:e})",
            q.abs_error_estimate
        )));
    }
    Ok(ExampleInstance {
        family: ExampleFamily::Threshold,
        dispersion: Dispersion::laplacian(d),
        potential: Potential::single_site(d, vec![0; d], -1.0 / q.value.re)?,
        psi: PsiRule::LaplGreen,
        energy: 0.0,
        origin_quadrature: Some(q),
    })
}

/// ((h(e) + V − E)ψ)(x) on the box with ψ = 0 outside, without forming H.
pub fn box_residual(e: &Dispersion, v: &Potential, energy: f64, b: &BoxLattice, psi: &[f64]) -> Result<Vec<f64>> {
    if psi.len() != b.len() || e.dim() != b.dim {
        return Err(Error::precondition("ψ, dispersion and box are inconsistent"));
    }
    let d = b.dim;
    let side = b.side() as i64;
    let l = b.half_width as i64;
    let stencil: Vec<(Vec<i64>, i64, f64)> = e
        .coeffs()
        .iter()
        .map(|(m, &c)| {
            let m: Vec<i64> = m.iter().map(|&v| v as i64).collect();
            let off = m.iter().fold(0i64, |acc, &v| acc * side + v);
            (m, off, c)
        })
        .collect();
    let mut out = vec![0.0; b.len()];
    let mut x = vec![0i64; d];
    for (i, o) in out.iter_mut().enumerate() {
        let mut r = i as i64;
        for k in (0..d).rev() {
            x[k] = r % side - l;
            r /= side;
        }
        // (hψ)(x) = Σ_m ê(m) ψ(x − m)
        let mut acc = 0.0;
        for (m, off, c) in &stencil {
            if x.iter().zip(m).all(|(a, s)| (a - s).abs() <= l) {
                acc += c * psi[(i as i64 - off) as usize];
            }
        }
        let xs: Vec<i32> = x.iter().map(|&a| a as i32).collect();
        *o = acc + (v.value(&xs) - energy) * psi[i];
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub half_width: usize,
    /// ‖(H − E)ψ‖ over sites at distance ≥ range(e) from the boundary, / ‖ψ‖.
    pub interior_residual: f64,
    /// ‖(H_box − E)ψ‖/‖ψ‖.
    pub full_residual: f64,
    pub boundary_mass: f64,
    /// min |λ − E| over the boxed spectrum; computed only for boxes up to
    /// `DENSE_LIMIT` sites (the full residual bounds it in any case).
    pub nearest_eig_dist: Option<f64>,
}

pub const DENSE_LIMIT: usize = 2500;

pub fn verify_example(inst: &ExampleInstance, b: &BoxLattice) -> Result<ResidualReport> {
    let range = inst.dispersion.range();
    if b.half_width < range {
        return Err(Error::precondition(format!(
            "box half-width {} leaves no interior site for a stencil of range {range}",
            b.half_width
        )));
    }
    let psi = inst.psi_on_box(b)?;
    let res = box_residual(&inst.dispersion, &inst.potential, inst.energy, b, &psi)?;
    let norm = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut interior, mut full) = (0.0, 0.0);
    for (x, r) in b.sites().zip(&res) {
        full += r * r;
        if b.boundary_distance(&x) >= range {
            interior += r * r;
        }
    }
    let psi_c: Vec<crate::C64> = psi.iter().map(|&v| crate::C64::new(v, 0.0)).collect();
    let nearest_eig_dist = if b.len() <= DENSE_LIMIT {
        let ev = hermitian_eigenvalues(hamiltonian(&inst.dispersion, &inst.potential, b)?.entries())?;
        ev.iter().map(|l| (l - inst.energy).abs()).reduce(f64::min)
    } else {
        None
    };
    Ok(ResidualReport {
        half_width: b.half_width,
        interior_residual: interior.sqrt() / norm,
        full_residual: full.sqrt() / norm,
        boundary_mass: boundary_mass(&psi_c, b, range),
        nearest_eig_dist,
    })
}

pub fn verify_sweep(inst: &ExampleInstance, half_widths: &[usize]) -> Result<Vec<ResidualReport>> {
    half_widths.iter().map(|&l| verify_example(inst, &BoxLattice::new(inst.dim(), l)?)).collect()
}

pub fn write_residual_csv<W: Write>(rows: &[ResidualReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "l,interior_residual,full_residual,boundary_mass,nearest_eig_dist")?;
    for r in rows {
        let near = r.nearest_eig_dist.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(w, "{},{:e},{:e},{:e},{}", r.half_width, r.interior_residual, r.full_residual, r.boundary_mass, near)?;
    }
    Ok(())
}

/// (R, max over the shell R−1 < |x| ≤ R of |V(x)|·|x|²) for R in `radii`.
pub fn shell_decay(v: &Potential, radii: &[u32]) -> Vec<(u32, f64)> {
    let Some(&r_max) = radii.iter().max() else { return Vec::new() };
    let mut best = vec![0.0f64; r_max as usize + 1];
    for x in cube(v.dim(), r_max as i32) {
        let s = shell_of(&x);
        if s <= r_max {
            let r2: f64 = x.iter().map(|&c| (c as f64).powi(2)).sum();
            let slot = &mut best[s as usize];
            *slot = slot.max(v.value(&x).abs() * r2);
        }
    }
    radii.iter().map(|&r| (r, best[r as usize])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::hamiltonian_sparse;

    #[test]
    fn embedded_identity_holds_in_the_interior() {
        for d in 1..=3 {
            let inst = embedded_example(d).unwrap();
            assert_eq!(inst.energy, 1.5 * d as f64);
            assert!(inst.energy > 0.0 && inst.energy < 4.5 * d as f64);
            let l = [12, 8, 5][d - 1];
            let r = verify_example(&inst, &BoxLattice::new(d, l).unwrap()).unwrap();
            assert!(r.interior_residual < 1e-13, "d={d}: {r:?}");
            assert!(r.full_residual > 1e-6);
        }
    }

    #[test]
    fn matrix_free_residual_matches_sparse_product() {
        let inst = embedded_example(2).unwrap();
        let b = BoxLattice::new(2, 6).unwrap();
        let psi = inst.psi_on_box(&b).unwrap();
        let h = hamiltonian_sparse(&inst.dispersion, &inst.potential, &b).unwrap();
        let hpsi = h.mul_vec(&psi);
        let res = box_residual(&inst.dispersion, &inst.potential, inst.energy, &b, &psi).unwrap();
        for i in 0..b.len() {
            assert!((hpsi[i] - inst.energy * psi[i] - res[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn literal_energy_potential_tends_to_d() {
        // e(0) = d/2, so V → E − d/2 far out
        let inst = embedded_example(3).unwrap();
        let far = inst.potential.value(&[60, 0, 0]);
        assert!((far - 3.0).abs() < 0.05, "{far}");
        let at = embedded_example_at(3, 1.5).unwrap();
        let rows = shell_decay(&at.potential, &[5, 10, 20, 40]);
        let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.1), b.max(r.1)));
        assert!(hi / lo < 2.0, "{rows:?}");
    }

    #[test]
    fn residual_decreases_and_box_eigenvalue_approaches() {
        let inst = embedded_example(1).unwrap();
        let rows = verify_sweep(&inst, &[20, 80, 320]).unwrap();
        assert!(rows.windows(2).all(|w| w[1].full_residual < w[0].full_residual));
        for r in &rows {
            assert!(r.nearest_eig_dist.unwrap() <= r.full_residual * (1.0 + 1e-12));
        }
        let mut csv = Vec::new();
        write_residual_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("l,interior_residual,full_residual,boundary_mass,nearest_eig_dist\n20,"));
    }

    #[test]
    fn threshold_guards_and_shape() {
        assert!(threshold_example(4).is_err());
        let inst = threshold_example(5).unwrap();
        let supp = inst.potential.support().unwrap();
        assert_eq!(supp.len(), 1);
        assert!(supp[0].1 < 0.0 && supp[0].0 == vec![0; 5]);
        let b = BoxLattice::new(5, 2).unwrap();
        let psi = inst.psi_on_box(&b).unwrap();
        let g0 = inst.origin_quadrature.unwrap().value.re;
        assert!((psi[b.origin()] - g0).abs() < 1e-6 && g0 > 0.0);
        let json = serde_json::to_value(&inst).unwrap();
        assert_eq!(json["family"], "threshold");
        assert_eq!(json["E"], 0.0);
    }
}
