use lattice_schrodinger::examples::{box_residual, embedded_example};
use lattice_schrodinger::lattice::{
    commutator_va, conjugate_operator, hamiltonian, hopping_matrix, BoxLattice, HermitianOperator, Potential,
};
use lattice_schrodinger::quadrature::{resolvent_kernel, singular_torus_integral, ResolventOptions, TorusIntegralOptions};
use lattice_schrodinger::spectral::{count_negative, eigendecompose, verify_trace_identity};
use lattice_schrodinger::torus::Dispersion;
use lattice_schrodinger::{Tolerances, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dispersion(d: usize, emb: bool) -> Dispersion {
    if emb {
        Dispersion::embedded(d)
    } else {
        Dispersion::laplacian(d)
    }
}

fn random_potential(seed: u64, d: usize, radius: usize) -> Potential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 1 + (seed % 4) as usize;
    Potential::random(&mut rng, d, k, radius, 3.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operators_are_hermitian(seed in 0u64..1000, d in 1usize..=2, emb in any::<bool>()) {
        let e = dispersion(d, emb);
        let b = BoxLattice::new(d, 4).unwrap();
        let v = random_potential(seed, d, 2);
        let ops: [HermitianOperator; 4] = [
            hopping_matrix(&e, &b).unwrap(),
            conjugate_operator(&e, &b).unwrap(),
            commutator_va(&v, &e, &b).unwrap(),
            hamiltonian(&e, &v, &b).unwrap(),
        ];
        for op in &ops {
            prop_assert!(op.hermiticity_defect() <= 1e-12 * op.max_abs().max(1.0), "{}", op.label());
        }
    }

    #[test]
    fn hopping_is_toeplitz(d in 1usize..=2, emb in any::<bool>()) {
        let e = dispersion(d, emb);
        let b = BoxLattice::new(d, 3).unwrap();
        let h = hopping_matrix(&e, &b).unwrap();
        let o = b.origin();
        for i in 0..b.len() {
            for j in 0..b.len() {
                let (x, y) = (b.site(i), b.site(j));
                let diff: Vec<i32> = x.iter().zip(&y).map(|(a, c)| a - c).collect();
                if let Some(k) = b.index(&diff) {
                    prop_assert_eq!(h.entry(i, j), h.entry(k, o));
                }
            }
        }
    }

    #[test]
    fn negative_count_is_scale_invariant(seed in 0u64..1000, lambda in 0.01f64..100.0) {
        let e = Dispersion::laplacian(2);
        let b = BoxLattice::new(2, 5).unwrap();
        let m = commutator_va(&random_potential(seed, 2, 2), &e, &b).unwrap();
        let tol = Tolerances::default().count;
        prop_assert_eq!(count_negative(&m, tol).unwrap().count, count_negative(&m.scaled(lambda), tol).unwrap().count);
    }

    #[test]
    fn trace_identity_on_interior_support(seed in 0u64..1000, d in 1usize..=3) {
        let e = Dispersion::laplacian(d);
        let b = BoxLattice::new(d, 5).unwrap();
        let v = random_potential(seed, d, 2);
        let r = verify_trace_identity(&v, &e, &b, &Tolerances::default()).unwrap();
        prop_assert!(r.matches);
        prop_assert_eq!(r.count, v.support_size().unwrap());
    }

    #[test]
    fn eigendecomposition_reconstructs(seed in 0u64..1000) {
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 3).unwrap();
        let h = hamiltonian(&e, &random_potential(seed, 2, 2), &b).unwrap();
        let eig = eigendecompose(&h, &Tolerances::default()).unwrap();
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        let q = &eig.vectors;
        let n = b.len();
        let mut worst_rec = 0.0f64;
        let mut worst_orth = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let rec: C64 = (0..n).map(|k| q[(i, k)] * eig.values[k] * q[(j, k)].conj()).sum();
                worst_rec = worst_rec.max((rec - h.entry(i, j)).norm());
                let g: C64 = (0..n).map(|k| q[(k, i)].conj() * q[(k, j)]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst_orth = worst_orth.max((g - want).norm());
            }
        }
        prop_assert!(worst_rec <= 1e-9 * h.max_abs());
        prop_assert!(worst_orth <= 1e-10);
    }

    #[test]
    fn torus_integral_respects_distance_bound(re in -6.0f64..10.0, im in 0.3f64..3.0, sign in any::<bool>()) {
        // |∫ χ/(z − e)| ≤ sup|χ| / dist(z, [0, 4d]) for χ = 1
        let e = Dispersion::laplacian(2);
        let z = C64::new(re, if sign { im } else { -im });
        let r = singular_torus_integral(|_: &[f64]| C64::new(1.0, 0.0), &e, z, &TorusIntegralOptions::new(1e-8)).unwrap();
        let dist = if re < 0.0 { z.norm() } else if re > 8.0 { (z - 8.0).norm() } else { im };
        prop_assert!(r.value.norm() <= 1.0 / dist + 1e-8);
        let rc = singular_torus_integral(|_: &[f64]| C64::new(1.0, 0.0), &e, z.conj(), &TorusIntegralOptions::new(1e-8)).unwrap();
        prop_assert!((rc.value - r.value.conj()).norm() < 1e-7);
    }

    #[test]
    fn green_function_is_symmetric(seed in 0u64..1000, re in -1.0f64..9.0) {
        let e = Dispersion::laplacian(2);
        let b = BoxLattice::new(2, 6).unwrap();
        let v = random_potential(seed, 2, 2);
        let z = C64::new(re, 0.7);
        let opts = ResolventOptions { override_guard: true, ..Default::default() };
        let (x, y) = (vec![1, -2], vec![-3, 0]);
        let gxy = resolvent_kernel(&e, &v, z, &x, &y, &b, &opts).unwrap();
        let gyx = resolvent_kernel(&e, &v, z, &y, &x, &b, &opts).unwrap();
        prop_assert!((gxy - gyx).norm() < 1e-8 * gxy.norm().max(1e-12));
    }
}

#[test]
fn embedded_identity_on_interior_sites() {
    for d in 1..=3 {
        let inst = embedded_example(d).unwrap();
        let b = BoxLattice::new(d, 8).unwrap();
        let psi = inst.psi_on_box(&b).unwrap();
        let res = box_residual(&inst.dispersion, &inst.potential, inst.energy, &b, &psi).unwrap();
        let range = inst.dispersion.range();
        for (i, x) in b.sites().enumerate() {
            if b.boundary_distance(&x) >= range {
                assert!(res[i].abs() <= 1e-12 * psi[i].abs().max(1e-300), "d={d} x={x:?}: {}", res[i]);
            }
        }
    }
}
