use serde::{Deserialize, Serialize};

/// Every tolerance used by the toolkit, in one place. Reports echo the record they ran with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// ‖M − M*‖_max ≤ hermiticity · ‖M‖_max.
    pub hermiticity: f64,
    /// Per-pair eigen residual, relative to ‖M‖.
    pub eig_residual: f64,
    /// Sign cutoff for negative-eigenvalue counting, relative to ‖M‖.
    pub count: f64,
    /// Gradient tolerance for critical-point Newton iterations.
    pub newton: f64,
    /// Torus distance below which two critical points are merged.
    pub dedup_radius: f64,
    /// Hessian singular when min|λ| < morse · ‖e‖_{C²}.
    pub morse: f64,
    /// Fraction of ‖ψ‖² near the boundary above which a vector is unreliable.
    pub boundary_mass: f64,
    /// Relative residual for linear solves.
    pub solve_residual: f64,
    /// Embedded-candidate margin, relative to e_max.
    pub band_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hermiticity: 1e-12,
            eig_residual: 1e-10,
            count: 1e-10,
            newton: 1e-12,
            dedup_radius: 1e-6,
            morse: 1e-8,
            boundary_mass: 0.01,
            solve_residual: 1e-10,
            band_margin: 1e-6,
        }
    }
}
