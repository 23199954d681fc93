//! Scans of |integral|/envelope as Im z ↓ 0, the falsification surface for
//! the uniform bounds on the model and torus integrals.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::model::{c1_norm, ModelDomain};
use crate::quadrature::{
    model_integral_l1, model_integral_l2, model_integral_l3, singular_torus_integral, ModelFunction, ModelOptions,
    TorusIntegralOptions,
};
use crate::torus::Dispersion;
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ScanKind {
    L1,
    L2,
    L3 { m: usize },
    Torus,
}

/// What is integrated: a model function on a ball/slab, or χ against a dispersion.
pub enum ScanTarget<'a> {
    Model(&'a dyn ModelFunction),
    Torus {
        e: &'a Dispersion,
        chi: &'a dyn Fn(&[f64]) -> C64,
        /// ‖χ‖_{C²}; estimated on a grid when absent.
        chi_c2: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions {
    pub model: ModelOptions,
    pub torus_tol: f64,
    /// Grid points per axis for the C¹/C² envelopes.
    pub envelope_grid: usize,
}

impl Default for ScanOptions {
    /// Scans look for growth, not digits. The cell-difference estimate of the
    /// torus rule overstates the actual error by 10–100× near regular level
    /// sets, so a nominal 3e-2 still resolves values to about 1%.
    fn default() -> Self {
        ScanOptions { model: ModelOptions { abs_tol: 1e-6, ..Default::default() }, torus_tol: 3e-2, envelope_grid: 21 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub a: f64,
    pub b: f64,
    pub abs_value: f64,
    pub envelope: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundScan {
    pub kind: ScanKind,
    pub rows: Vec<ScanRow>,
    pub sup_ratio: f64,
    pub blowup_flag: bool,
}

impl BoundScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "a,b,abs_value,envelope,ratio")?;
        for r in &self.rows {
            writeln!(w, "{:e},{:e},{:e},{:e},{:e}", r.a, r.b, r.abs_value, r.envelope, r.ratio)?;
        }
        Ok(())
    }
}

/// sup over derivatives of order ≤ 2 of χ, by central differences on a grid.
pub fn c2_norm_on_torus(chi: &dyn Fn(&[f64]) -> C64, d: usize, n: usize) -> f64 {
    let h = 1e-4;
    let total = n.pow(d as u32);
    let mut p = vec![0.0; d];
    let mut best = 0.0f64;
    for mut idx in 0..total {
        for k in (0..d).rev() {
            p[k] = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (idx % n) as f64 / n as f64;
            idx /= n;
        }
        let f0 = chi(&p);
        best = best.max(f0.norm());
        let mut q = p.clone();
        for i in 0..d {
            for j in i..d {
                let mut at = |si: f64, sj: f64| {
                    q.copy_from_slice(&p);
                    q[i] += si * h;
                    q[j] += sj * h;
                    chi(&q)
                };
                let dij = if i == j {
                    (at(1.0, 0.0) - 2.0 * f0 + at(-1.0, 0.0)) / (h * h)
                } else {
                    (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
                };
                best = best.max(dij.norm());
            }
            let mut at = |s: f64| {
                q.copy_from_slice(&p);
                q[i] += s * h;
                chi(&q)
            };
            best = best.max(((at(1.0) - at(-1.0)) / (2.0 * h)).norm());
        }
    }
    best
}

/// Growth rule: along decreasing b, ratios over the last two decades of the
/// schedule (b ≤ 100·b_min) are nondecreasing and grow by more than 2×.
fn blowup(rows: &[&ScanRow]) -> bool {
    let Some(b_min) = rows.iter().map(|r| r.b.abs()).reduce(f64::min) else { return false };
    let mut tail: Vec<&&ScanRow> = rows.iter().filter(|r| r.b.abs() <= 100.0 * b_min * (1.0 + 1e-12)).collect();
    tail.sort_by(|x, y| y.b.abs().total_cmp(&x.b.abs()));
    if tail.len() < 2 {
        return false;
    }
    let monotone = tail.windows(2).all(|w| w[1].ratio >= w[0].ratio);
    let first = tail[0].ratio;
    let last = tail[tail.len() - 1].ratio;
    monotone && last > 2.0 * first
}

/// Ratios |I(a, b)|/envelope over a × b; model envelopes are ‖f‖_{C¹}(1+a²+b²),
/// the torus envelope is ‖χ‖_{C²}. For L1 the a-grid is ignored.
pub fn uniform_bound_scan(
    kind: ScanKind,
    target: ScanTarget<'_>,
    a_grid: &[f64],
    b_schedule: &[f64],
    opts: &ScanOptions,
) -> Result<BoundScan> {
    if b_schedule.is_empty() || b_schedule.iter().any(|b| *b == 0.0 || !b.is_finite()) {
        return Err(Error::precondition("b schedule must be nonempty with finite nonzero entries"));
    }
    let a_values: Vec<f64> = if kind == ScanKind::L1 { vec![0.0] } else { a_grid.to_vec() };
    if a_values.is_empty() {
        return Err(Error::precondition("empty a grid"));
    }
    let mut rows = Vec::new();
    match (kind, target) {
        (ScanKind::Torus, ScanTarget::Torus { e, chi, chi_c2 }) => {
            let env = chi_c2.unwrap_or_else(|| c2_norm_on_torus(chi, e.dim(), opts.envelope_grid.min(16)));
            let topts = TorusIntegralOptions::new(opts.torus_tol);
            for &a in &a_values {
                for &b in b_schedule {
                    let r = singular_torus_integral(chi, e, C64::new(a, b), &topts)?;
                    if !r.converged {
                        return Err(Error::numerical(format!("torus integral at z = {a}{b:+}i did not converge")));
                    }
                    let v = r.value.norm();
                    rows.push(ScanRow { a, b, abs_value: v, envelope: env, ratio: if env > 0.0 { v / env } else { 0.0 } });
                }
            }
        }
        (ScanKind::Torus, ScanTarget::Model(_)) | (_, ScanTarget::Torus { .. }) => {
            return Err(Error::precondition("scan kind and target disagree (torus scans need a dispersion)"));
        }
        (kind, ScanTarget::Model(f)) => {
            let domain = match kind {
                ScanKind::L1 => ModelDomain::Slab,
                ScanKind::L2 => ModelDomain::Ball,
                ScanKind::L3 { m } => ModelDomain::BallProduct(m),
                ScanKind::Torus => unreachable!(),
            };
            let c1 = c1_norm(f, domain, opts.model.r, opts.envelope_grid);
            for &a in &a_values {
                for &b in b_schedule {
                    let v = match kind {
                        ScanKind::L1 => model_integral_l1(f, b, &opts.model)?,
                        ScanKind::L2 => model_integral_l2(f, a, b, &opts.model)?,
                        ScanKind::L3 { m } => model_integral_l3(f, a, b, m, &opts.model)?,
                        ScanKind::Torus => unreachable!(),
                    }
                    .norm();
                    let env = c1 * (1.0 + a * a + b * b);
                    rows.push(ScanRow { a, b, abs_value: v, envelope: env, ratio: if env > 0.0 { v / env } else { 0.0 } });
                }
            }
        }
    }
    let sup_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let blowup_flag = a_values.iter().any(|&a| {
        let per_a: Vec<&ScanRow> = rows.iter().filter(|r| r.a == a).collect();
        blowup(&per_a)
    });
    Ok(BoundScan { kind, rows, sup_ratio, blowup_flag })
}
