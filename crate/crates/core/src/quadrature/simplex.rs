//! Exact integration of χ/(z − ε) over a simplex on which χ and ε are affine.
//!
//! For affine ε on a d-simplex S with vertex values ε_j and affine χ with
//! vertex values χ_j,
//!     ∫_S χ/(z − ε) = d!|S| Σ_j χ_j F[ε_0,…,ε_d, ε_j],
//! where F is a (d+1)-fold antiderivative of 1/(z − ε) and [·] is the divided
//! difference. With u = z − ε, F_K = α_K u^{K−1} log u, α_K = (−1)^K/(K−1)!.
//! Divided differences of clustered nodes switch to a Taylor expansion about
//! the window midpoint, so nothing cancels catastrophically.

use crate::C64;

const MAX_NODES: usize = 8;
const MAX_TERMS: usize = 400;

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// F^{(q)}(c)/q! for F = F_K and q ≤ K − 1.
fn taylor_coefficient(k: usize, q: usize, u: C64, log_u: C64) -> C64 {
    let n = k - 1;
    debug_assert!(q <= n);
    let alpha = if k % 2 == 0 { 1.0 } else { -1.0 } / factorial(n);
    let sign_q = if q % 2 == 0 { 1.0 } else { -1.0 };
    let c = factorial(n) / factorial(n - q) / factorial(q);
    u.powi((n - q) as i32) * (log_u + harmonic(n) - harmonic(n - q)) * (sign_q * alpha * c)
}

/// Divided difference F_K[x_0,…,x_K] of the canonical antiderivative, for
/// K = nodes.len() − 1 ≥ 1. Nodes need not be distinct.
pub fn resolvent_divided_difference(z: C64, nodes: &[f64]) -> C64 {
    let m = nodes.len();
    assert!((2..=MAX_NODES).contains(&m), "divided difference needs 2..={MAX_NODES} nodes");
    let mut x = [(0.0f64, C64::new(0.0, 0.0)); MAX_NODES];
    for (slot, &v) in x.iter_mut().zip(nodes) {
        *slot = (v, (z - v).ln());
    }
    divided_difference_sorted(z, &mut x[..m])
}

/// As above, with log(z − x) supplied alongside each node.
fn divided_difference_sorted(z: C64, x: &mut [(f64, C64)]) -> C64 {
    let m = x.len();
    let k = m - 1;
    x.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: [f64; MAX_NODES] = std::array::from_fn(|i| if i < m { x[i].0 } else { 0.0 });

    // table[i] holds the divided difference of window [i, i+len]
    let mut table = [C64::new(0.0, 0.0); MAX_NODES];
    for i in 0..m {
        table[i] = taylor_coefficient(k, 0, z - xs[i], x[i].1);
    }
    for len in 1..m {
        for i in 0..m - len {
            let j = i + len;
            let c = 0.5 * (xs[i] + xs[j]);
            let s = 0.5 * (xs[j] - xs[i]);
            let u = z - c;
            let r = u.norm();
            table[i] = if s <= 0.5 * r {
                taylor_window(k, len, u, &xs[i..=j], c, s / r)
            } else {
                (table[i + 1] - table[i]) / (xs[j] - xs[i])
            };
        }
    }
    table[0]
}

/// Σ_t F^{(len+t)}(c)/(len+t)! · h_t(y), y = x − c, h_t complete homogeneous.
/// Terms are formed as (F^{(q)}/q!·r^t)·h_t(y/r) with r = |u|, so the
/// negative powers of a small u never overflow.
fn taylor_window(k: usize, len: usize, u: C64, x: &[f64], c: f64, ratio: f64) -> C64 {
    let r = u.norm();
    let n = k - 1;
    // terms are bounded by binom(t+len, len)·ratio^t relative to the leading one
    let mut t_max = 0;
    if ratio > 0.0 {
        let mut bound = 1.0;
        while t_max < MAX_TERMS {
            t_max += 1;
            bound *= ratio * (t_max + len) as f64 / t_max as f64;
            if bound < 1e-18 {
                break;
            }
        }
    }
    let mut h = vec![0.0f64; t_max + 1];
    h[0] = 1.0;
    for &xi in x {
        let yi = (xi - c) / r;
        for t in 1..=t_max {
            h[t] += yi * h[t - 1];
        }
    }
    let mut acc = C64::new(0.0, 0.0);
    // q = len + t ≤ n: logarithmic terms
    let t_log = (n + 1).saturating_sub(len).min(t_max + 1);
    if t_log > 0 {
        let log_u = u.ln();
        for (t, &ht) in h.iter().enumerate().take(t_log) {
            acc += taylor_coefficient(k, len + t, u, log_u) * (r.powi(t as i32) * ht);
        }
    }
    // q > n: (q−n−1)!/q! · u^{−(q−n)} r^t = (q−n−1)!/q! · (r/u)^t u^{n−len}
    if t_log <= t_max {
        let ru = C64::new(r, 0.0) / u;
        let mut q = len + t_log;
        let mut cq = ((q - n)..=q).fold(1.0, |a, j| a / j as f64);
        let mut p = u.powi(n as i32 - len as i32) * ru.powi(t_log as i32);
        for &ht in &h[t_log..=t_max] {
            acc += p * (cq * ht);
            p *= ru;
            cq *= (q - n) as f64 / (q + 1) as f64;
            q += 1;
        }
    }
    acc
}

/// Kuhn triangulation of a box: d! simplices, vertex lists as corner bitmasks.
pub fn kuhn_simplices(d: usize) -> Vec<Vec<usize>> {
    let mut perms: Vec<Vec<usize>> = vec![vec![]];
    for k in 0..d {
        let mut next = Vec::new();
        for p in &perms {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k);
                next.push(q);
            }
        }
        perms = next;
    }
    perms.sort();
    perms
        .into_iter()
        .map(|perm| {
            let mut mask = 0usize;
            let mut verts = vec![0usize];
            for axis in perm {
                mask |= 1 << axis;
                verts.push(mask);
            }
            verts
        })
        .collect()
}

/// ∫_box χ_lin/(z − ε_lin) with piecewise-affine interpolants on the Kuhn
/// triangulation, given values at the 2^d corners (bit k of the index
/// selects the upper end along axis k).
pub fn box_rule(z: C64, volume: f64, eps: &[f64], chi: &[C64], simplices: &[Vec<usize>]) -> C64 {
    let constant_chi = chi.iter().all(|c| *c == chi[0]);
    let logs: Vec<C64> = eps.iter().map(|&e| (z - e).ln()).collect();
    let mut acc = C64::new(0.0, 0.0);
    let mut nodes = [(0.0f64, C64::new(0.0, 0.0)); MAX_NODES];
    for s in simplices {
        let m = s.len();
        let fill = |nodes: &mut [(f64, C64)]| {
            for (i, &v) in s.iter().enumerate() {
                nodes[i] = (eps[v], logs[v]);
            }
        };
        if constant_chi {
            fill(&mut nodes);
            acc += chi[0] * divided_difference_sorted(z, &mut nodes[..m]);
        } else {
            for &v in s {
                if chi[v] == C64::new(0.0, 0.0) {
                    continue;
                }
                // sorting permutes the buffer, so refill per vertex
                fill(&mut nodes);
                nodes[m] = (eps[v], logs[v]);
                acc += chi[v] * divided_difference_sorted(z, &mut nodes[..m + 1]);
            }
        }
    }
    // d!|S| = volume of the box for each Kuhn simplex
    acc * volume
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_1d;

    #[test]
    fn segment_matches_log_formula() {
        let z = C64::new(0.7, 0.01);
        for (e0, e1) in [(0.0, 1.0), (0.69, 0.71), (0.7, 0.7), (-3.0, 2.0), (0.7000001, 0.7)] {
            let dd = resolvent_divided_difference(z, &[e0, e1]);
            let exact = if e0 == e1 {
                1.0 / (z - e0)
            } else {
                ((z - e0) / (z - e1)).ln() / (e1 - e0)
            };
            assert!((dd - exact).norm() <= 1e-12 * exact.norm(), "{e0} {e1}: {dd} vs {exact}");
        }
    }

    #[test]
    fn weighted_segment_against_quadrature() {
        // ∫_0^1 (1−t) / (z − ε0 − t(ε1−ε0)) dt = F_2[ε0, ε1, ε0]
        let z = C64::new(0.3, 0.05);
        for (e0, e1) in [(0.0, 1.0), (0.29, 0.31), (1.0, -1.0)] {
            let dd = resolvent_divided_difference(z, &[e0, e1, e0]);
            let q = adaptive_1d(|t| C64::new(1.0 - t, 0.0) / (z - e0 - t * (e1 - e0)), 0.0, 1.0, &[], 1e-14, 10_000);
            assert!((dd - q.value).norm() < 1e-11, "{dd} {}", q.value);
        }
    }

    #[test]
    fn triangle_against_nested_quadrature() {
        let z = C64::new(0.4, 0.02);
        let eps = [0.1, 0.9, 0.35];
        let dd = resolvent_divided_difference(z, &eps);
        // reference triangle: d!|S| = 2·(1/2) = 1
        let outer = adaptive_1d(
            |a| {
                let inner = adaptive_1d(
                    |b| C64::new(1.0, 0.0) / (z - (eps[0] + a * (eps[1] - eps[0]) + b * (eps[2] - eps[0]))),
                    0.0,
                    1.0 - a,
                    &[],
                    1e-14,
                    10_000,
                );
                inner.value
            },
            0.0,
            1.0,
            &[],
            1e-13,
            10_000,
        );
        assert!((outer.value - dd).norm() < 1e-9, "{} {}", outer.value, dd);
    }

    #[test]
    fn clustered_nodes_are_stable() {
        let z = C64::new(1.0, 1e-6);
        let a = resolvent_divided_difference(z, &[1.0, 1.0 + 1e-9, 1.0 - 1e-9, 1.0 + 2e-9]);
        let b = resolvent_divided_difference(z, &[1.0, 1.0, 1.0, 1.0]);
        // F_3''' = 1/u, so 4 equal nodes give 1/(3! u)
        assert!((b - 1.0 / (6.0 * (z - 1.0))).norm() < 1e-9 * b.norm());
        assert!((a - b).norm() < 1e-2 * b.norm());
        assert!(a.re.is_finite() && a.im.is_finite());
    }

    #[test]
    fn tiny_imaginary_part_scales() {
        // F_K[λz; λx] = F_K[z; x]/λ: the log λ part is a polynomial of degree K − 1
        let x = [0.0, 0.5, -0.4, 0.1, 0.0];
        let z = C64::new(0.0, 1.0);
        let one = resolvent_divided_difference(z, &x);
        for lambda in [1e-6, 1e-9] {
            let xs: Vec<f64> = x.iter().map(|v| v * lambda).collect();
            let small = resolvent_divided_difference(z * lambda, &xs);
            assert!((small * lambda - one).norm() < 1e-10 * one.norm(), "{lambda}: {small} vs {one}");
        }
    }

    #[test]
    fn partition_of_unity_in_weights() {
        // Σ_j F_{K+1}[x, x_j] = F_K[x]
        let z = C64::new(0.2, 0.3);
        let x = [0.0, 0.5, 0.1, 0.8];
        let lhs: C64 = (0..4)
            .map(|j| {
                let mut n = x.to_vec();
                n.push(x[j]);
                resolvent_divided_difference(z, &n)
            })
            .sum();
        let rhs = resolvent_divided_difference(z, &x);
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
    }

    #[test]
    fn kuhn_counts() {
        assert_eq!(kuhn_simplices(2), vec![vec![0, 1, 3], vec![0, 2, 3]]);
        assert_eq!(kuhn_simplices(3).len(), 6);
    }
}
