//! Decay functionals Φ_{m,n}(V) = (Σ_x |V(x)|^{1/m}(|x|+1)^n)^m and the
//! support-minimization bound on the number of eigenvalues.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{euclidean_norm, Family, Potential, Site};

/// Φ_{m,n} of finitely many (site, value) pairs.
pub fn phi_finite<'a>(values: impl IntoIterator<Item = (&'a [i32], f64)>, m: u32, n: u32) -> f64 {
    let s: f64 = values
        .into_iter()
        .map(|(x, v)| v.abs().powf(1.0 / m as f64) * (euclidean_norm(x) + 1.0).powi(n as i32))
        .sum();
    s.powi(m as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiValue {
    pub m: u32,
    pub n: u32,
    /// +∞ when `divergent`.
    pub value: f64,
    pub divergent: bool,
    /// (shell radius k, Σ over |x| ≤ k of the summand) — before the m-th power.
    pub partial_sums: Vec<(u32, f64)>,
}

/// Shell k holds the sites with k − 1 < |x| ≤ k; shell 0 is the origin.
pub(crate) fn shell_of(x: &[i32]) -> u32 {
    let r2: i64 = x.iter().map(|&v| v as i64 * v as i64).sum();
    let mut k = (r2 as f64).sqrt().ceil() as i64;
    // exact integer correction of the float ceiling
    while k > 0 && (k - 1) * (k - 1) >= r2 {
        k -= 1;
    }
    while k * k < r2 {
        k += 1;
    }
    k as u32
}

pub(crate) fn cube(dim: usize, r: i32) -> impl Iterator<Item = Site> {
    let side = (2 * r + 1) as usize;
    (0..side.pow(dim as u32)).map(move |mut i| {
        let mut x = vec![0; dim];
        for c in x.iter_mut().rev() {
            *c = (i % side) as i32 - r;
            i /= side;
        }
        x
    })
}

/// Φ_{m,n}(V). Finite support is summed exactly; closed forms are summed
/// shell by shell up to `radius` and flagged divergent when the last five
/// shell contributions are positive and nondecreasing, or when a power law
/// (1+|x|)^{−β} has summands ~|x|^α with α = n − β/m ≥ −d.
pub fn phi(v: &Potential, m: u32, n: u32, radius: Option<f64>) -> Result<PhiValue> {
    if m == 0 {
        return Err(Error::precondition("Φ_{m,n} needs m ≥ 1"));
    }
    let d = v.dim();
    let term = |x: &[i32], val: f64| val.abs().powf(1.0 / m as f64) * (euclidean_norm(x) + 1.0).powi(n as i32);
    let (sites, limit): (Vec<(Site, f64)>, Option<u32>) = match v.support() {
        Some(s) => (s, None),
        None => {
            let (_, trunc) = v.family().expect("closed form");
            let r = match (radius, trunc) {
                (Some(r), Some(t)) => r.min(t),
                (Some(r), None) => r,
                (None, Some(t)) => t,
                (None, None) => {
                    return Err(Error::precondition("Φ of a closed-form potential needs a summation radius"))
                }
            };
            if !(r >= 0.0) || r > 1e4 {
                return Err(Error::precondition("summation radius must lie in [0, 1e4]"));
            }
            let ri = r.floor() as i32;
            let sites = cube(d, ri).filter(|x| euclidean_norm(x) <= r).map(|x| {
                let val = v.value(&x);
                (x, val)
            });
            (sites.collect(), Some(r.floor() as u32))
        }
    };
    let max_shell = sites.iter().map(|(x, _)| shell_of(x)).max().unwrap_or(0).max(limit.unwrap_or(0));
    let mut shells = vec![0.0; max_shell as usize + 1];
    for (x, val) in &sites {
        shells[shell_of(x) as usize] += term(x, *val);
    }
    let mut partial_sums = Vec::with_capacity(shells.len());
    let mut acc = 0.0;
    for (k, c) in shells.iter().enumerate() {
        acc += c;
        partial_sums.push((k as u32, acc));
    }
    let mut divergent = false;
    if limit.is_some() {
        let (family, trunc) = v.family().expect("closed form");
        let truncated_inside = trunc.is_some_and(|t| radius.map_or(true, |r| t <= r));
        if !truncated_inside {
            if shells.len() >= 5 {
                let tail = &shells[shells.len() - 5..];
                divergent = tail.iter().all(|c| *c > 0.0) && tail.windows(2).all(|w| w[1] >= w[0]);
            }
            if let Family::PowerLaw { amplitude, exponent } = family {
                if *amplitude != 0.0 && n as f64 - exponent / m as f64 >= -(d as f64) {
                    divergent = true;
                }
            }
        }
    }
    let value = if divergent { f64::INFINITY } else { acc.powi(m as i32) };
    Ok(PhiValue { m, n, value, divergent, partial_sums })
}

/// V^{(z)}(x) = V(z + x).
pub fn translate(v: &Potential, z: &[i32]) -> Potential {
    v.translate(z)
}

/// The finitely many nonzero values of V, enumerating a truncated closed form.
fn finite_view(v: &Potential) -> Result<Vec<(Site, f64)>> {
    if let Some(s) = v.support() {
        return Ok(s);
    }
    match v.family() {
        Some((_, Some(t))) => {
            let r = t.floor() as i32;
            Ok(cube(v.dim(), r).filter_map(|x| {
                let val = v.value(&x);
                (val != 0.0).then_some((x, val))
            })
            .collect())
        }
        _ => Err(Error::precondition("the support bound needs finite support or a truncated closed form")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightRow {
    pub site: Site,
    pub value: f64,
    /// |V^{(z)}(x)|^{1/2}(|x|+1)³
    pub weight: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub threshold: f64,
    pub best_z: Site,
    /// Kept sites, in translated coordinates.
    pub support_set: Vec<Site>,
    /// Φ_{2,3} of V^{(z)} off the kept set.
    pub excluded_phi: f64,
    pub bound: usize,
    pub search_window: i32,
    /// Sorted weight table at best_z, heaviest first.
    pub weights: Vec<WeightRow>,
}

impl BoundCertificate {
    /// Φ_{2,3} of V^{(best_z)} with the kept sites removed, recomputed from scratch.
    pub fn revalidate(&self, v: &Potential) -> Result<f64> {
        let t = finite_view(&translate(v, &self.best_z))?;
        let off: Vec<(Site, f64)> = t.into_iter().filter(|(x, _)| !self.support_set.contains(x)).collect();
        Ok(phi_finite(off.iter().map(|(x, val)| (x.as_slice(), *val)), 2, 3))
    }

    pub fn write_weights_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.best_z.len();
        let head: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        writeln!(w, "rank,{},value,weight,kept", head.join(","))?;
        for (i, r) in self.weights.iter().enumerate() {
            let xs: Vec<String> = r.site.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{i},{},{:e},{:e},{}", xs.join(","), r.value, r.weight, r.kept)?;
        }
        Ok(())
    }
}

fn weight(x: &[i32], v: f64) -> f64 {
    v.abs().sqrt() * (euclidean_norm(x) + 1.0).powi(3)
}

/// Minimal kept set at a fixed translation: weights sorted descending (ties in
/// lexicographic site order), shortest prefix whose complement has Φ_{2,3} < c.
fn greedy_at(sites: &[(Site, f64)], c: f64, z: &[i32]) -> (usize, f64, Vec<WeightRow>) {
    let mut rows: Vec<WeightRow> = sites
        .iter()
        .map(|(x, v)| {
            let y: Site = x.iter().zip(z).map(|(a, b)| a - b).collect();
            WeightRow { weight: weight(&y, *v), site: y, value: *v, kept: false }
        })
        .collect();
    rows.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.site.cmp(&b.site)));
    let mut suffix = vec![0.0; rows.len() + 1];
    for i in (0..rows.len()).rev() {
        suffix[i] = suffix[i + 1] + rows[i].weight;
    }
    let k = (0..=rows.len()).find(|&k| suffix[k] * suffix[k] < c).unwrap_or(rows.len());
    for r in rows.iter_mut().take(k) {
        r.kept = true;
    }
    (k, suffix[k] * suffix[k], rows)
}

/// Default z-window: max-norm diameter of the support plus 2.
pub fn default_z_window(v: &Potential) -> Result<i32> {
    let s = finite_view(v)?;
    let d = v.dim();
    let diam = (0..d)
        .map(|k| {
            let lo = s.iter().map(|(x, _)| x[k]).min().unwrap_or(0);
            let hi = s.iter().map(|(x, _)| x[k]).max().unwrap_or(0);
            hi - lo
        })
        .max()
        .unwrap_or(0);
    Ok(diam + 2)
}

/// min over |z|_∞ ≤ window of the smallest |S| with Φ_{2,3}(V^{(z)} − V^{(z)}1_S) < c.
/// Ties go to the smallest Euclidean |z|, then lexicographic z.
pub fn min_support_bound(v: &Potential, c: f64, z_window: i32) -> Result<BoundCertificate> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::precondition("threshold c must be a positive finite number"));
    }
    if z_window < 0 {
        return Err(Error::precondition("z-window radius must be ≥ 0"));
    }
    let sites = finite_view(v)?;
    let mut best: Option<(usize, f64, Site, f64, Vec<WeightRow>)> = None;
    for z in cube(v.dim(), z_window) {
        let (k, excluded, rows) = greedy_at(&sites, c, &z);
        let zn = euclidean_norm(&z);
        let better = match &best {
            None => true,
            Some((bk, bn, bz, _, _)) => k.cmp(bk).then(zn.total_cmp(bn)).then_with(|| z.cmp(bz)).is_lt(),
        };
        if better {
            best = Some((k, zn, z, excluded, rows));
        }
    }
    let (k, _, z, excluded, rows) = best.expect("window contains z = 0");
    let support_set = rows.iter().filter(|r| r.kept).map(|r| r.site.clone()).collect();
    Ok(BoundCertificate {
        threshold: c,
        best_z: z,
        support_set,
        excluded_phi: excluded,
        bound: k,
        search_window: z_window,
        weights: rows,
    })
}

/// Exhaustive search over kept subsets at a fixed z.
pub fn brute_force_min_support(v: &Potential, c: f64, z: &[i32]) -> Result<usize> {
    let sites = finite_view(v)?;
    if sites.len() > 20 {
        return Err(Error::precondition("brute force limited to |supp V| ≤ 20"));
    }
    let w: Vec<f64> = sites
        .iter()
        .map(|(x, val)| {
            let y: Site = x.iter().zip(z).map(|(a, b)| a - b).collect();
            weight(&y, *val)
        })
        .collect();
    let n = w.len();
    let mut best = n;
    for mask in 0u32..(1 << n) {
        let kept = mask.count_ones() as usize;
        if kept >= best {
            continue;
        }
        let excluded: f64 = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| w[i]).sum();
        if excluded * excluded < c {
            best = kept;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsenceVerdict {
    pub certified: bool,
    pub bound: Option<usize>,
    pub discrete_eigenvalues: usize,
    pub reason: String,
}

/// No embedded eigenvalues when the support bound allows at most N
/// eigenvalues and N discrete ones are observed.
pub fn embedded_absence_check(v: &Potential, n: usize, c: f64, discrete_eigenvalues: usize) -> Result<AbsenceVerdict> {
    let inconclusive = |reason: String, bound| AbsenceVerdict { certified: false, bound, discrete_eigenvalues, reason };
    if finite_view(v).is_err() {
        let p = phi(v, 2, 3, Some(40.0))?;
        let why = if p.divergent { "Φ_{2,3}(V) = ∞" } else { "closed form without truncation" };
        return Ok(inconclusive(why.to_string(), None));
    }
    let cert = min_support_bound(v, c, default_z_window(v)?)?;
    if cert.bound > n {
        return Ok(inconclusive(format!("support bound {} exceeds N = {n}", cert.bound), Some(cert.bound)));
    }
    if discrete_eigenvalues < n {
        return Ok(inconclusive(
            format!("only {discrete_eigenvalues} discrete eigenvalues observed, N = {n}"),
            Some(cert.bound),
        ));
    }
    Ok(AbsenceVerdict {
        certified: true,
        bound: Some(cert.bound),
        discrete_eigenvalues,
        reason: format!("N_pp ≤ {} ≤ N = {n} and {discrete_eigenvalues} discrete eigenvalues exist", cert.bound),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fin(d: usize, s: &[(&[i32], f64)]) -> Potential {
        Potential::finite(d, s.iter().map(|(x, v)| (x.to_vec(), *v))).unwrap()
    }

    #[test]
    fn phi_examples() {
        let v = fin(3, &[(&[0, 0, 0], -2.5)]);
        for (m, n) in [(1, 0), (2, 3), (3, 1)] {
            assert!((phi(&v, m, n, None).unwrap().value - 2.5).abs() < 1e-12);
        }
        let v = fin(3, &[(&[0, 0, 0], 1.0), (&[1, 0, 0], 1.0)]);
        assert_eq!(phi(&v, 2, 3, None).unwrap().value, 81.0);
        let far = fin(3, &[(&[3, 0, 0], 1.0)]);
        assert_eq!(phi(&far, 2, 3, None).unwrap().value, 4096.0);
        assert_eq!(phi(&translate(&far, &[3, 0, 0]), 2, 3, None).unwrap().value, 1.0);
        assert!(phi(&v, 0, 3, None).is_err());
    }

    #[test]
    fn shells_are_exact() {
        assert_eq!(shell_of(&[0, 0]), 0);
        assert_eq!(shell_of(&[1, 0]), 1);
        assert_eq!(shell_of(&[1, 1]), 2);
        assert_eq!(shell_of(&[3, 4]), 5);
        assert_eq!(shell_of(&[3, 3]), 5);
    }

    #[test]
    fn divergence_detection() {
        // embedded-type potential: no decay at all for E ≠ e(0)
        let p = phi(&Potential::embedded(3, 4.5), 2, 3, Some(20.0)).unwrap();
        assert!(p.divergent && p.value.is_infinite());
        // the decaying choice still diverges for Φ_{2,3}: |V|^{1/2}|x|³ ~ |x|²
        let p = phi(&Potential::embedded(3, 1.5), 2, 3, Some(20.0)).unwrap();
        assert!(p.divergent);
        // fast power law converges: n − β/m = 3 − 24/2 = −9 < −3
        let p = phi(&Potential::power_law(3, 1.0, 24.0), 2, 3, Some(20.0)).unwrap();
        assert!(!p.divergent && p.value.is_finite());
        // slow power law: 3 − 10/2 = −2 ≥ −3
        let p = phi(&Potential::power_law(3, 1.0, 10.0), 2, 3, Some(20.0)).unwrap();
        assert!(p.divergent);
        // a truncated closed form is a finite sum
        let p = phi(&Potential::embedded(3, 4.5).with_truncation(3.0), 2, 3, Some(20.0)).unwrap();
        assert!(!p.divergent);
        assert!(phi(&Potential::power_law(3, 1.0, 24.0), 2, 3, None).is_err());
    }

    #[test]
    fn bound_example_weights() {
        // values chosen so the weights |V|^{1/2}(|x|+1)³ are 10, 5, 1, 0.5
        let sites = [(0i32, 10.0f64), (1, 5.0), (2, 1.0), (3, 0.5)];
        let v = Potential::finite(
            1,
            sites.iter().map(|&(x, w)| (vec![x], (w / ((x as f64).abs() + 1.0).powi(3)).powi(2))),
        )
        .unwrap();
        let cert = min_support_bound(&v, 4.0, 0).unwrap();
        assert_eq!(cert.bound, 2);
        assert!((cert.excluded_phi - 2.25).abs() < 1e-12);
        assert_eq!(brute_force_min_support(&v, 4.0, &[0]).unwrap(), 2);
        assert!((cert.revalidate(&v).unwrap() - cert.excluded_phi).abs() < 1e-12);
        let total = phi(&v, 2, 3, None).unwrap().value;
        assert_eq!(min_support_bound(&v, total * 1.01, 0).unwrap().bound, 0);
        let mut csv = Vec::new();
        cert.write_weights_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("rank,x0,value,weight,kept"));
    }

    #[test]
    fn recentering_single_site() {
        let v = fin(2, &[(&[4, -3], 0.5)]);
        let cert = min_support_bound(&v, 0.6, 4).unwrap();
        assert_eq!(cert.bound, 0);
        assert_eq!(cert.best_z, vec![4, -3]);
        // the origin would need the site kept
        assert_eq!(min_support_bound(&v, 0.6, 0).unwrap().bound, 1);
        assert_eq!(brute_force_min_support(&Potential::zero(2), 1.0, &[0, 0]).unwrap(), 0);
        assert!(min_support_bound(&v, 0.0, 1).is_err());
    }

    #[test]
    fn absence_verdicts() {
        let v = fin(3, &[(&[0, 0, 0], -3.0), (&[1, 0, 0], -2.0)]);
        let ok = embedded_absence_check(&v, 2, 0.5, 2).unwrap();
        assert!(ok.certified);
        assert!(!embedded_absence_check(&v, 2, 0.5, 1).unwrap().certified);
        let emb = embedded_absence_check(&Potential::embedded(3, 4.5), 0, 0.5, 0).unwrap();
        assert!(!emb.certified);
        assert!(emb.reason.contains('∞'));
    }

    fn potential_strategy() -> impl Strategy<Value = Potential> {
        prop::collection::vec(((-3i32..=3, -3i32..=3), -5.0f64..5.0), 0..8).prop_map(|v| {
            Potential::finite(2, v.into_iter().map(|((a, b), x)| (vec![a, b], x))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn phi_scales_and_is_monotone(v in potential_strategy(), lambda in -4.0f64..4.0, t in 0.0f64..1.0) {
            let p = phi(&v, 2, 3, None).unwrap().value;
            let q = phi(&v.scaled(lambda), 2, 3, None).unwrap().value;
            prop_assert!((q - lambda.abs() * p).abs() <= 1e-12 * (1.0 + q.abs()));
            let smaller = phi(&v.scaled(t), 1, 2, None).unwrap().value;
            prop_assert!(smaller <= phi(&v, 1, 2, None).unwrap().value * (1.0 + 1e-12));
        }

        #[test]
        fn greedy_equals_brute_force(v in potential_strategy(), c in 0.01f64..100.0, z in (-2i32..=2, -2i32..=2)) {
            let zz = [z.0, z.1];
            let (k, excluded, _) = greedy_at(&finite_view(&v).unwrap(), c, &zz);
            prop_assert_eq!(k, brute_force_min_support(&v, c, &zz).unwrap());
            prop_assert!(excluded < c);
            let a = brute_force_min_support(&v, c, &zz).unwrap();
            let b = brute_force_min_support(&v, 2.0 * c, &zz).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn translation_preserves_support(v in potential_strategy(), z in (-5i32..=5, -5i32..=5)) {
            prop_assert_eq!(translate(&v, &[z.0, z.1]).support_size(), v.support_size());
            prop_assert_eq!(translate(&v, &[0, 0]), v.clone());
        }
    }
}
