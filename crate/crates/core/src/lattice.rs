//! Box truncations of ℤ^d and the operators built on them: h(e), V, H, the
//! conjugate operator A and the commutators i[V,A], i[h,A].

use std::collections::BTreeMap;

use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::Csr;
use crate::quadrature::{adaptive_cubature, CubatureOptions};
use crate::torus::Dispersion;
use crate::C64;

pub type Site = Vec<i32>;

pub fn euclidean_norm(x: &[i32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

fn norm_sq(x: &[i32]) -> i64 {
    x.iter().map(|&v| v as i64 * v as i64).sum()
}

/// {−ℓ,…,ℓ}^d with lexicographic site enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxLattice {
    pub dim: usize,
    pub half_width: usize,
}

impl BoxLattice {
    pub fn new(dim: usize, half_width: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::precondition("box dimension must be positive"));
        }
        let side = 2 * half_width + 1;
        if side.checked_pow(dim as u32).is_none() {
            return Err(Error::precondition("box too large to enumerate"));
        }
        Ok(BoxLattice { dim, half_width })
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn site(&self, mut i: usize) -> Site {
        let s = self.side();
        let mut x = vec![0; self.dim];
        for k in (0..self.dim).rev() {
            x[k] = (i % s) as i32 - self.half_width as i32;
            i /= s;
        }
        x
    }

    pub fn index(&self, x: &[i32]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let l = self.half_width as i32;
        let s = self.side();
        let mut i = 0;
        for &v in x {
            if v < -l || v > l {
                return None;
            }
            i = i * s + (v + l) as usize;
        }
        Some(i)
    }

    pub fn contains(&self, x: &[i32]) -> bool {
        self.index(x).is_some()
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.dim]).expect("origin is in every box")
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(|i| self.site(i))
    }

    /// ℓ − |x|_∞: 0 on the outer layer.
    pub fn boundary_distance(&self, x: &[i32]) -> usize {
        let m = x.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0);
        self.half_width.saturating_sub(m)
    }

    /// Sites whose distance from the boundary exceeds `margin`.
    pub fn is_interior(&self, x: &[i32], margin: usize) -> bool {
        self.boundary_distance(x) > margin
    }
}

/// Closed-form potential families.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// amplitude · (1 + |x|)^{−exponent}
    PowerLaw { amplitude: f64, exponent: f64 },
    /// −[(h(e) − E)ψ](x)/ψ(x) with ψ = (1+|x|)^{−(d+1)/2} and e the embedded
    /// dispersion; `stencil` holds its coefficients.
    Embedded { energy: f64, stencil: Vec<(Site, f64)> },
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Finite(BTreeMap<Site, f64>),
    Family {
        family: Family,
        /// V^{(z)}(x) = V(z + x) is stored as an offset z.
        offset: Site,
        scale: f64,
        /// sites with Euclidean |x| > truncation read as 0
        truncation: Option<f64>,
    },
}

/// Real site potential: finitely supported or a closed-form rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub struct Potential {
    dim: usize,
    kind: Kind,
}

impl Potential {
    pub fn zero(dim: usize) -> Self {
        Potential { dim, kind: Kind::Finite(BTreeMap::new()) }
    }

    /// Zero values are dropped; repeated sites accumulate.
    pub fn finite(dim: usize, values: impl IntoIterator<Item = (Site, f64)>) -> Result<Self> {
        let mut map: BTreeMap<Site, f64> = BTreeMap::new();
        for (x, v) in values {
            if x.len() != dim {
                return Err(Error::precondition(format!("site {x:?} does not have dimension {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::precondition(format!("non-finite potential value at {x:?}")));
            }
            *map.entry(x).or_insert(0.0) += v;
        }
        map.retain(|_, v| *v != 0.0);
        Ok(Potential { dim, kind: Kind::Finite(map) })
    }

    pub fn single_site(dim: usize, x: Site, v: f64) -> Result<Self> {
        Self::finite(dim, [(x, v)])
    }

    pub fn power_law(dim: usize, amplitude: f64, exponent: f64) -> Self {
        Self::from_family(dim, Family::PowerLaw { amplitude, exponent })
    }

    /// The potential that makes ψ = (1+|x|)^{−(d+1)/2} an eigenvector of
    /// h(e_emb) + V at energy E.
    pub fn embedded(dim: usize, energy: f64) -> Self {
        let e = Dispersion::embedded(dim);
        let stencil = e.coeffs().iter().map(|(m, &v)| (m.clone(), v)).collect();
        Self::from_family(dim, Family::Embedded { energy, stencil })
    }

    fn from_family(dim: usize, family: Family) -> Self {
        Potential {
            dim,
            kind: Kind::Family { family, offset: vec![0; dim], scale: 1.0, truncation: None },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_finite_support(&self) -> bool {
        matches!(self.kind, Kind::Finite(_))
    }

    /// Finite support as (site, value) pairs in lexicographic order.
    pub fn support(&self) -> Option<Vec<(Site, f64)>> {
        match &self.kind {
            Kind::Finite(m) => Some(m.iter().map(|(x, &v)| (x.clone(), v)).collect()),
            Kind::Family { .. } => None,
        }
    }

    pub fn support_size(&self) -> Option<usize> {
        match &self.kind {
            Kind::Finite(m) => Some(m.len()),
            Kind::Family { .. } => None,
        }
    }

    /// The closed-form rule and its truncation radius, if any.
    pub fn family(&self) -> Option<(&Family, Option<f64>)> {
        match &self.kind {
            Kind::Finite(_) => None,
            Kind::Family { family, truncation, .. } => Some((family, *truncation)),
        }
    }

    pub fn with_truncation(mut self, radius: f64) -> Self {
        if let Kind::Family { truncation, .. } = &mut self.kind {
            *truncation = Some(radius);
        }
        self
    }

    pub fn value(&self, x: &[i32]) -> f64 {
        match &self.kind {
            Kind::Finite(m) => m.get(x).copied().unwrap_or(0.0),
            Kind::Family { family, offset, scale, truncation } => {
                if let Some(r) = truncation {
                    if euclidean_norm(x) > *r {
                        return 0.0;
                    }
                }
                let y: Site = x.iter().zip(offset).map(|(a, b)| a + b).collect();
                scale * family_value(family, &y)
            }
        }
    }

    /// V^{(z)}(x) = V(z + x).
    pub fn translate(&self, z: &[i32]) -> Potential {
        match &self.kind {
            Kind::Finite(m) => Potential {
                dim: self.dim,
                kind: Kind::Finite(
                    m.iter()
                        .map(|(x, &v)| (x.iter().zip(z).map(|(a, b)| a - b).collect(), v))
                        .collect(),
                ),
            },
            Kind::Family { family, offset, scale, truncation } => Potential {
                dim: self.dim,
                kind: Kind::Family {
                    family: family.clone(),
                    offset: offset.iter().zip(z).map(|(a, b)| a + b).collect(),
                    scale: *scale,
                    truncation: *truncation,
                },
            },
        }
    }

    pub fn scaled(&self, s: f64) -> Potential {
        match &self.kind {
            Kind::Finite(m) => Potential {
                dim: self.dim,
                kind: Kind::Finite(if s == 0.0 {
                    BTreeMap::new()
                } else {
                    m.iter().map(|(x, &v)| (x.clone(), s * v)).collect()
                }),
            },
            Kind::Family { family, offset, scale, truncation } => Potential {
                dim: self.dim,
                kind: Kind::Family {
                    family: family.clone(),
                    offset: offset.clone(),
                    scale: scale * s,
                    truncation: *truncation,
                },
            },
        }
    }

    /// Sum of two finitely supported potentials.
    pub fn plus(&self, other: &Potential) -> Result<Potential> {
        match (self.support(), other.support()) {
            (Some(a), Some(b)) if self.dim == other.dim => {
                Potential::finite(self.dim, a.into_iter().chain(b))
            }
            _ => Err(Error::precondition("only finitely supported potentials of equal dimension add")),
        }
    }

    /// Values at every box site, in box order.
    pub fn sample(&self, b: &BoxLattice) -> Vec<f64> {
        match &self.kind {
            Kind::Finite(m) => {
                let mut v = vec![0.0; b.len()];
                for (x, &val) in m {
                    if let Some(i) = b.index(x) {
                        v[i] = val;
                    }
                }
                v
            }
            Kind::Family { .. } => b.sites().map(|x| self.value(&x)).collect(),
        }
    }

    /// `sites` distinct sites drawn uniformly from |x|_∞ ≤ radius, values
    /// uniform in ±[0.1, amplitude].
    pub fn random(rng: &mut impl Rng, dim: usize, sites: usize, radius: usize, amplitude: f64) -> Result<Self> {
        let side = 2 * radius + 1;
        if sites > side.pow(dim as u32) {
            return Err(Error::precondition(format!("cannot place {sites} distinct sites in a cube of side {side}")));
        }
        if !(amplitude > 0.1) {
            return Err(Error::precondition("amplitude must exceed 0.1"));
        }
        let r = radius as i32;
        let mut map = BTreeMap::new();
        while map.len() < sites {
            let x: Site = (0..dim).map(|_| rng.gen_range(-r..=r)).collect();
            let mag = rng.gen_range(0.1..=amplitude);
            let v = if rng.gen_bool(0.5) { mag } else { -mag };
            map.entry(x).or_insert(v);
        }
        Potential::finite(dim, map)
    }

    /// The potential seen by the box, as a finite-support potential.
    pub fn restricted_to(&self, b: &BoxLattice) -> Potential {
        let vals = self.sample(b);
        let kind = Kind::Finite(
            vals.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, &v)| (b.site(i), v))
                .collect(),
        );
        Potential { dim: self.dim, kind }
    }

    pub fn to_json(&self) -> String {
        Value::from(self.clone()).to_string()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Potential::try_from(v)
    }
}

fn family_value(f: &Family, x: &[i32]) -> f64 {
    match f {
        Family::PowerLaw { amplitude, exponent } => amplitude * (1.0 + euclidean_norm(x)).powf(-exponent),
        Family::Embedded { energy, stencil } => {
            let d = x.len() as f64;
            let psi = |y: &[i32]| (1.0 + euclidean_norm(y)).powf(-(d + 1.0) / 2.0);
            let mut hpsi = 0.0;
            let mut y = x.to_vec();
            for (m, c) in stencil {
                // (hψ)(x) = Σ_m ê(m) ψ(x − m)
                for k in 0..x.len() {
                    y[k] = x[k] - m[k];
                }
                hpsi += c * psi(&y);
            }
            -(hpsi - energy * psi(x)) / psi(x)
        }
    }
}

impl From<Potential> for Value {
    fn from(p: Potential) -> Value {
        match p.kind {
            Kind::Finite(m) => {
                let values: Vec<Value> = m
                    .iter()
                    .map(|(x, &v)| {
                        let mut row: Vec<Value> = x.iter().map(|&c| Value::from(c)).collect();
                        row.push(Value::from(v));
                        Value::Array(row)
                    })
                    .collect();
                json!({"kind": "finite", "dim": p.dim, "values": values})
            }
            Kind::Family { family, offset, scale, truncation } => {
                let (name, params) = match family {
                    Family::PowerLaw { amplitude, exponent } => (
                        "power_law",
                        json!({"dim": p.dim, "amplitude": amplitude, "exponent": exponent}),
                    ),
                    Family::Embedded { energy, .. } => {
                        ("embedded", json!({"dim": p.dim, "energy": energy}))
                    }
                };
                let mut v = json!({"kind": "family", "name": name, "params": params});
                if offset.iter().any(|&c| c != 0) {
                    v["offset"] = json!(offset);
                }
                if scale != 1.0 {
                    v["scale"] = json!(scale);
                }
                if let Some(r) = truncation {
                    v["truncation"] = json!(r);
                }
                v
            }
        }
    }
}

impl TryFrom<Value> for Potential {
    type Error = Error;

    fn try_from(v: Value) -> Result<Self> {
        let num = |v: &Value, what: &str| -> Result<f64> {
            v.as_f64().ok_or_else(|| Error::parse(format!("{what} must be a number")))
        };
        match v.get("kind").and_then(Value::as_str) {
            Some("finite") => {
                let rows = v
                    .get("values")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::parse("finite potential needs a \"values\" array"))?;
                let dim = match v.get("dim") {
                    Some(d) => d.as_u64().ok_or_else(|| Error::parse("dim must be a positive integer"))? as usize,
                    None => rows
                        .first()
                        .and_then(Value::as_array)
                        .map(|r| r.len().saturating_sub(1))
                        .ok_or_else(|| Error::parse("empty finite potential needs an explicit \"dim\""))?,
                };
                let mut pairs = Vec::with_capacity(rows.len());
                for row in rows {
                    let row = row.as_array().ok_or_else(|| Error::parse("value rows must be arrays"))?;
                    if row.len() != dim + 1 {
                        return Err(Error::parse(format!("value row must have {} entries", dim + 1)));
                    }
                    let mut x = Vec::with_capacity(dim);
                    for c in &row[..dim] {
                        let f = num(c, "site coordinate")?;
                        if f.fract() != 0.0 {
                            return Err(Error::parse(format!("site coordinate {f} is not an integer")));
                        }
                        x.push(f as i32);
                    }
                    pairs.push((x, num(&row[dim], "potential value")?));
                }
                Potential::finite(dim, pairs)
            }
            Some("family") => {
                let name = v.get("name").and_then(Value::as_str).ok_or_else(|| Error::parse("family needs a name"))?;
                let params = v.get("params").ok_or_else(|| Error::parse("family needs params"))?;
                let dim = params
                    .get("dim")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::parse("family params need an integer \"dim\""))? as usize;
                if dim == 0 {
                    return Err(Error::parse("dim must be positive"));
                }
                let param = |k: &str| -> Result<f64> {
                    num(params.get(k).ok_or_else(|| Error::parse(format!("missing parameter {k}")))?, k)
                };
                let mut p = match name {
                    "power_law" => Potential::power_law(dim, param("amplitude")?, param("exponent")?),
                    "embedded" => Potential::embedded(dim, param("energy")?),
                    other => return Err(Error::parse(format!("unknown potential family {other}"))),
                };
                if let Some(o) = v.get("offset") {
                    let z: Vec<i32> = serde_json::from_value(o.clone())?;
                    if z.len() != dim {
                        return Err(Error::parse("offset dimension mismatch"));
                    }
                    p = p.translate(&z);
                }
                if let Some(s) = v.get("scale") {
                    p = p.scaled(num(s, "scale")?);
                }
                if let Some(r) = v.get("truncation") {
                    p = p.with_truncation(num(r, "truncation")?);
                }
                Ok(p)
            }
            _ => Err(Error::parse("potential \"kind\" must be \"finite\" or \"family\"")),
        }
    }
}

/// Dense Hermitian matrix indexed by box sites.
#[derive(Clone, Debug)]
pub struct HermitianOperator {
    lattice: BoxLattice,
    entries: Mat<C64>,
    label: String,
}

impl HermitianOperator {
    pub fn new(lattice: BoxLattice, entries: Mat<C64>, label: impl Into<String>) -> Result<Self> {
        Self::with_tolerance(lattice, entries, label, 1e-12)
    }

    pub fn with_tolerance(lattice: BoxLattice, entries: Mat<C64>, label: impl Into<String>, tol: f64) -> Result<Self> {
        let n = lattice.len();
        let label = label.into();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::precondition(format!(
                "{label}: matrix is {}×{} but the box has {n} sites",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let op = HermitianOperator { lattice, entries, label };
        let dev = op.hermiticity_defect();
        if dev > tol * op.max_abs() {
            return Err(Error::numerical(format!(
                "{}: ‖M − M*‖_max = {dev:e} exceeds {tol:e}·‖M‖_max",
                op.label
            )));
        }
        Ok(op)
    }

    pub fn lattice(&self) -> &BoxLattice {
        &self.lattice
    }

    pub fn entries(&self) -> &Mat<C64> {
        &self.entries
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.entries[(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                m = m.max(self.entries[(i, j)].norm());
            }
        }
        m
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                m = m.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        m
    }

    pub fn is_real(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| self.entries[(i, j)].im == 0.0))
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim();
        let mut y = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            if x[j] == C64::new(0.0, 0.0) {
                continue;
            }
            for i in 0..n {
                y[i] += self.entries[(i, j)] * x[j];
            }
        }
        y
    }

    /// ⟨x, M x⟩
    pub fn quadratic_form(&self, x: &[C64]) -> C64 {
        let y = self.apply(x);
        x.iter().zip(&y).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scaled(&self, s: f64) -> HermitianOperator {
        HermitianOperator {
            lattice: self.lattice,
            entries: Mat::from_fn(self.dim(), self.dim(), |i, j| self.entries[(i, j)] * s),
            label: format!("{}·{}", s, self.label),
        }
    }

    /// Nonzero entries as "i,j,re,im" lines with a header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,re,im")?;
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                let z = self.entries[(i, j)];
                if z != C64::new(0.0, 0.0) {
                    writeln!(w, "{i},{j},{:e},{:e}", z.re, z.im)?;
                }
            }
        }
        Ok(())
    }
}

/// h_{xy} = ê(x − y), compressed to the box.
pub fn hopping_sparse(e: &Dispersion, b: &BoxLattice) -> Result<Csr<f64>> {
    check_dims(e, b)?;
    let mut t = Vec::with_capacity(b.len() * e.coeffs().len());
    let mut y = vec![0; b.dim];
    for (i, x) in b.sites().enumerate() {
        for (m, &v) in e.coeffs() {
            for k in 0..b.dim {
                y[k] = x[k] - m[k];
            }
            if let Some(j) = b.index(&y) {
                t.push((i, j, v));
            }
        }
    }
    Ok(Csr::from_triplets(b.len(), t))
}

fn check_dims(e: &Dispersion, b: &BoxLattice) -> Result<()> {
    if e.dim() != b.dim {
        return Err(Error::precondition(format!(
            "dispersion dimension {} does not match box dimension {}",
            e.dim(),
            b.dim
        )));
    }
    Ok(())
}

pub fn hopping_matrix(e: &Dispersion, b: &BoxLattice) -> Result<HermitianOperator> {
    HermitianOperator::new(*b, hopping_sparse(e, b)?.to_dense(), "h(e)")
}

/// A_{yx} = Σ_k x_k v̂_k(x−y) + (i/2)û(x−y) with v̂_k(m) = i m_k ê(m) and
/// û(m) = −|m|² ê(m); this collapses to A_{yx} = (i/2) ê(x−y) (|x|² − |y|²).
pub fn conjugate_sparse(e: &Dispersion, b: &BoxLattice) -> Result<Csr<C64>> {
    check_dims(e, b)?;
    let mut t = Vec::with_capacity(b.len() * e.coeffs().len());
    let mut y = vec![0; b.dim];
    for (j, x) in b.sites().enumerate() {
        let x2 = norm_sq(&x);
        for (m, &v) in e.coeffs() {
            for k in 0..b.dim {
                y[k] = x[k] - m[k];
            }
            if let Some(i) = b.index(&y) {
                let diff = x2 - norm_sq(&y);
                if diff != 0 {
                    t.push((i, j, C64::new(0.0, 0.5 * v * diff as f64)));
                }
            }
        }
    }
    Ok(Csr::from_triplets(b.len(), t))
}

pub fn conjugate_operator(e: &Dispersion, b: &BoxLattice) -> Result<HermitianOperator> {
    HermitianOperator::new(*b, conjugate_sparse(e, b)?.to_dense(), "A(e)")
}

/// g_x = A δ_x on the infinite lattice, restricted to the box (column x of A).
pub fn g_vector(e: &Dispersion, b: &BoxLattice, x: &[i32]) -> Vec<(usize, C64)> {
    let x2 = norm_sq(x);
    let mut out = Vec::with_capacity(e.coeffs().len());
    let mut y = vec![0; b.dim];
    for (m, &v) in e.coeffs() {
        for k in 0..b.dim {
            y[k] = x[k] - m[k];
        }
        if let Some(i) = b.index(&y) {
            let diff = x2 - norm_sq(&y);
            if diff != 0 {
                out.push((i, C64::new(0.0, 0.5 * v * diff as f64)));
            }
        }
    }
    out.sort_by_key(|p| p.0);
    out
}

/// i[V,A] = Σ_x iV(x)(|δ_x⟩⟨g_x| − |g_x⟩⟨δ_x|) in factored form.
#[derive(Clone, Debug)]
pub struct CommutatorFactors {
    pub lattice: BoxLattice,
    pub sites: Vec<usize>,
    pub values: Vec<f64>,
    pub g: Vec<Vec<(usize, C64)>>,
}

impl CommutatorFactors {
    pub fn to_dense(&self) -> Mat<C64> {
        let n = self.lattice.len();
        let mut m = Mat::<C64>::zeros(n, n);
        let i = C64::new(0.0, 1.0);
        for ((&x, &v), g) in self.sites.iter().zip(&self.values).zip(&self.g) {
            for &(y, gy) in g {
                m[(x, y)] += i * v * gy.conj();
                m[(y, x)] -= i * v * gy;
            }
        }
        m
    }

    /// ⟨ψ, i[V,A]ψ⟩ = −2 Σ_x V(x) Im(conj ψ(x) ⟨g_x, ψ⟩).
    pub fn quadratic_form(&self, psi: &[C64]) -> C64 {
        let i = C64::new(0.0, 1.0);
        let mut s = C64::new(0.0, 0.0);
        for ((&x, &v), g) in self.sites.iter().zip(&self.values).zip(&self.g) {
            let gpsi: C64 = g.iter().map(|&(y, gy)| gy.conj() * psi[y]).sum();
            let z = psi[x].conj() * gpsi;
            s += i * v * (z - z.conj());
        }
        s
    }
}

pub fn commutator_va_factors(v: &Potential, e: &Dispersion, b: &BoxLattice) -> Result<CommutatorFactors> {
    check_dims(e, b)?;
    if v.dim() != b.dim {
        return Err(Error::precondition("potential dimension does not match box"));
    }
    let restricted = v.restricted_to(b);
    let support = restricted.support().expect("restriction is finite");
    let mut f = CommutatorFactors { lattice: *b, sites: Vec::new(), values: Vec::new(), g: Vec::new() };
    for (x, val) in support {
        f.sites.push(b.index(&x).expect("restricted to box"));
        f.values.push(val);
        f.g.push(g_vector(e, b, &x));
    }
    Ok(f)
}

pub fn commutator_va(v: &Potential, e: &Dispersion, b: &BoxLattice) -> Result<HermitianOperator> {
    let f = commutator_va_factors(v, e, b)?;
    HermitianOperator::new(*b, f.to_dense(), "i[V,A]")
}

/// i[h(e), A] is the multiplier |∇e|², compressed.
pub fn commutator_ha(e: &Dispersion, b: &BoxLattice) -> Result<HermitianOperator> {
    let w = e.grad_squared();
    HermitianOperator::new(*b, hopping_sparse(&w, b)?.to_dense(), "i[h(e),A]")
}

pub fn hamiltonian_sparse(e: &Dispersion, v: &Potential, b: &BoxLattice) -> Result<Csr<f64>> {
    if v.dim() != b.dim {
        return Err(Error::precondition("potential dimension does not match box"));
    }
    Ok(hopping_sparse(e, b)?.with_diagonal(&v.sample(b)))
}

pub fn hamiltonian(e: &Dispersion, v: &Potential, b: &BoxLattice) -> Result<HermitianOperator> {
    HermitianOperator::new(*b, hamiltonian_sparse(e, v, b)?.to_dense(), "H(e,V)")
}

/// ψ(x) = ∫ e^{i⟨p,x⟩} f(p) dμ(p) for every box site, with the largest
/// per-site error estimate.
pub fn fourier_vector<F>(f: F, b: &BoxLattice, tol: f64) -> Result<(Vec<C64>, f64)>
where
    F: Fn(&[f64]) -> C64,
{
    let d = b.dim;
    let lo = vec![-std::f64::consts::PI; d];
    let hi = vec![std::f64::consts::PI; d];
    let vol = (2.0 * std::f64::consts::PI).powi(d as i32);
    let opts = CubatureOptions { abs_tol: tol * vol, ..CubatureOptions::default() };
    let mut out = Vec::with_capacity(b.len());
    let mut worst = 0.0f64;
    for x in b.sites() {
        let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
        let r = adaptive_cubature(
            |p: &[f64]| {
                let ph: f64 = p.iter().zip(&xf).map(|(a, b)| a * b).sum();
                C64::from_polar(1.0, ph) * f(p)
            },
            &lo,
            &hi,
            &opts,
        );
        if !r.converged {
            return Err(Error::numerical(format!(
                "Fourier coefficient at {x:?} did not converge (error estimate {:e})",
                r.abs_error_estimate / vol
            )));
        }
        worst = worst.max(r.abs_error_estimate / vol);
        out.push(r.value / vol);
    }
    Ok((out, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_enumeration() {
        let b = BoxLattice::new(2, 1).unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!(b.site(0), vec![-1, -1]);
        assert_eq!(b.site(1), vec![-1, 0]);
        assert_eq!(b.origin(), 4);
        for i in 0..b.len() {
            assert_eq!(b.index(&b.site(i)), Some(i));
        }
        assert_eq!(b.index(&[2, 0]), None);
        assert_eq!(b.boundary_distance(&[0, 0]), 1);
        assert_eq!(b.boundary_distance(&[1, 0]), 0);
    }

    #[test]
    fn hopping_examples() {
        let b = BoxLattice::new(1, 2).unwrap();
        let h = hopping_matrix(&Dispersion::laplacian(1), &b).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = match (i as i32 - j as i32).abs() {
                    0 => 2.0,
                    1 => -1.0,
                    _ => 0.0,
                };
                assert_eq!(h.entry(i, j), C64::new(expect, 0.0));
            }
        }
        let h = hopping_matrix(&Dispersion::embedded(1), &b).unwrap();
        let row: Vec<f64> = (0..5).map(|j| h.entry(2, j).re).collect();
        assert_eq!(row, vec![0.5, -1.0, 1.5, -1.0, 0.5]);
    }

    #[test]
    fn hopping_is_toeplitz_and_finite_range() {
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 3).unwrap();
        let h = hopping_matrix(&e, &b).unwrap();
        for i in 0..b.len() {
            for j in 0..b.len() {
                let (x, y) = (b.site(i), b.site(j));
                let m: Vec<i32> = x.iter().zip(&y).map(|(a, c)| a - c).collect();
                assert_eq!(h.entry(i, j).re, e.coeff(&m));
                if m.iter().map(|c| c.unsigned_abs()).max().unwrap() as usize > e.range() {
                    assert_eq!(h.entry(i, j), C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn conjugate_matches_fourier_quadrature() {
        // oracle: A_{yx} = ∫ e^{i⟨p,y−x⟩} ĝ_x(p) dμ(p) with
        // ĝ_x(p) = Σ_k x_k ∂_k e(p) + (i/2) Δe(p), summed on a uniform grid
        // (exact for trigonometric polynomials of low degree).
        let e = Dispersion::laplacian(1);
        let b = BoxLattice::new(1, 2).unwrap();
        let a = conjugate_operator(&e, &b).unwrap();
        let n = 256;
        for xi in 0..b.len() {
            let x = b.site(xi)[0] as f64;
            for yi in 0..b.len() {
                let y = b.site(yi)[0] as f64;
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    let p = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    let mut g = C64::new(0.0, 0.0);
                    for (m, &c) in e.coeffs() {
                        let mf = m[0] as f64;
                        let ph = C64::from_polar(1.0, p * mf);
                        g += x * C64::new(0.0, mf * c) * ph + C64::new(0.0, 0.5) * (-mf * mf * c) * ph;
                    }
                    acc += C64::from_polar(1.0, p * (y - x)) * g;
                }
                acc /= n as f64;
                assert!((acc - a.entry(yi, xi)).norm() < 1e-10, "({yi},{xi}) {acc} {}", a.entry(yi, xi));
            }
        }
    }

    #[test]
    fn conjugate_is_half_commutator_with_position_squared() {
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 3).unwrap();
        let a = conjugate_operator(&e, &b).unwrap();
        let h = hopping_matrix(&e, &b).unwrap();
        for i in 0..b.len() {
            for j in 0..b.len() {
                let (xi, xj) = (norm_sq(&b.site(i)) as f64, norm_sq(&b.site(j)) as f64);
                let expect = C64::new(0.0, 0.5) * h.entry(i, j) * (xj - xi);
                assert!((a.entry(i, j) - expect).norm() < 1e-14);
            }
        }
        assert!(conjugate_operator(&Dispersion::constant(2, 3.0), &b).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn g_norm_grows_linearly() {
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 8).unwrap();
        // ‖g_x‖ ≤ C(1+|x|) with C = Σ|m||ê| + Σ|m|²|ê|/2
        let c: f64 = e
            .coeffs()
            .iter()
            .map(|(m, v)| {
                let n = euclidean_norm(m);
                (n + 0.5 * n * n) * v.abs()
            })
            .sum();
        for x in b.sites() {
            let g = g_vector(&e, &b, &x);
            let n = g.iter().map(|(_, z)| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(n <= c * (1.0 + euclidean_norm(&x)));
        }
    }

    #[test]
    fn commutator_va_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 5).unwrap();
        let a = conjugate_operator(&e, &b).unwrap();
        let vals: Vec<(Site, f64)> =
            (0..4).map(|_| (vec![rng.gen_range(-1..=1), rng.gen_range(-1..=1)], rng.gen_range(-2.0..2.0))).collect();
        let v = Potential::finite(2, vals).unwrap();
        let c = commutator_va(&v, &e, &b).unwrap();
        let vs = v.sample(&b);
        let n = b.len();
        let i = C64::new(0.0, 1.0);
        for r in 0..n {
            for s in 0..n {
                let mut direct = C64::new(0.0, 0.0);
                for k in 0..n {
                    let vk = if k == r { vs[r] } else { 0.0 };
                    let vks = if k == s { vs[s] } else { 0.0 };
                    direct += vk * a.entry(k, s) - a.entry(r, k) * vks;
                }
                assert!((c.entry(r, s) - i * direct).norm() < 1e-12);
            }
        }
        assert_eq!(commutator_va(&Potential::zero(2), &e, &b).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn commutator_ha_is_positive() {
        let e = Dispersion::embedded(2);
        let b = BoxLattice::new(2, 6).unwrap();
        let c = commutator_ha(&e, &b).unwrap();
        let ev = hermitian_eigenvalues(c.entries()).unwrap();
        assert!(ev[0] >= -1e-10 * ev[ev.len() - 1]);
        let b1 = BoxLattice::new(1, 3).unwrap();
        let c1 = commutator_ha(&Dispersion::laplacian(1), &b1).unwrap();
        assert_eq!(c1.entry(3, 3).re, 2.0);
        assert_eq!(c1.entry(3, 5).re, -1.0);
        assert_eq!(c1.entry(3, 4).re, 0.0);
    }

    #[test]
    fn hamiltonian_spectrum() {
        let e = Dispersion::laplacian(2);
        let b = BoxLattice::new(2, 4).unwrap();
        let ev = hermitian_eigenvalues(hamiltonian(&e, &Potential::zero(2), &b).unwrap().entries()).unwrap();
        assert!(ev[0] >= 0.0 && *ev.last().unwrap() <= 8.0);
        let e3 = Dispersion::laplacian(3);
        let b3 = BoxLattice::new(3, 5).unwrap();
        let v = Potential::single_site(3, vec![0, 0, 0], -10.0).unwrap();
        let ev = hermitian_eigenvalues(hamiltonian(&e3, &v, &b3).unwrap().entries()).unwrap();
        assert_eq!(ev.iter().filter(|&&x| x < 0.0).count(), 1);
    }

    #[test]
    fn potential_json_and_translation() {
        let v = Potential::finite(2, vec![(vec![1, 0], 2.0), (vec![0, 0], -1.0)]).unwrap();
        let s = v.to_json();
        assert_eq!(s, r#"{"dim":2,"kind":"finite","values":[[0,0,-1.0],[1,0,2.0]]}"#);
        assert_eq!(Potential::from_json(&s).unwrap(), v);
        let t = v.translate(&[1, 0]);
        assert_eq!(t.value(&[0, 0]), 2.0);
        assert_eq!(t.value(&[-1, 0]), -1.0);
        assert_eq!(t.support_size(), Some(2));

        let f = Potential::power_law(3, 2.0, 4.0).translate(&[1, 0, 0]).scaled(0.5);
        let back = Potential::from_json(&f.to_json()).unwrap();
        assert_eq!(back.value(&[0, 0, 0]), f.value(&[0, 0, 0]));
        assert!((f.value(&[-1, 0, 0]) - 1.0).abs() < 1e-15);
        assert!(Potential::from_json(r#"{"kind":"other"}"#).is_err());
    }

    #[test]
    fn fourier_vectors() {
        let b = BoxLattice::new(2, 2).unwrap();
        let (one, _) = fourier_vector(|_| C64::new(1.0, 0.0), &b, 1e-12).unwrap();
        for (i, z) in one.iter().enumerate() {
            let expect = if i == b.origin() { 1.0 } else { 0.0 };
            assert!((z - expect).norm() < 1e-12);
        }
        let e = Dispersion::laplacian(2);
        let (coef, _) = fourier_vector(|p| C64::new(e.value(p), 0.0), &b, 1e-12).unwrap();
        for (i, z) in coef.iter().enumerate() {
            assert!((z - e.coeff(&b.site(i))).norm() < 1e-12);
        }
    }
}
