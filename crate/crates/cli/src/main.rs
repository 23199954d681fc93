use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lattice_schrodinger::examples::{embedded_example, embedded_example_at, threshold_example, verify_sweep, write_residual_csv};
use lattice_schrodinger::functionals::{default_z_window, embedded_absence_check, min_support_bound, phi};
use lattice_schrodinger::lattice::{
    commutator_ha, commutator_va, conjugate_operator, hamiltonian, hopping_matrix, BoxLattice, HermitianOperator, Potential,
};
use lattice_schrodinger::linalg::hermitian_eigenvalues;
use lattice_schrodinger::quadrature::{
    estimate_c_resolv, uniform_bound_scan, weighted_kernel_scan, ResolventOptions, ScanKind, ScanOptions, ScanTarget,
    SmoothBump,
};
use lattice_schrodinger::spectral::{classify, mourre_compression, verify_trace_identity, virial_residual, EigSelector};
use lattice_schrodinger::torus::{certify_morse, critical_report, pair_dispersion, Dispersion};
use lattice_schrodinger::{Error, Tolerances, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

/// Finite-volume checks for lattice Schrödinger operators H = h(e) + V on ℤ^d.
#[derive(Parser, Debug)]
#[command(name = "lsch", version)]
struct Cli {
    /// Tolerance record: a JSON file or inline JSON object; missing keys keep their defaults.
    #[arg(long, global = true)]
    tol: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here (atomically) instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized potentials (ChaCha8).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Builtin {
    /// e(p) = 2Σ(1 − cos p_k)
    Lapl,
    /// e(p) = 3d/2 − Σ(2cos p_k − cos 2p_k)
    Emb,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DispersionArgs {
    /// Lattice dimension.
    #[arg(short = 'd')]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    /// Dispersion JSON file ({"dim": d, "coeffs": [[m..., value], ...]}).
    #[arg(long, conflicts_with = "builtin")]
    dispersion: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Critical points, thresholds and minimal curvature of e; the Morse
    /// certificate for e and |∇e|²; or the pair dispersion e(p+k) + e(p−k).
    Dispersion {
        #[command(flatten)]
        disp: DispersionArgs,
        /// Critical-point report (the default).
        #[arg(long)]
        report: bool,
        /// Certify the Morse property of e and |∇e|².
        #[arg(long, conflicts_with = "pair")]
        morse: bool,
        /// Pair dispersion at k (comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        pair: Option<Vec<f64>>,
        /// Seed grid points per axis.
        #[arg(long, default_value_t = 24)]
        grid: usize,
    },
    /// Box matrices: h(e), the conjugate operator A, i[V,A], i[h,A] = h(|∇e|²), or H.
    Operators {
        #[command(flatten)]
        disp: DispersionArgs,
        #[arg(short = 'L')]
        half_width: usize,
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        potential: Option<PathBuf>,
    },
    /// Box spectrum of H(e,V) split into discrete, band-edge and in-band
    /// (embedded-candidate) eigenvalues.
    Spectrum {
        #[command(flatten)]
        disp: DispersionArgs,
        #[arg(short = 'L')]
        half_width: usize,
        #[arg(long)]
        potential: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        grid: usize,
    },
    /// Virial balance ⟨ψ,i[V2,A]ψ⟩ = −⟨ψ,i[H(e,V1),A]ψ⟩ for eigenvectors of H(e,V1+V2).
    Virial {
        #[command(flatten)]
        disp: DispersionArgs,
        /// Half-widths to sweep (comma separated).
        #[arg(short = 'L', value_delimiter = ',', required = true)]
        half_width: Vec<usize>,
        /// V2 (finite support).
        #[arg(long)]
        potential: PathBuf,
        #[arg(long)]
        v1: Option<PathBuf>,
        /// k-th lowest eigenvector; all eigenvectors below min e when absent.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Number of negative eigenvalues of i[V,A] against |supp V|, and its
    /// invariance under V → λV.
    TraceIdentity {
        #[command(flatten)]
        disp: DispersionArgs,
        #[arg(short = 'L')]
        half_width: usize,
        #[arg(long, conflicts_with = "sites")]
        potential: Option<PathBuf>,
        /// Random potential with this many sites (uses --seed).
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long, default_value_t = 2.0)]
        amplitude: f64,
    },
    /// Compression of i[H,A] to the spectral window of H against the floor
    /// min |∇e|² over the window's energy shell.
    Mourre {
        #[command(flatten)]
        disp: DispersionArgs,
        #[arg(short = 'L')]
        half_width: usize,
        #[arg(long)]
        potential: Option<PathBuf>,
        /// a,b
        #[arg(long, value_delimiter = ',', num_args = 1, required = true, allow_hyphen_values = true)]
        window: Vec<f64>,
        #[arg(long, default_value_t = 24)]
        grid: usize,
    },
    /// Φ_{m,n}(V) = (Σ|V(x)|^{1/m}(1+|x|)^n)^m with divergence detection.
    Phi {
        #[arg(long)]
        potential: PathBuf,
        #[arg(short = 'm', default_value_t = 2)]
        m: u32,
        #[arg(short = 'n', default_value_t = 3)]
        n: u32,
        /// Summation radius for closed-form potentials.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Smallest support set S and translation z with Φ_{2,3}(V^{(z)} off S) < c;
    /// |S| bounds the number of eigenvalues.
    Bound {
        #[arg(long)]
        potential: PathBuf,
        #[arg(short = 'c')]
        c: f64,
        #[arg(long)]
        z_window: Option<i32>,
        /// With --discrete: support size N of the reference potential for the
        /// embedded-eigenvalue absence check.
        #[arg(long, requires = "discrete")]
        absence: Option<usize>,
        /// Number of discrete eigenvalues exhibited by the operator.
        #[arg(long, requires = "absence")]
        discrete: Option<usize>,
    },
    /// The closed-form eigenpairs (embedded at E = 3d/2, threshold at E = 0 in
    /// d ≥ 5) and their box residuals.
    Example {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(short = 'd')]
        dim: usize,
        #[arg(short = 'L', value_delimiter = ',', required = true)]
        half_width: Vec<usize>,
        /// Embedded family only: build the potential at this E instead of 3d/2.
        #[arg(long)]
        energy: Option<f64>,
    },
    /// The model integrals L1, L2, L3 (bump f) or ∫χ/(z − e) dμ (χ = 1) over
    /// an (a, b) grid, with the uniform-bound ratio and blow-up flag.
    Integrals {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Model dimension (L-kinds) or lattice dimension (torus).
        #[arg(short = 'd')]
        dim: Option<usize>,
        #[arg(long, value_enum)]
        builtin: Option<Builtin>,
        #[arg(long)]
        dispersion: Option<PathBuf>,
        /// Number of positive directions for L3.
        #[arg(short = 'm')]
        m: Option<usize>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        b: Vec<f64>,
        /// Model ball radius.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Torus integral tolerance.
        #[arg(long, default_value_t = ScanOptions::default().torus_tol)]
        torus_tol: f64,
    },
    /// Empirical constant of the weighted resolvent bounds and the derived
    /// default threshold c = 1/(2ĉ).
    EstimateC {
        #[command(flatten)]
        disp: DispersionArgs,
        #[arg(short = 'L')]
        half_width: usize,
        /// Probe potentials (repeatable).
        #[arg(long)]
        potential: Vec<PathBuf>,
        /// Random probes (uses --seed).
        #[arg(long, default_value_t = 0)]
        probes: usize,
        /// z values as re:im (comma separated).
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        z: Vec<String>,
        #[arg(long, default_value_t = 8.0)]
        kappa: f64,
        #[arg(long)]
        override_guard: bool,
    },
    /// Weighted kernel |(z − H)⁻¹(x,y)|/((1+|x|)²(1+|y|)²) with Im z = η(ℓ)
    /// over growing boxes.
    ResolventScan {
        #[command(flatten)]
        disp: DispersionArgs,
        #[arg(short = 'L', value_delimiter = ',', required = true)]
        half_width: Vec<usize>,
        #[arg(long)]
        potential: Option<PathBuf>,
        /// Re z values (comma separated).
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        re: Vec<f64>,
        #[arg(long, default_value_t = 8.0)]
        kappa: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Which {
    Hopping,
    Conjugate,
    CommutatorVa,
    CommutatorHa,
    Hamiltonian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Embedded,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    L1,
    L2,
    L3,
    Torus,
}

#[derive(Debug)]
enum Failure {
    Precondition(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Precondition(e.to_string()),
        }
    }
}

fn pre(msg: impl Into<String>) -> Failure {
    Failure::Precondition(msg.into())
}

type Outcome<T> = Result<T, Failure>;

#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'a Command,
    tolerances: &'a Tolerances,
    format: Format,
    seed: u64,
}

/// A result as JSON plus, when the command has a tabular form, CSV text.
struct Report {
    json: Value,
    csv: Option<String>,
}

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| pre(format!("cannot read {}: {e}", path.display())))
}

fn load_potential(path: &Path) -> Outcome<Potential> {
    Ok(Potential::from_json(&read(path)?)?)
}

fn load_tolerances(spec: Option<&str>) -> Outcome<Tolerances> {
    let mut base = serde_json::to_value(Tolerances::default()).expect("tolerances serialize");
    let Some(spec) = spec else { return Ok(Tolerances::default()) };
    let text = if spec.trim_start().starts_with('{') { spec.to_string() } else { read(Path::new(spec))? };
    let given: Value = serde_json::from_str(&text).map_err(|e| pre(format!("tolerance record: {e}")))?;
    let Value::Object(given) = given else { return Err(pre("tolerance record must be a JSON object")) };
    let obj = base.as_object_mut().expect("object");
    for (k, v) in given {
        if !obj.contains_key(&k) {
            return Err(pre(format!("unknown tolerance key '{k}'")));
        }
        obj.insert(k, v);
    }
    serde_json::from_value(base).map_err(|e| pre(format!("tolerance record: {e}")))
}

fn resolve_dispersion(dim: Option<usize>, builtin: Option<Builtin>, file: Option<&Path>) -> Outcome<Dispersion> {
    match (builtin, file) {
        (_, Some(path)) => {
            let e = Dispersion::from_json(&read(path)?)?;
            if let Some(d) = dim {
                if d != e.dim() {
                    return Err(pre(format!("-d {d} disagrees with the dispersion file (d = {})", e.dim())));
                }
            }
            Ok(e)
        }
        (Some(b), None) => {
            let d = dim.ok_or_else(|| pre("--builtin needs an explicit dimension -d"))?;
            if d == 0 {
                return Err(pre("dimension must be at least 1"));
            }
            Ok(match b {
                Builtin::Lapl => Dispersion::laplacian(d),
                Builtin::Emb => Dispersion::embedded(d),
            })
        }
        (None, None) => Err(pre("a dispersion is required: --builtin lapl|emb with -d, or --dispersion <json>")),
    }
}

fn dispersion_of(a: &DispersionArgs) -> Outcome<Dispersion> {
    resolve_dispersion(a.dim, a.builtin, a.dispersion.as_deref())
}

fn potential_or_zero(path: &Option<PathBuf>, dim: usize) -> Outcome<Potential> {
    let v = match path {
        Some(p) => load_potential(p)?,
        None => Potential::zero(dim),
    };
    if v.dim() != dim {
        return Err(pre(format!("potential has dimension {} but the dispersion has {dim}", v.dim())));
    }
    Ok(v)
}

fn json_of<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("report serializes")
}

fn operator_json(m: &HermitianOperator) -> Value {
    let n = m.dim();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let z = m.entry(i, j);
            if z != C64::new(0.0, 0.0) {
                entries.push(json!([i, j, z.re, z.im]));
            }
        }
    }
    json!({
        "label": m.label(),
        "half_width": m.lattice().half_width,
        "dim": m.lattice().dim,
        "size": n,
        "hermiticity_defect": m.hermiticity_defect(),
        "max_abs": m.max_abs(),
        "entries": entries,
    })
}

fn csv_lines<I: IntoIterator<Item = String>>(header: &str, rows: I) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn parse_z(s: &str) -> Outcome<C64> {
    let (a, b) = s.split_once(':').ok_or_else(|| pre(format!("z '{s}' is not of the form re:im")))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|_| pre(format!("z '{s}' is not numeric")));
    Ok(C64::new(p(a)?, p(b)?))
}

fn run(cmd: &Command, tol: &Tolerances, seed: u64) -> Outcome<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cmd {
        Command::Dispersion { disp, report: _, morse, pair, grid } => {
            let e = dispersion_of(disp)?;
            if let Some(k) = pair {
                if k.len() != e.dim() {
                    return Err(pre(format!("--pair needs {} components", e.dim())));
                }
                let p = pair_dispersion(&e, k, tol.newton)?;
                return Ok(Report { json: json_of(&p), csv: None });
            }
            if *morse {
                let c = certify_morse(&e, *grid, tol.newton)?;
                return Ok(Report { json: json_of(&c), csv: None });
            }
            let r = critical_report(&e, *grid, tol.newton)?;
            let d = e.dim();
            let header = (0..d).map(|k| format!("p{k}")).chain(["value", "morse_index", "curvature", "degenerate"].map(String::from));
            let csv = csv_lines(
                &header.collect::<Vec<_>>().join(","),
                r.points.iter().map(|c| {
                    let p: Vec<String> = c.point.iter().map(|v| format!("{v:e}")).collect();
                    format!("{},{:e},{},{:e},{}", p.join(","), c.value, c.morse_index, c.curvature, c.degenerate)
                }),
            );
            Ok(Report { json: json_of(&r), csv: Some(csv) })
        }
        Command::Operators { disp, half_width, which, potential } => {
            let e = dispersion_of(disp)?;
            let b = BoxLattice::new(e.dim(), *half_width)?;
            let v = potential_or_zero(potential, e.dim())?;
            let m = match which {
                Which::Hopping => hopping_matrix(&e, &b)?,
                Which::Conjugate => conjugate_operator(&e, &b)?,
                Which::CommutatorVa => commutator_va(&v, &e, &b)?,
                Which::CommutatorHa => commutator_ha(&e, &b)?,
                Which::Hamiltonian => hamiltonian(&e, &v, &b)?,
            };
            let mut csv = Vec::new();
            m.write_csv(&mut csv).expect("in-memory write");
            Ok(Report { json: operator_json(&m), csv: Some(String::from_utf8(csv).expect("utf8")) })
        }
        Command::Spectrum { disp, half_width, potential, grid } => {
            let e = dispersion_of(disp)?;
            let b = BoxLattice::new(e.dim(), *half_width)?;
            let v = potential_or_zero(potential, e.dim())?;
            let crit = critical_report(&e, *grid, tol.newton)?;
            let ev = hermitian_eigenvalues(hamiltonian(&e, &v, &b)?.entries())?;
            let r = classify(&ev, &crit, tol);
            let csv = csv_lines(
                "eigenvalue,class",
                r.eigenvalues.iter().map(|&x| {
                    let class = if x < r.e_min - r.margin || x > r.e_max + r.margin {
                        "discrete"
                    } else if x < r.e_min + r.margin || x > r.e_max - r.margin {
                        "edge"
                    } else {
                        "band"
                    };
                    format!("{x:e},{class}")
                }),
            );
            Ok(Report { json: json_of(&r), csv: Some(csv) })
        }
        Command::Virial { disp, half_width, potential, v1, index } => {
            let e = dispersion_of(disp)?;
            let v2 = load_potential(potential)?;
            let v1 = potential_or_zero(v1, e.dim())?;
            let which = index.map_or(EigSelector::Discrete, EigSelector::Index);
            let crit = critical_report(&e, 24, tol.newton)?;
            let mut rows = Vec::new();
            for &l in half_width {
                let b = BoxLattice::new(e.dim(), l)?;
                for r in virial_residual(&e, &v1, &v2, &b, which, crit.e_min, tol)? {
                    rows.push((l, r));
                }
            }
            let csv = csv_lines(
                "l,eigenvalue,lhs,rhs,residual,boundary_mass,reliable",
                rows.iter().map(|(l, r)| {
                    format!("{l},{:e},{:e},{:e},{:e},{:e},{}", r.eigenvalue, r.lhs, r.rhs, r.residual, r.boundary_mass, r.reliable)
                }),
            );
            let json = Value::Array(rows.iter().map(|(l, r)| json!({"half_width": l, "row": json_of(r)})).collect());
            Ok(Report { json, csv: Some(csv) })
        }
        Command::TraceIdentity { disp, half_width, potential, sites, amplitude } => {
            let e = dispersion_of(disp)?;
            let b = BoxLattice::new(e.dim(), *half_width)?;
            let v = match (potential, sites) {
                (Some(p), _) => load_potential(p)?,
                (None, Some(n)) => {
                    let radius = half_width.saturating_sub(e.range());
                    Potential::random(&mut rng, e.dim(), *n, radius, *amplitude)?
                }
                (None, None) => return Err(pre("trace-identity needs --potential or --sites")),
            };
            let r = verify_trace_identity(&v, &e, &b, tol)?;
            let mut json = json_of(&r);
            json["potential"] = serde_json::from_str(&v.to_json()).expect("potential JSON");
            Ok(Report { json, csv: None })
        }
        Command::Mourre { disp, half_width, potential, window, grid } => {
            let e = dispersion_of(disp)?;
            if window.len() != 2 {
                return Err(pre("--window takes exactly two values a,b"));
            }
            let b = BoxLattice::new(e.dim(), *half_width)?;
            let v = potential_or_zero(potential, e.dim())?;
            let crit = critical_report(&e, *grid, tol.newton)?;
            let r = mourre_compression(&e, &v, [window[0], window[1]], &b, &crit, tol)?;
            let csv = csv_lines("k,eigenvalue,c_delta", r.compression_eigenvalues.iter().enumerate().map(|(k, x)| format!("{k},{x:e},{:e}", r.c_delta)));
            Ok(Report { json: json_of(&r), csv: Some(csv) })
        }
        Command::Phi { potential, m, n, radius } => {
            let v = load_potential(potential)?;
            let r = phi(&v, *m, *n, *radius)?;
            let csv = csv_lines("shell,partial_sum", r.partial_sums.iter().map(|(k, s)| format!("{k},{s:e}")));
            Ok(Report { json: json_of(&r), csv: Some(csv) })
        }
        Command::Bound { potential, c, z_window, absence, discrete } => {
            let v = load_potential(potential)?;
            let w = match z_window {
                Some(w) => *w,
                None => default_z_window(&v)?,
            };
            let cert = min_support_bound(&v, *c, w)?;
            let mut csv = Vec::new();
            cert.write_weights_csv(&mut csv).expect("in-memory write");
            let mut json = json_of(&cert);
            if let (Some(n), Some(k)) = (absence, discrete) {
                json = json!({"certificate": json, "absence": json_of(&embedded_absence_check(&v, *n, *c, *k)?)});
            }
            Ok(Report { json, csv: Some(String::from_utf8(csv).expect("utf8")) })
        }
        Command::Example { family, dim, half_width, energy } => {
            let inst = match (family, energy) {
                (FamilyArg::Embedded, None) => embedded_example(*dim)?,
                (FamilyArg::Embedded, Some(en)) => embedded_example_at(*dim, *en)?,
                (FamilyArg::Threshold, None) => threshold_example(*dim)?,
                (FamilyArg::Threshold, Some(_)) => return Err(pre("--energy applies to the embedded family only")),
            };
            let rows = verify_sweep(&inst, half_width)?;
            let mut csv = Vec::new();
            write_residual_csv(&rows, &mut csv).expect("in-memory write");
            Ok(Report { json: json!({"instance": json_of(&inst), "rows": json_of(&rows)}), csv: Some(String::from_utf8(csv).expect("utf8")) })
        }
        Command::Integrals { kind, dim, builtin, dispersion, m, a, b, radius, torus_tol } => {
            let opts = ScanOptions {
                model: lattice_schrodinger::quadrature::ModelOptions { r: *radius, ..ScanOptions::default().model },
                torus_tol: *torus_tol,
                ..Default::default()
            };
            let scan = match kind {
                KindArg::Torus => {
                    let e = resolve_dispersion(*dim, *builtin, dispersion.as_deref())?;
                    let one = |_: &[f64]| C64::new(1.0, 0.0);
                    uniform_bound_scan(ScanKind::Torus, ScanTarget::Torus { e: &e, chi: &one, chi_c2: Some(1.0) }, a, b, &opts)?
                }
                k => {
                    let d = dim.ok_or_else(|| pre("model integrals need an explicit dimension -d"))?;
                    let f = SmoothBump { dim: d, radius: *radius };
                    let sk = match k {
                        KindArg::L1 => ScanKind::L1,
                        KindArg::L2 => ScanKind::L2,
                        _ => ScanKind::L3 { m: m.ok_or_else(|| pre("L3 needs -m"))? },
                    };
                    uniform_bound_scan(sk, ScanTarget::Model(&f), a, b, &opts)?
                }
            };
            let mut csv = Vec::new();
            scan.write_csv(&mut csv).expect("in-memory write");
            Ok(Report { json: json_of(&scan), csv: Some(String::from_utf8(csv).expect("utf8")) })
        }
        Command::EstimateC { disp, half_width, potential, probes, z, kappa, override_guard } => {
            let e = dispersion_of(disp)?;
            let b = BoxLattice::new(e.dim(), *half_width)?;
            let mut vs = potential.iter().map(|p| load_potential(p)).collect::<Outcome<Vec<_>>>()?;
            for _ in 0..*probes {
                let n = rand::Rng::gen_range(&mut rng, 1..=3);
                vs.push(Potential::random(&mut rng, e.dim(), n, 2.min(*half_width), 1.0)?);
            }
            if vs.is_empty() {
                return Err(pre("estimate-c needs --potential or --probes"));
            }
            let zs = z.iter().map(|s| parse_z(s)).collect::<Outcome<Vec<_>>>()?;
            let opts = ResolventOptions { kappa: *kappa, override_guard: *override_guard, residual_tol: tol.solve_residual, ..Default::default() };
            let r = estimate_c_resolv(&e, &vs, &zs, &b, &opts)?;
            let csv = csv_lines(
                "probe,re_z,im_z,expression,norm,weight,ratio",
                r.rows.iter().map(|w| format!("{},{:e},{:e},{},{:e},{:e},{:e}", w.probe, w.z[0], w.z[1], w.expression, w.norm, w.weight, w.ratio)),
            );
            Ok(Report { json: json_of(&r), csv: Some(csv) })
        }
        Command::ResolventScan { disp, half_width, potential, re, kappa } => {
            let e = dispersion_of(disp)?;
            let v = potential_or_zero(potential, e.dim())?;
            let opts = ResolventOptions { kappa: *kappa, residual_tol: tol.solve_residual, ..Default::default() };
            let rows = weighted_kernel_scan(&e, &v, re, half_width, &opts)?;
            let csv = csv_lines(
                "l,re_z,im_z,max_ratio",
                rows.iter().map(|r| format!("{},{:e},{:e},{:e}", r.half_width, r.z[0], r.z[1], r.max_ratio)),
            );
            Ok(Report { json: json_of(&rows), csv: Some(csv) })
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tol = match load_tolerances(cli.tol.as_deref()) {
        Ok(t) => t,
        Err(f) => return fail(f),
    };
    let report = match run(&cli.command, &tol, cli.seed) {
        Ok(r) => r,
        Err(f) => return fail(f),
    };
    let config = json_of(&RunConfig { command: &cli.command, tolerances: &tol, format: cli.format, seed: cli.seed });
    let text = match (cli.format, report.csv) {
        (Format::Json, _) => {
            let mut s = serde_json::to_string_pretty(&json!({"config": config, "result": report.json})).expect("json");
            s.push('\n');
            s
        }
        (Format::Csv, Some(csv)) => format!("# config: {config}\n{csv}"),
        (Format::Csv, None) => return fail(pre("this command has no CSV form; use --format json")),
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = write_atomic(path, text.as_bytes()) {
                return fail(pre(format!("cannot write {}: {e}", path.display())));
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}

fn fail(f: Failure) -> ExitCode {
    match f {
        Failure::Precondition(m) => {
            eprintln!("lsch: {m}");
            ExitCode::from(2)
        }
        Failure::Numerical(m) => {
            eprintln!("lsch: {m}");
            ExitCode::from(1)
        }
    }
}
