//! Line fields, their pushforward, canonical fields built from resolvents,
//! Cauchy-type transforms and the area-integral diagnostics.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{integrate, CellSet, FundamentalSetApprox, Grid, Region, Scheme};
use crate::poly::Poly;
use crate::rational::{MapKind, RationalMap};
use crate::residue::{poles as map_poles, Kernel};
use crate::sampling::{mc_polar_disk, stream_rng, Estimate};
use crate::transfer::Resolvent;
use crate::Cplx;

/// Derivatives below this modulus count as critical.
pub const CRITICAL_TOL: f64 = 1e-12;

/// `|r| < ZERO_THRESHOLD · (1 + |r|_abs)` makes the canonical field vanish.
pub const ZERO_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LineField {
    /// `μ = |q|/q` for the rational function `q = num/den`.
    Analytic { num: Poly, den: Poly },
    /// One value per grid cell, each of modulus 0 or 1; zero outside the grid.
    Sampled { grid: Grid, values: Vec<Cplx> },
    /// A constant of modulus 1, or 0 for the zero field.
    Constant(Cplx),
}

fn unit_or_zero(v: Cplx) -> bool {
    v.norm() == 0.0 || (v.norm() - 1.0).abs() <= 1e-12
}

impl LineField {
    pub fn analytic(num: Poly, den: Poly) -> Result<Self> {
        if num.is_zero() || den.is_zero() {
            return Err(Error::InvalidInput("q must be a nonzero ratio of polynomials".into()));
        }
        Ok(LineField::Analytic { num, den })
    }

    pub fn sampled(grid: Grid, values: Vec<Cplx>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput("one value per cell required".into()));
        }
        if let Some(v) = values.iter().find(|v| !unit_or_zero(**v)) {
            return Err(Error::InvalidInput(format!("field value {v} is not of modulus 0 or 1")));
        }
        Ok(LineField::Sampled { grid, values })
    }

    /// Sampled field equal to `value(center)` on the cells of `set` and 0 elsewhere.
    pub fn on_cells(set: &CellSet, value: impl Fn(Cplx) -> Cplx + Sync) -> Result<Self> {
        let grid = *set.grid();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| if set.contains(i) { value(grid.center(i)) } else { Cplx::new(0.0, 0.0) })
            .collect();
        LineField::sampled(grid, values)
    }

    pub fn constant(t: Cplx) -> Result<Self> {
        if !unit_or_zero(t) {
            return Err(Error::InvalidInput("constant field needs |t| ∈ {0, 1}".into()));
        }
        Ok(LineField::Constant(t))
    }

    pub fn zero() -> Self {
        LineField::Constant(Cplx::new(0.0, 0.0))
    }

    pub fn eval(&self, x: Cplx) -> Cplx {
        match self {
            LineField::Analytic { num, den } => {
                let q = num.eval(x) / den.eval(x);
                if q.norm() == 0.0 || !q.is_finite() {
                    Cplx::new(0.0, 0.0)
                } else {
                    q.conj() / q.norm()
                }
            }
            LineField::Sampled { grid, values } => grid.cell_of(x).map_or(Cplx::new(0.0, 0.0), |i| values[i]),
            LineField::Constant(t) => *t,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LineField::Constant(t) => t.norm() == 0.0,
            LineField::Sampled { values, .. } => values.iter().all(|v| v.norm() == 0.0),
            LineField::Analytic { .. } => false,
        }
    }

    /// `Σ αᵢ νᵢ` for sampled fields on one grid; the result must again be a line field.
    pub fn combine(terms: &[(Cplx, &LineField)]) -> Result<Self> {
        let mut grid = None;
        for (_, t) in terms {
            match t {
                LineField::Sampled { grid: g, .. } if grid.is_none() || grid == Some(*g) => grid = Some(*g),
                _ => return Err(Error::InvalidInput("combine needs sampled fields on a shared grid".into())),
            }
        }
        let grid = grid.ok_or_else(|| Error::InvalidInput("no terms".into()))?;
        let values = (0..grid.len())
            .map(|i| {
                terms
                    .iter()
                    .map(|(a, t)| match t {
                        LineField::Sampled { values, .. } => a * values[i],
                        _ => unreachable!(),
                    })
                    .sum()
            })
            .collect();
        LineField::sampled(grid, values)
    }
}

/// `(f*ν)(x) = ν(f(x)) |f'(x)|² / f'(x)²`.
pub fn pushforward_field(f: &RationalMap, nu: &LineField, x: Cplx) -> Result<Cplx> {
    let (fx, d) = f
        .eval_plane(x)
        .ok_or_else(|| Error::InvalidInput(format!("{x} is a pole")))?;
    if d.norm() < CRITICAL_TOL {
        return Err(Error::CriticalPoint { x });
    }
    Ok(nu.eval(fx) * d.conj() / d)
}

/// `((fⁿ)*ν)(x)` by chaining the one-step pushforward along the orbit.
pub fn pushforward_iterate(f: &RationalMap, nu: &LineField, x: Cplx, n: usize) -> Result<Cplx> {
    let mut z = x;
    let mut phase = Cplx::new(1.0, 0.0);
    for step in 0..n {
        let (fz, d) = f
            .eval_plane(z)
            .ok_or_else(|| Error::InvalidInput(format!("orbit of {x} hits a pole")))?;
        if d.norm() < CRITICAL_TOL {
            return Err(Error::CriticalOrbit { x, step });
        }
        phase *= d.conj() / d;
        z = fz;
    }
    Ok(nu.eval(z) * phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaValue {
    pub value: Cplx,
    /// Set when `|r|` fell below the zero threshold and the value was replaced by 0.
    pub vanished: bool,
}

/// Canonical field `|r_ψ|/r_ψ` at `x`.
pub fn sigma_field(r: &Resolvent, x: Cplx) -> Result<SigmaValue> {
    let e = r.eval(x)?;
    Ok(sigma_from(e.value, e.abs_value))
}

fn sigma_from(value: Cplx, abs_value: f64) -> SigmaValue {
    if value.norm() < ZERO_THRESHOLD * (1.0 + abs_value) {
        SigmaValue { value: Cplx::new(0.0, 0.0), vanished: true }
    } else {
        SigmaValue { value: value.conj() / value.norm(), vanished: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SigmaBranch {
    /// `x` lies in a `K'` cell.
    InKPrime,
    /// `fⁱ(x)` is the first iterate in `K'`.
    Transported(usize),
    /// No iterate up to the depth enters `K'`.
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaNValue {
    pub value: Cplx,
    pub branch: SigmaBranch,
}

/// The spread field: `σ` on `K'`, transported from the first entry into `K'`, 0 otherwise.
pub fn sigma_n_field(r: &Resolvent, fs: &FundamentalSetApprox, x: Cplx, depth: usize) -> Result<SigmaNValue> {
    if fs.k_prime.contains_point(x) {
        return Ok(SigmaNValue { value: sigma_field(r, x)?.value, branch: SigmaBranch::InKPrime });
    }
    let f = r.map();
    let mut z = x;
    let mut phase = Cplx::new(1.0, 0.0);
    for i in 1..=depth {
        let Some((fz, d)) = f.eval_plane(z) else { break };
        if d.norm() < CRITICAL_TOL {
            return Err(Error::CriticalOrbit { x, step: i - 1 });
        }
        phase *= d.conj() / d;
        z = fz;
        if fs.k_prime.contains_point(z) {
            let s = sigma_field(r, z)?;
            return Ok(SigmaNValue { value: s.value * phase, branch: SigmaBranch::Transported(i) });
        }
    }
    Ok(SigmaNValue { value: Cplx::new(0.0, 0.0), branch: SigmaBranch::Outside })
}

/// Finite support box of a field, if any.
fn support(nu: &LineField) -> Option<CellSet> {
    match nu {
        LineField::Sampled { grid, values } => Some(CellSet::from_fn(*grid, |i| values[i].norm() > 0.0)),
        LineField::Constant(t) if t.norm() == 0.0 => None,
        _ => None,
    }
}

/// `∫ ν(x) k(x) dA` for a bounded field and the kernel centered at `z`:
/// `1/(z − x)` or `z(z−1)/(x(x−1)(x−z))`.
pub fn cauchy_transform(nu: &LineField, z: Cplx, kernel: Kernel, n: usize, seed: u64) -> Result<Estimate> {
    if nu.is_zero() {
        return Ok(Estimate::exact(Cplx::new(0.0, 0.0)));
    }
    match (kernel, support(nu)) {
        (Kernel::Cauchy, Some(cells)) => integrate(
            |x| nu.eval(x) / (z - x),
            Region::Cells(&cells),
            Scheme::PolarRefined { n, seed },
            &[z],
        ),
        (Kernel::Cauchy, None) => Err(Error::UnboundedSupport),
        (Kernel::Sphere, Some(cells)) => integrate(
            |x| nu.eval(x) * sphere_kernel(z, x),
            Region::Cells(&cells),
            Scheme::PolarRefined { n, seed },
            &[Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0), z],
        ),
        (Kernel::Sphere, None) => sphere_transform(nu, z, n, seed),
    }
}

fn sphere_kernel(z: Cplx, x: Cplx) -> Cplx {
    z * (z - 1.0) / (x * (x - 1.0) * (x - z))
}

/// `∫_ℂ ν(x) ψ_z(x) dA`, with the exterior of a large disk handled through `u = 1/x`.
pub fn sphere_transform(nu: &LineField, z: Cplx, n: usize, seed: u64) -> Result<Estimate> {
    if z.norm() < 1e-12 || (z - 1.0).norm() < 1e-12 {
        return Err(Error::InvalidInput("sphere kernel needs z ∉ {0, 1}".into()));
    }
    if support(nu).is_some() {
        return cauchy_transform(nu, z, Kernel::Sphere, n, seed);
    }
    if nu.is_zero() {
        return Ok(Estimate::exact(Cplx::new(0.0, 0.0)));
    }
    let r0 = 2.0 * z.norm().max(1.0) + 1.0;
    let inner = integrate(
        |x| nu.eval(x) * sphere_kernel(z, x),
        Region::Disk(Cplx::new(0.0, 0.0), r0),
        Scheme::PolarRefined { n: n / 2, seed },
        &[Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0), z],
    )?;
    // dA(x) = |u|⁻⁴ dA(u) and ψ_z(1/u) = z(z−1)u³ / ((1−u)(1−zu)).
    let zz = z * (z - 1.0);
    let outer = mc_polar_disk(Cplx::new(0.0, 0.0), 1.0 / r0, n - n / 2, seed ^ 0x07e0, |u| {
        let un = u.norm();
        if un == 0.0 {
            return Cplx::new(0.0, 0.0);
        }
        nu.eval(u.inv()) * zz * u * u * u / ((1.0 - u) * (1.0 - z * u) * (un * un * un * un))
    });
    Ok(inner.add(outer))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FVector {
    pub components: Vec<Cplx>,
    pub stderrs: Vec<f64>,
    pub kind: MapKind,
}

/// Transform vector of `ν` at the critical values (and at `a = f(∞)` with two derivatives for
/// normalized rational maps).
pub fn f_vector(nu: &LineField, f: &RationalMap, n: usize, seed: u64) -> Result<FVector> {
    let mut components = Vec::new();
    let mut stderrs = Vec::new();
    let mut push = |e: Estimate| {
        components.push(e.value);
        stderrs.push(e.stderr);
    };
    match f.kind() {
        MapKind::Polynomial | MapKind::NormalizedRational { .. } => {
            for &v in f.critical_values() {
                push(cauchy_transform(nu, v, Kernel::Cauchy, n, seed)?);
            }
            if let MapKind::NormalizedRational { a } = f.kind() {
                let cells = support(nu).ok_or(Error::UnboundedSupport)?;
                for (k, sign) in [(1, Cplx::new(1.0, 0.0)), (2, Cplx::new(-1.0, 0.0)), (3, Cplx::new(2.0, 0.0))] {
                    // d^j/dz^j ∫ ν/(z − x) = (−1)^j j! ∫ ν/(z − x)^{j+1}
                    push(integrate(
                        |x| nu.eval(x) * sign / (a - x).powi(k),
                        Region::Cells(&cells),
                        Scheme::PolarRefined { n, seed },
                        &[a],
                    )?);
                }
            }
        }
        MapKind::SphereJulia => {
            for &v in f.critical_values() {
                push(sphere_transform(nu, v, n, seed)?);
            }
        }
        MapKind::General => return Err(Error::KindRequired),
    }
    Ok(FVector { components, stderrs, kind: f.kind() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LattesField {
    pub field: LineField,
    /// `q(f(z)) f'(z)² / q(z)`, a positive constant for an invariant field.
    pub lambda: f64,
    pub residual: f64,
    pub points: [Cplx; 3],
}

/// Invariant field `|q|/q`, `q = 1/Π(z − pᵢ)`, over the three finite postcritical points.
pub fn lattes_field(f: &RationalMap) -> Result<LattesField> {
    let cloud = f.postcritical_cloud(200, 1e-9);
    let pts: Vec<Cplx> = cloud.all_finite().collect();
    if pts.len() != 3 {
        return Err(Error::NotLattesLike(format!("{} finite postcritical points", pts.len())));
    }
    let points = [pts[0], pts[1], pts[2]];
    let den = Poly::from_roots(&points, Cplx::new(1.0, 0.0));
    let q = |z: Cplx| den.eval(z).inv();
    let spread = 2.0 * (1.0 + pts.iter().map(|p| p.norm()).fold(0.0, f64::max));
    let crit: Vec<Cplx> = f.critical_portrait().finite_points().map(|(c, _)| c).collect();
    let poles = map_poles(f)?;
    let mut rng = stream_rng(0x1a77e5, 0);
    let mut ratios = Vec::with_capacity(100);
    while ratios.len() < 100 {
        let z = Cplx::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
        if crit.iter().chain(&poles).chain(&points).any(|p| (z - p).norm() < 1e-3) {
            continue;
        }
        let Some((fz, d)) = f.eval_plane(z) else { continue };
        if points.iter().any(|p| (fz - p).norm() < 1e-9) {
            continue;
        }
        ratios.push(q(fz) * d * d / q(z));
    }
    let mut re: Vec<f64> = ratios.iter().map(|r| r.re).collect();
    re.sort_by(f64::total_cmp);
    let lambda = 0.5 * (re[49] + re[50]);
    let residual = ratios
        .iter()
        .map(|r| (r - lambda).norm())
        .fold(0.0, f64::max);
    if lambda <= 0.0 || residual > 1e-6 * lambda {
        return Err(Error::NotLattesLike(format!("ratio λ = {lambda}, residual {residual:e}")));
    }
    Ok(LattesField {
        field: LineField::Analytic { num: Poly::constant(Cplx::new(1.0, 0.0)), den },
        lambda,
        residual,
        points,
    })
}

/// `max` and mean of `|f*μ(x) − μ(x)|` over admissible samples of `[-r, r]²`.
pub fn invariance_residual(f: &RationalMap, mu: &LineField, samples: usize, seed: u64, r: f64) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be ≥ 1".into()));
    }
    const RETRY_CAP: usize = 100;
    let res: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            for _ in 0..RETRY_CAP {
                let x = Cplx::new(rng.gen_range(-r..r), rng.gen_range(-r..r));
                if let Ok(v) = pushforward_field(f, mu, x) {
                    return (v - mu.eval(x)).norm();
                }
            }
            0.0
        })
        .collect();
    let max = res.iter().copied().fold(0.0, f64::max);
    Ok((max, res.iter().sum::<f64>() / samples as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticScheme {
    /// Cell midpoints on the grid (poles are not refined).
    Midpoint,
    /// Monte Carlo with polar refinement near the singularities.
    MonteCarlo { n: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsOptions {
    /// Truncation depth, shared by the resolvent series and the pullback layers.
    pub depth: usize,
    pub scheme: DiagnosticScheme,
    /// Also integrate `|r|` over `K'` by midpoints on sub-cells refined by this factor.
    pub reference_factor: Option<usize>,
    /// The integration region for the right-hand side is the pullback support dilated by this
    /// many cells.
    pub dilation: usize,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            depth: 6,
            scheme: DiagnosticScheme::MonteCarlo { n: 200_000, seed: 1 },
            reference_factor: None,
            dilation: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub n: usize,
    /// `∫_{K'} |r|`
    pub int_abs_r: Estimate,
    /// `Σ_i ∫ 1[fⁱ(y) ∈ K'] ((fⁱ)*σ)(y) ψ(y) dA(y)`
    pub int_sigma_psi: Estimate,
    /// Combined standard error of the two columns.
    pub stderr: f64,
    pub depth: usize,
    pub reference_abs_r: Option<f64>,
}

impl DiagnosticRow {
    pub fn difference(&self) -> f64 {
        (self.int_abs_r.value - self.int_sigma_psi.value).norm()
    }
}

/// `∫_{K'}|r_ψ|` against `∫ σₙ ψ` for each fundamental set.
///
/// The resolvent is truncated at `opts.depth`; the right-hand side sums every `i ≤ depth` with
/// `fⁱ(y) ∈ K'` separately, so both sides equal `∫_{K'} σ Σ_{i≤depth} Tⁱψ` exactly.
pub fn integral_diagnostics(
    r: &Resolvent,
    j_cells: &CellSet,
    sets: &[FundamentalSetApprox],
    opts: &DiagnosticsOptions,
) -> Result<Vec<DiagnosticRow>> {
    let f = r.map();
    let ctrl = crate::transfer::ResolventCtrl {
        tol: 0.0,
        max_depth: opts.depth,
        allow_outside: true,
        ..*r.ctrl()
    };
    let r = Resolvent::new(f, r.psi().clone(), ctrl);
    let cloud: Vec<Cplx> = r.cloud().all_finite().collect();
    let psi_poles = r.psi().poles();
    sets.iter()
        .enumerate()
        .map(|(n, fs)| {
            let abs_r = |x: Cplx| r.eval(x).map_or(Cplx::new(0.0, 0.0), |e| Cplx::new(e.value.norm(), 0.0));
            let spread = |y: Cplx| -> Cplx {
                let mut total = Cplx::new(0.0, 0.0);
                let mut z = y;
                let mut phase = Cplx::new(1.0, 0.0);
                let psi = r.psi().eval(y);
                for i in 0..=opts.depth {
                    if i > 0 {
                        let Some((fz, d)) = f.eval_plane(z) else { break };
                        if d.norm() < CRITICAL_TOL {
                            break;
                        }
                        phase *= d.conj() / d;
                        z = fz;
                    }
                    if fs.k_prime.contains_point(z) {
                        if let Ok(e) = r.eval(z) {
                            total += sigma_from(e.value, e.abs_value).value * phase * psi;
                        }
                    }
                }
                total
            };
            let support = pullback_support(f, j_cells, fs, opts.depth).dilate(opts.dilation);
            log::debug!("pullback support: {} cells", support.count());
            let (lhs, rhs) = match opts.scheme {
                DiagnosticScheme::Midpoint => (
                    integrate(abs_r, Region::Cells(&fs.k_prime), Scheme::CellMidpoint, &[])?,
                    integrate(spread, Region::Cells(&support), Scheme::CellMidpoint, &[])?,
                ),
                DiagnosticScheme::MonteCarlo { n: samples, seed } => (
                    integrate(abs_r, Region::Cells(&fs.k_prime), Scheme::PolarRefined { n: samples, seed }, &cloud)?,
                    integrate(
                        spread,
                        Region::Cells(&support),
                        Scheme::PolarRefined { n: samples, seed: seed ^ 0x5a5a },
                        &psi_poles,
                    )?,
                ),
            };
            let reference_abs_r = opts.reference_factor.map(|k| refined_midpoint(&fs.k_prime, k, &abs_r));
            Ok(DiagnosticRow {
                n,
                stderr: lhs.stderr.hypot(rhs.stderr),
                int_abs_r: lhs,
                int_sigma_psi: rhs,
                depth: opts.depth,
                reference_abs_r,
            })
        })
        .collect()
}

/// Cells whose `i`-th image, for some `i ≤ depth`, may meet `K'`.
///
/// The image of a cell is estimated as a disk of radius `|(fⁱ)'(center)| · diagonal` around the
/// image of its center, doubled for safety.
fn pullback_support(f: &RationalMap, j_cells: &CellSet, fs: &FundamentalSetApprox, depth: usize) -> CellSet {
    let grid = *j_cells.grid();
    let diag = grid.cell_diagonal();
    let targets: Vec<Cplx> = fs.k_prime.iter().map(|i| grid.center(i)).collect();
    let dist = |z: Cplx| targets.iter().map(|t| (z - t).norm()).fold(f64::INFINITY, f64::min) - 0.5 * diag;
    CellSet::from_fn(grid, |i| {
        let mut z = grid.center(i);
        let mut d = Cplx::new(1.0, 0.0);
        for step in 0..=depth {
            if step > 0 {
                match f.eval_plane(z) {
                    Some((w, dw)) => {
                        d *= dw;
                        z = w;
                    }
                    None => return false,
                }
            }
            if dist(z) <= d.norm() * diag + diag {
                return true;
            }
        }
        false
    })
}

/// Midpoint rule over each cell of `set` split into `k × k` sub-cells.
fn refined_midpoint(set: &CellSet, k: usize, g: &(impl Fn(Cplx) -> Cplx + Sync)) -> f64 {
    let grid = set.grid();
    let (sx, sy) = (grid.dx() / k as f64, grid.dy() / k as f64);
    let idx = set.indices();
    idx.par_iter()
        .map(|&i| {
            let (ix, iy) = grid.coords(i);
            let corner = grid.vertex(ix, iy);
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    let p = corner + Cplx::new((a as f64 + 0.5) * sx, (b as f64 + 0.5) * sy);
                    acc += g(p).re;
                }
            }
            acc * sx * sy
        })
        .sum()
}

/// `∫|r|` over the J-cells farther than `δ` from the postcritical cloud, for each `δ`.
pub fn divergence_scan(r: &Resolvent, j_cells: &CellSet, deltas: &[f64]) -> Vec<(f64, f64)> {
    let grid = *j_cells.grid();
    let cloud: Vec<Cplx> = r.cloud().all_finite().collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !j_cells.contains(i) {
                return 0.0;
            }
            r.eval(grid.center(i)).map_or(0.0, |e| e.value.norm())
        })
        .collect();
    deltas
        .iter()
        .map(|&delta| {
            let total: f64 = (0..grid.len())
                .filter(|&i| cloud.iter().all(|p| (grid.center(i) - p).norm() > delta))
                .map(|i| values[i])
                .sum();
            (delta, total * grid.cell_area())
        })
        .collect()
}
