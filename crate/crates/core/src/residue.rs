//! Residue data of the transfer operator and numerical checks of its exact
//! identities.
//!
//! Contour integrals are evaluated with the trapezoidal rule on circles,
//! which converges geometrically for analytic integrands.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linefield;
use crate::poly::{multiplicity_radius, Poly, ROOT_TOL};
use crate::rational::{dedup_tol, MapKind, RationalMap};
use crate::sampling::{mc_box, mc_uniform_disk, stream_rng};
use crate::transfer::{
    finite_preimages, test_functions, transfer_apply, transfer_apply_fallible, Resolvent, ResolventCtrl,
    TestFunction,
};
use crate::Cplx;

/// Trapezoidal nodes per contour.
pub const QUAD_NODES: usize = 512;

/// Minimal separation enforced between sampled points and singular loci.
pub const GUARD: f64 = 1e-3;

const PROBE_TOL: f64 = 1e-9;
const PROBE_SEED: u64 = 0x5e_ed0f_9e0b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Kernel {
    /// `1/(z − x)`
    Cauchy,
    /// `z(z−1) / (x(x−1)(x−z))`
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidueData {
    /// `(v_j, L_j(z))` in the order of the map's critical values.
    pub l: Vec<(Cplx, Cplx)>,
    /// Contour term at infinity evaluated at the first probe point (zero for polynomials and the
    /// sphere kernel).
    pub i_term: Cplx,
    pub probes_agree: bool,
    pub probes: [Cplx; 2],
}

impl ResidueData {
    /// `Σ L_j k(x, v_j)` for the kernel's pole factor `k`.
    pub fn sum_over_values(&self, kernel: Kernel, x: Cplx) -> Cplx {
        self.l
            .iter()
            .map(|&(v, l)| l * pole_factor(kernel, v, x))
            .sum()
    }
}

/// `1/(x − v)` for the Cauchy kernel, `ψ_v(x)` for the sphere kernel.
fn pole_factor(kernel: Kernel, v: Cplx, x: Cplx) -> Cplx {
    match kernel {
        Kernel::Cauchy => (x - v).inv(),
        Kernel::Sphere => sphere_kernel(v, x),
    }
}

fn sphere_kernel(z: Cplx, x: Cplx) -> Cplx {
    z * (z - 1.0) / (x * (x - 1.0) * (x - z))
}

/// `(1/2πi) ∮_{|w−center|=radius} h(w) dw` by the trapezoidal rule.
pub fn contour_integral(center: Cplx, radius: f64, nodes: usize, h: impl Fn(Cplx) -> Cplx) -> Cplx {
    let mut acc = Cplx::new(0.0, 0.0);
    for k in 0..nodes {
        let offset = Cplx::from_polar(radius, TAU * k as f64 / nodes as f64);
        acc += h(center + offset) * offset;
    }
    acc / nodes as f64
}

/// Residue integrand for the chosen kernel.
fn integrand(f: &RationalMap, kernel: Kernel, z: Cplx, x: Cplx, w: Cplx) -> Cplx {
    let Some((fw, dfw)) = f.eval_plane(w) else {
        return Cplx::new(0.0, 0.0);
    };
    match kernel {
        Kernel::Cauchy => (dfw * (fw - x) * (w - z)).inv(),
        Kernel::Sphere => sphere_kernel(fw, x) * sphere_kernel(z, w) / dfw,
    }
}

/// Finite poles of `f`.
pub fn poles(f: &RationalMap) -> Result<Vec<Cplx>> {
    if f.den().degree() == 0 {
        return Ok(Vec::new());
    }
    Ok(f.den().roots(ROOT_TOL)?.into_iter().map(|r| r.value).collect())
}

/// Two deterministic probe points at distance at least 1 from each critical value (and from `0`,
/// `1` and `f(∞)` where those matter).
pub fn probe_points(f: &RationalMap) -> Result<[Cplx; 2]> {
    let mut avoid: Vec<Cplx> = f.critical_values().to_vec();
    match f.kind() {
        MapKind::NormalizedRational { a } => avoid.push(a),
        MapKind::SphereJulia => avoid.extend([Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0)]),
        _ => {}
    }
    if let Some(a) = f.value_at_infinity().finite() {
        avoid.push(a);
    }
    let spread = 2.0 * (1.0 + avoid.iter().map(|v| v.norm()).fold(0.0, f64::max));
    let mut rng = stream_rng(PROBE_SEED, 0);
    let mut found: Vec<Cplx> = Vec::new();
    for _ in 0..10_000 {
        let x = Cplx::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
        if avoid.iter().all(|v| (x - v).norm() >= 1.0) && found.iter().all(|p| (x - p).norm() >= 1.0) {
            found.push(x);
            if found.len() == 2 {
                return Ok([found[0], found[1]]);
            }
        }
    }
    Err(Error::InvalidInput("no probe points found".into()))
}

/// Extracts `L_j(z)` for every critical value `v_j`.
pub fn l_coefficients(f: &RationalMap, z: Cplx, kernel: Kernel) -> Result<ResidueData> {
    l_coefficients_with(f, z, kernel, QUAD_NODES)
}

pub fn l_coefficients_with(f: &RationalMap, z: Cplx, kernel: Kernel, nodes: usize) -> Result<ResidueData> {
    if kernel == Kernel::Sphere && (z.norm() < 1e-12 || (z - 1.0).norm() < 1e-12) {
        return Err(Error::InvalidInput("sphere kernel needs z ∉ {0, 1}".into()));
    }
    for (c, _) in f.critical_portrait().finite_points() {
        if (z - c).norm() <= multiplicity_radius(ROOT_TOL, c) {
            return Err(Error::CriticalZ { z, critical: c });
        }
    }
    let probes = probe_points(f)?;
    let first = l_at_probe(f, z, kernel, probes[0], nodes)?;
    let second = l_at_probe(f, z, kernel, probes[1], nodes)?;
    for ((_, a), (_, b)) in first.iter().zip(&second) {
        let difference = (a - b).norm();
        if difference > PROBE_TOL * (1.0 + a.norm()) {
            return Err(Error::ProbeMismatch { difference });
        }
    }
    let l = first;
    let i_term = if kernel == Kernel::Cauchy && !f.is_polynomial() {
        i_infinity(f, z, probes[0])?
    } else {
        Cplx::new(0.0, 0.0)
    };
    Ok(ResidueData { l, i_term, probes_agree: true, probes })
}

/// `L_j(z)` from the contour integrals evaluated at the single probe `x`.
pub fn l_at_probe(f: &RationalMap, z: Cplx, kernel: Kernel, x: Cplx, nodes: usize) -> Result<Vec<(Cplx, Cplx)>> {
    let portrait = f.critical_portrait();
    let crit: Vec<(Cplx, Cplx)> = portrait
        .points
        .iter()
        .filter_map(|cp| Some((cp.point.finite()?, cp.value.finite()?)))
        .collect();
    let all_crit: Vec<Cplx> = portrait.finite_points().map(|(c, _)| c).collect();
    let mut obstacles = poles(f)?;
    obstacles.extend(finite_preimages(f, x)?.into_iter().map(|(y, _)| y));
    let mut l: Vec<(Cplx, Cplx)> = f.critical_values().iter().map(|&v| (v, Cplx::new(0.0, 0.0))).collect();
    for &(c, v) in &crit {
        let mut eps = 0.1f64.min(0.5 * (z - c).norm());
        for &o in all_crit.iter().chain(&obstacles) {
            let d = (o - c).norm();
            if d > 0.0 {
                eps = eps.min(0.5 * d);
            }
        }
        let slot = l
            .iter()
            .position(|(u, _)| (u - v).norm() <= dedup_tol(v))
            .ok_or_else(|| Error::InvalidMap("critical value missing from portrait".into()))?;
        let i_c = contour_integral(c, eps, nodes, |w| integrand(f, kernel, z, x, w));
        l[slot].1 += i_c / pole_factor(kernel, v, x);
    }
    Ok(l)
}

/// `1 + max |p_k / p_n|`, a bound on the moduli of the roots.
fn cauchy_bound(p: &Poly) -> f64 {
    if p.degree() == 0 {
        return 0.0;
    }
    let lead = p.leading().norm();
    1.0 + p.coeffs()[..p.degree()]
        .iter()
        .map(|a| a.norm() / lead)
        .fold(0.0, f64::max)
}

/// Contour radius used by [`i_infinity`].
pub fn infinity_radius(f: &RationalMap, z: Cplx, x: Cplx) -> f64 {
    let crit = f.num().derivative().mul(f.den()).sub(&f.num().mul(&f.den().derivative()));
    let scale = [
        cauchy_bound(f.num()),
        cauchy_bound(f.den()),
        cauchy_bound(&f.num().sub(&f.den().scale(x))),
        cauchy_bound(&crit),
    ]
    .into_iter()
    .fold(z.norm().max(x.norm()), f64::max);
    10.0 * (1.0 + scale)
}

/// `(1/2πi) ∮_{|w|=R} dw / (f'(w)(f(w) − x)(w − z))`, certified across the radii `R` and `2R`.
pub fn i_infinity(f: &RationalMap, z: Cplx, x: Cplx) -> Result<Cplx> {
    i_infinity_with(f, z, x, QUAD_NODES)
}

pub fn i_infinity_with(f: &RationalMap, z: Cplx, x: Cplx, nodes: usize) -> Result<Cplx> {
    let r = infinity_radius(f, z, x);
    let h = |w| integrand(f, Kernel::Cauchy, z, x, w);
    let origin = Cplx::new(0.0, 0.0);
    let a = contour_integral(origin, r, nodes, h);
    let b = contour_integral(origin, 2.0 * r, nodes, h);
    let difference = (a - b).norm();
    if difference > 1e-8 * (1.0 + a.norm()) {
        return Err(Error::RadiusInstability { difference });
    }
    Ok(a)
}

/// Least-squares fit of `z ↦ I(z, x)` by a polynomial of degree at most 2; returns the maximum
/// fit residual over `zs`.
pub fn i_term_quadratic_fit(f: &RationalMap, x: Cplx, zs: &[Cplx]) -> Result<f64> {
    if zs.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 sample points".into()));
    }
    let values: Vec<Cplx> = zs.iter().map(|&z| i_infinity(f, z, x)).collect::<Result<_>>()?;
    // Normal equations AᴴA c = Aᴴy with A = [1, z, z²].
    let mut m = [[Cplx::new(0.0, 0.0); 4]; 3];
    for (&z, &y) in zs.iter().zip(&values) {
        let row = [Cplx::new(1.0, 0.0), z, z * z];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i].conj() * row[j];
            }
            m[i][3] += row[i].conj() * y;
        }
    }
    let coeffs = solve3(m).ok_or_else(|| Error::InvalidInput("degenerate sample points".into()))?;
    Ok(zs
        .iter()
        .zip(&values)
        .map(|(&z, &y)| (coeffs[0] + coeffs[1] * z + coeffs[2] * z * z - y).norm())
        .fold(0.0, f64::max))
}

fn solve3(mut m: [[Cplx; 4]; 3]) -> Option<[Cplx; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].norm().total_cmp(&m[b][col].norm()))?;
        if m[piv][col].norm() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let factor = m[row][col] / m[col][col];
                for k in col..4 {
                    let t = m[col][k];
                    m[row][k] -= factor * t;
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// The identities that [`verify_identity`] can check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Identity {
    /// Transfer of the Cauchy kernel against its residue expansion.
    CauchyKernel,
    /// Transfer of the sphere kernel against its residue expansion.
    SphereKernel,
    /// `r = ψ + T r` for a truncated resolvent.
    ResolventEquation,
    /// `∫ g f*ν = ∫ ν T g`.
    Duality,
    /// Functional equation of the sphere transform of an invariant field.
    FunctionalEquation,
}

impl Identity {
    pub const ALL: [Identity; 5] = [
        Identity::CauchyKernel,
        Identity::SphereKernel,
        Identity::ResolventEquation,
        Identity::Duality,
        Identity::FunctionalEquation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Identity::CauchyKernel => "lemma_T",
            Identity::SphereKernel => "lemma_Tc",
            Identity::ResolventEquation => "resolvent_eq",
            Identity::Duality => "duality",
            Identity::FunctionalEquation => "cauchy_functional_eq",
        }
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Identity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Identity::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown identity {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub identity_name: String,
    pub sample_count: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub tol: f64,
    pub pass: bool,
    /// `(z, x)` of the worst sample; single-variable identities report `z = x`.
    pub worst_sample: (Cplx, Cplx),
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Samples are drawn from `[-box_radius, box_radius]²`.
    pub box_radius: f64,
    /// Test function used by the resolvent equation (index into the map's catalog).
    pub psi_index: usize,
    pub resolvent: ResolventCtrl,
    /// Monte Carlo draws per integral for the functional equation.
    pub mc_samples: usize,
    pub retry_cap: usize,
    pub duality_radius: f64,
    pub quad_nodes: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            box_radius: 2.0,
            psi_index: 0,
            resolvent: ResolventCtrl { tol: 1e-8, max_depth: 20, ..Default::default() },
            mc_samples: 100_000,
            retry_cap: 20,
            duality_radius: 0.5,
            quad_nodes: QUAD_NODES,
        }
    }
}

/// Checks one identity on `samples` random points (or, for the duality check, with `samples`
/// Monte Carlo draws per side).
pub fn verify_identity(
    f: &RationalMap,
    which: Identity,
    samples: usize,
    tol: f64,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be ≥ 1".into()));
    }
    match which {
        Identity::SphereKernel | Identity::FunctionalEquation if f.kind() != MapKind::SphereJulia => {
            return Err(Error::InvalidInput(format!("{which} needs a map in sphere normal form")))
        }
        Identity::ResolventEquation if f.kind() == MapKind::General => return Err(Error::KindRequired),
        _ => {}
    }
    if which == Identity::Duality {
        let (residual, at) = duality_residual(f, samples, seed, opts)?;
        return Ok(report(which, samples, tol, vec![(residual, (at, at))]));
    }
    let ctx = Context::new(f, which, opts)?;
    let results: Vec<(f64, (Cplx, Cplx))> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            for _ in 0..opts.retry_cap.max(1) {
                let Some((z, x)) = ctx.draw(&mut rng) else { continue };
                if let Ok(r) = ctx.residual(z, x, seed) {
                    return (r, (z, x));
                }
            }
            (f64::INFINITY, (Cplx::new(0.0, 0.0), Cplx::new(0.0, 0.0)))
        })
        .collect();
    Ok(report(which, samples, tol, results))
}

fn report(which: Identity, samples: usize, tol: f64, results: Vec<(f64, (Cplx, Cplx))>) -> VerificationReport {
    let mut worst = (f64::NEG_INFINITY, (Cplx::new(0.0, 0.0), Cplx::new(0.0, 0.0)));
    let mut total = 0.0;
    for &(r, at) in &results {
        total += r;
        if r > worst.0 || r.is_nan() {
            worst = (r, at);
        }
    }
    VerificationReport {
        identity_name: which.name().to_string(),
        sample_count: samples,
        max_residual: worst.0,
        mean_residual: total / results.len() as f64,
        tol,
        pass: worst.0 <= tol,
        worst_sample: worst.1,
    }
}

struct Context<'a> {
    f: &'a RationalMap,
    which: Identity,
    opts: &'a VerifyOptions,
    crit: Vec<Cplx>,
    poles: Vec<Cplx>,
    resolvent: Option<Resolvent>,
    lattes: Option<linefield::LattesField>,
}

impl<'a> Context<'a> {
    fn new(f: &'a RationalMap, which: Identity, opts: &'a VerifyOptions) -> Result<Self> {
        let resolvent = if which == Identity::ResolventEquation {
            let catalog = test_functions(f)?;
            let psi = catalog
                .get(opts.psi_index)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("no test function {}", opts.psi_index)))?;
            Some(Resolvent::new(f, psi, opts.resolvent))
        } else {
            None
        };
        let lattes = if which == Identity::FunctionalEquation {
            Some(linefield::lattes_field(f)?)
        } else {
            None
        };
        Ok(Context {
            f,
            which,
            opts,
            crit: f.critical_portrait().finite_points().map(|(c, _)| c).collect(),
            poles: poles(f)?,
            resolvent,
            lattes,
        })
    }

    fn far(p: Cplx, set: &[Cplx]) -> bool {
        set.iter().all(|q| (p - q).norm() >= GUARD)
    }

    /// One admissible `(z, x)` pair, or `None` if the draw hit a guard.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<(Cplx, Cplx)> {
        let b = self.opts.box_radius;
        let z = Cplx::new(rng.gen_range(-b..b), rng.gen_range(-b..b));
        let x = Cplx::new(rng.gen_range(-b..b), rng.gen_range(-b..b));
        let unit = [Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0)];
        let values = self.f.critical_values();
        match self.which {
            Identity::ResolventEquation => {
                let r = self.resolvent.as_ref()?;
                (Self::far(x, values) && r.in_domain(x)).then_some((x, x))
            }
            _ => {
                if !Self::far(z, &self.crit) || !Self::far(z, &self.poles) {
                    return None;
                }
                let (fz, _) = self.f.eval_plane(z)?;
                if !Self::far(x, values) || (x - fz).norm() < GUARD {
                    return None;
                }
                if let Some(a) = self.f.value_at_infinity().finite() {
                    if (x - a).norm() < GUARD {
                        return None;
                    }
                }
                if self.f.kind() == MapKind::SphereJulia && (!Self::far(z, &unit) || !Self::far(x, &unit)) {
                    return None;
                }
                Some((z, x))
            }
        }
    }

    fn residual(&self, z: Cplx, x: Cplx, seed: u64) -> Result<f64> {
        let f = self.f;
        match self.which {
            Identity::CauchyKernel => {
                let lhs = transfer_apply(f, |y| (z - y).inv(), x)?;
                let (fz, dfz) = f.eval_plane(z).ok_or(Error::InvalidInput("z is a pole".into()))?;
                let data = l_coefficients_with(f, z, Kernel::Cauchy, self.opts.quad_nodes)?;
                let i_term = if f.is_polynomial() {
                    Cplx::new(0.0, 0.0)
                } else {
                    i_infinity_with(f, z, x, self.opts.quad_nodes)?
                };
                let rhs = (dfz * (fz - x)).inv() + data.sum_over_values(Kernel::Cauchy, x) - i_term;
                Ok((lhs - rhs).norm())
            }
            Identity::SphereKernel => {
                let lhs = transfer_apply(f, |y| sphere_kernel(z, y), x)?;
                let (fz, dfz) = f.eval_plane(z).ok_or(Error::InvalidInput("z is a pole".into()))?;
                let data = l_coefficients_with(f, z, Kernel::Sphere, self.opts.quad_nodes)?;
                let rhs = sphere_kernel(fz, x) / dfz + data.sum_over_values(Kernel::Sphere, x);
                Ok((lhs - rhs).norm())
            }
            Identity::ResolventEquation => {
                let r = self.resolvent.as_ref().expect("resolvent context");
                let rx = r.eval(x)?.value;
                let tr = transfer_apply_fallible(f, |y| r.eval(y).map(|e| e.value), x)?;
                Ok((rx - tr - r.psi().eval(x)).norm())
            }
            Identity::FunctionalEquation => {
                let lattes = self.lattes.as_ref().expect("lattes context");
                let (fz, dfz) = f.eval_plane(z).ok_or(Error::InvalidInput("z is a pole".into()))?;
                let data = l_coefficients_with(f, z, Kernel::Sphere, self.opts.quad_nodes)?;
                let n = self.opts.mc_samples;
                let at = |p: Cplx| linefield::sphere_transform(&lattes.field, p, n, seed);
                let lhs = at(z)?;
                let image = at(fz)?;
                let mut rhs = image.value / dfz;
                let mut sigma = lhs.stderr + image.stderr / dfz.norm();
                for &(v, l) in &data.l {
                    let e = at(v)?;
                    rhs += l * e.value;
                    sigma += l.norm() * e.stderr;
                }
                Ok(((lhs.value - rhs).norm() - 3.0 * sigma).max(0.0))
            }
            Identity::Duality => unreachable!("handled separately"),
        }
    }
}

/// `max(0, |∫ g f*ν − ∫ ν Tg| − 3σ)` for `ν` a phase field on a disk and `g = exp(−|y|²)`.
fn duality_residual(f: &RationalMap, n: usize, seed: u64, opts: &VerifyOptions) -> Result<(f64, Cplx)> {
    let rho = opts.duality_radius;
    let values = f.critical_values();
    let mut rng = stream_rng(seed, u64::MAX);
    let b = opts.box_radius;
    let center = (0..10_000)
        .map(|_| Cplx::new(rng.gen_range(-b..b), rng.gen_range(-b..b)))
        .find(|c| values.iter().all(|v| (c - v).norm() >= 2.0 * rho))
        .ok_or_else(|| Error::InvalidInput("no disk clear of the critical values".into()))?;
    let nu = |x: Cplx| {
        let d = x - center;
        if d.norm() < rho && d.norm() > 0.0 {
            d / d.norm()
        } else {
            Cplx::new(0.0, 0.0)
        }
    };
    let g = |y: Cplx| Cplx::new((-y.norm_sqr()).exp(), 0.0);

    // Bounding box of f⁻¹(disk) from preimages of its boundary.
    let (mut lo, mut hi) = (Cplx::new(f64::INFINITY, f64::INFINITY), Cplx::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for k in 0..256 {
        let x = center + Cplx::from_polar(rho, TAU * k as f64 / 256.0);
        for (y, _) in finite_preimages(f, x)? {
            lo = Cplx::new(lo.re.min(y.re), lo.im.min(y.im));
            hi = Cplx::new(hi.re.max(y.re), hi.im.max(y.im));
        }
    }
    let pad = 0.01 * (hi - lo).norm() + 1e-9;
    lo -= Cplx::new(pad, pad);
    hi += Cplx::new(pad, pad);

    let lhs = mc_box(lo, hi, n, seed, |y| match f.eval_plane(y) {
        Some((fy, dfy)) if dfy.norm() > 0.0 => g(y) * nu(fy) * dfy.conj() / dfy,
        _ => Cplx::new(0.0, 0.0),
    });
    let rhs = mc_uniform_disk(center, rho, n, seed ^ 0x9e37_79b9, |x| {
        let v = nu(x);
        if v.norm() == 0.0 {
            return v;
        }
        transfer_apply(f, g, x).map(|t| v * t).unwrap_or(Cplx::new(0.0, 0.0))
    });
    let sigma = lhs.stderr.hypot(rhs.stderr);
    Ok((((lhs.value - rhs.value).norm() - 3.0 * sigma).max(0.0), center))
}

/// Direct sum `Σ ψ(y)/f'(y)²`, exposed for cross-checks of the residue expansions.
pub fn transfer_of(f: &RationalMap, psi: &TestFunction, x: Cplx) -> Result<Cplx> {
    transfer_apply(f, |y| psi.eval(y), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c;
    use crate::rational::{NormalizeHints, NormalizeMode};

    fn close(a: Cplx, b: Cplx, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn quadratic_l_closed_form() {
        let f = RationalMap::quadratic(c(0.25, 0.1)).unwrap();
        for z in [c(0.7, 0.2), c(-1.1, 0.5), c(0.3, -1.4)] {
            let data = l_coefficients(&f, z, Kernel::Cauchy).unwrap();
            assert_eq!(data.l.len(), 1);
            assert!(close(data.l[0].1, (z * 2.0).inv(), 1e-12));
            assert!(data.probes_agree);
        }
    }

    #[test]
    fn l_blows_up_near_critical_point() {
        let f = RationalMap::quadratic(c(-0.4, 0.0)).unwrap();
        let mags: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&t| l_coefficients(&f, c(t, 0.0), Kernel::Cauchy).unwrap().l[0].1.norm())
            .collect();
        assert!(mags[0] < mags[1] && mags[1] < mags[2]);
        assert!(matches!(
            l_coefficients(&f, c(0.0, 0.0), Kernel::Cauchy),
            Err(Error::CriticalZ { .. })
        ));
    }

    #[test]
    fn cubic_with_degenerate_critical_point() {
        // z³: L(z) = 1/(3z²) at the double critical point.
        let f = RationalMap::polynomial(Poly::from_real(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        let z = c(0.6, 0.3);
        let data = l_coefficients(&f, z, Kernel::Cauchy).unwrap();
        assert!(close(data.l[0].1, (z * z * 3.0).inv(), 1e-12));
    }

    #[test]
    fn i_term_vanishes_for_polynomials() {
        let f = RationalMap::quadratic(c(-0.7, 0.3)).unwrap();
        for (z, x) in [(c(0.4, 0.1), c(-1.0, 0.7)), (c(1.5, -0.2), c(0.2, 0.2))] {
            assert!(i_infinity(&f, z, x).unwrap().norm() < 1e-12);
        }
    }

    fn normalized_example() -> RationalMap {
        let num = Poly::from_real(&[1.0, 0.0, 1.0]);
        let den = Poly::from_real(&[5.0, -3.0, 2.0]);
        RationalMap::new(num, den, MapKind::NormalizedRational { a: c(0.5, 0.0) }).unwrap()
    }

    #[test]
    fn i_term_structure_for_normalized_rational() {
        let f = normalized_example();
        let x = c(1.3, -0.4);
        let zs = [c(0.2, 0.3), c(-0.5, 0.1), c(0.8, -0.6), c(1.1, 0.9)];
        assert!(i_term_quadratic_fit(&f, x, &zs).unwrap() <= 1e-8);
        assert!(i_infinity(&f, zs[0], x).unwrap().norm() > 1e-6);
    }

    #[test]
    fn lemma_t_quadratic_passes() {
        let f = RationalMap::quadratic(c(0.25, 0.1)).unwrap();
        let r = verify_identity(&f, Identity::CauchyKernel, 200, 1e-10, 1, &VerifyOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.sample_count, 200);
    }

    #[test]
    fn lemma_t_normalized_rational_passes() {
        let f = normalized_example();
        let r = verify_identity(&f, Identity::CauchyKernel, 100, 1e-8, 2, &VerifyOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn lemma_tc_lattes() {
        let (g, _) = RationalMap::lattes()
            .normalize(NormalizeMode::ThreeFixedPoints, &NormalizeHints::default())
            .unwrap();
        let data = l_coefficients(&g, c(0.3, 0.4), Kernel::Sphere).unwrap();
        assert!(data.probes_agree);
        assert_eq!(data.l.len(), 3);
        let r = verify_identity(&g, Identity::SphereKernel, 50, 1e-8, 3, &VerifyOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn resolvent_eq_z2() {
        let f = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        let opts = VerifyOptions {
            resolvent: ResolventCtrl { tol: 1e-4, max_depth: 12, ..Default::default() },
            ..Default::default()
        };
        let r = verify_identity(&f, Identity::ResolventEquation, 5, 1e-10, 4, &opts).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn duality_within_error_bars() {
        let f = RationalMap::quadratic(c(-0.3, 0.4)).unwrap();
        let r = verify_identity(&f, Identity::Duality, 200_000, 0.0, 5, &VerifyOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn refinement_is_monotone() {
        let f = RationalMap::quadratic(c(0.25, 0.1)).unwrap();
        let z = c(0.05, 0.02);
        let want = (z * 2.0).inv();
        let x = probe_points(&f).unwrap()[0];
        let errs: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| (l_at_probe(&f, z, Kernel::Cauchy, x, n).unwrap()[0].1 - want).norm())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{errs:?}");
        }
    }

    #[test]
    fn identity_names_roundtrip() {
        for i in Identity::ALL {
            assert_eq!(i.name().parse::<Identity>().unwrap(), i);
        }
        assert!("lemma_X".parse::<Identity>().is_err());
    }
}
