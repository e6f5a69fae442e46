//! Preimages, the transfer operator and its truncated resolvent.
//!
//! The transfer operator acts by `(Tg)(x) = Σ g(y) / f'(y)²` over the
//! preimages `f(y) = x`; `|T|` is its absolute counterpart.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{canonical_cmp, multiplicity_radius, Poly, ROOT_TOL};
use crate::rational::{MapKind, PostcriticalCloud, RationalMap, SpherePoint};
use crate::Cplx;

/// Hard cap on the number of nodes in a preimage tree.
pub const NODE_CAP: usize = 1 << 22;

/// Preimages beyond this modulus are taken to be at infinity.
const PREIMAGE_ESCAPE: f64 = 1e12;

#[derive(Clone)]
pub enum TestFunction {
    /// `1/(x − v)`
    CauchyPole(Cplx),
    /// `1/(x − a)^k` with `k ∈ {1, 2, 3}`
    InversePower(Cplx, u32),
    /// `z(z−1) / (x(x−1)(x−z))`
    SphereKernel(Cplx),
    Custom(Arc<dyn Fn(Cplx) -> Cplx + Send + Sync>),
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::CauchyPole(v) => write!(f, "CauchyPole({v})"),
            TestFunction::InversePower(a, k) => write!(f, "InversePower({a}, {k})"),
            TestFunction::SphereKernel(z) => write!(f, "SphereKernel({z})"),
            TestFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl TestFunction {
    pub fn cauchy(v: Cplx) -> Self {
        TestFunction::CauchyPole(v)
    }

    pub fn inverse_power(a: Cplx, k: u32) -> Result<Self> {
        if !(1..=3).contains(&k) || !a.is_finite() {
            return Err(Error::InvalidInput(format!("inverse power needs k in 1..=3, got {k}")));
        }
        Ok(TestFunction::InversePower(a, k))
    }

    pub fn sphere_kernel(z: Cplx) -> Result<Self> {
        if z.norm() < 1e-12 || (z - 1.0).norm() < 1e-12 || !z.is_finite() {
            return Err(Error::InvalidInput(format!("sphere kernel needs z ∉ {{0, 1}}, got {z}")));
        }
        Ok(TestFunction::SphereKernel(z))
    }

    pub fn custom(g: impl Fn(Cplx) -> Cplx + Send + Sync + 'static) -> Self {
        TestFunction::Custom(Arc::new(g))
    }

    pub fn eval(&self, x: Cplx) -> Cplx {
        match self {
            TestFunction::CauchyPole(v) => (x - v).inv(),
            TestFunction::InversePower(a, k) => (x - a).powi(*k as i32).inv(),
            TestFunction::SphereKernel(z) => z * (z - 1.0) / (x * (x - 1.0) * (x - z)),
            TestFunction::Custom(g) => g(x),
        }
    }

    /// Finite poles, for sampling refinement.
    pub fn poles(&self) -> Vec<Cplx> {
        match self {
            TestFunction::CauchyPole(v) => vec![*v],
            TestFunction::InversePower(a, _) => vec![*a],
            TestFunction::SphereKernel(z) => vec![Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0), *z],
            TestFunction::Custom(_) => Vec::new(),
        }
    }

    /// Partial-fraction coefficients `[(pole, coeff)]` of the sphere kernel.
    pub fn sphere_partial_fractions(z: Cplx) -> [(Cplx, Cplx); 3] {
        [
            (Cplx::new(0.0, 0.0), z - 1.0),
            (Cplx::new(1.0, 0.0), -z),
            (z, Cplx::new(1.0, 0.0)),
        ]
    }
}

/// Test-function catalog for a normalized map.
pub fn test_functions(f: &RationalMap) -> Result<Vec<TestFunction>> {
    let values = f.critical_values();
    match f.kind() {
        MapKind::Polynomial => Ok(values.iter().map(|&v| TestFunction::CauchyPole(v)).collect()),
        MapKind::NormalizedRational { a } => {
            let mut out: Vec<_> = values.iter().map(|&v| TestFunction::CauchyPole(v)).collect();
            out.extend((1..=3).map(|k| TestFunction::InversePower(a, k)));
            Ok(out)
        }
        MapKind::SphereJulia => values.iter().map(|&v| TestFunction::sphere_kernel(v)).collect(),
        MapKind::General => Err(Error::KindRequired),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub point: SpherePoint,
    /// Plane derivative for finite preimages; chart derivative at infinity or at poles.
    pub derivative: Cplx,
}

/// All `d` solutions of `f(y) = x`, in canonical order, infinite ones last.
pub fn preimages(f: &RationalMap, x: SpherePoint) -> Result<Vec<Preimage>> {
    match x {
        SpherePoint::Finite(x) => {
            let mut out: Vec<Preimage> = finite_preimages(f, x)?
                .into_iter()
                .map(|(y, d)| Preimage { point: SpherePoint::Finite(y), derivative: d })
                .collect();
            while out.len() < f.degree() {
                let derivative = f.eval(SpherePoint::Infinity)?.derivative.value();
                out.push(Preimage { point: SpherePoint::Infinity, derivative });
            }
            Ok(out)
        }
        SpherePoint::Infinity => {
            let mut out = Vec::new();
            if f.den().degree() > 0 {
                for r in f.den().roots(ROOT_TOL)? {
                    if r.multiplicity > 1 {
                        return Err(Error::NearCriticalValue { x: Cplx::new(f64::INFINITY, 0.0), value: r.value });
                    }
                    let d = f.eval(SpherePoint::Finite(r.value))?.derivative.value();
                    out.push(Preimage { point: SpherePoint::Finite(r.value), derivative: d });
                }
            }
            if f.num().degree() > f.den().degree() {
                if f.num().degree() - f.den().degree() > 1 {
                    return Err(Error::NearCriticalValue {
                        x: Cplx::new(f64::INFINITY, 0.0),
                        value: Cplx::new(f64::INFINITY, 0.0),
                    });
                }
                let d = f.eval(SpherePoint::Infinity)?.derivative.value();
                out.push(Preimage { point: SpherePoint::Infinity, derivative: d });
            }
            Ok(out)
        }
    }
}

/// Finite preimages `(y, f'(y))` of a finite point, in canonical order.
///
/// Fails with `NearCriticalValue` when two preimages fall within the root
/// multiplicity radius of each other.
pub fn finite_preimages(f: &RationalMap, x: Cplx) -> Result<Vec<(Cplx, Cplx)>> {
    let p = f.num().sub(&f.den().scale(x));
    let near = |value: Cplx| Error::NearCriticalValue { x, value };
    let ys: Vec<Cplx> = if p.degree() == 2 {
        let [c0, c1, c2] = [p.coeffs()[0], p.coeffs()[1], p.coeffs()[2]];
        let disc = (c1 * c1 - c2 * c0 * 4.0).sqrt();
        let q = if (c1 + disc).norm() >= (c1 - disc).norm() {
            -(c1 + disc) * 0.5
        } else {
            -(c1 - disc) * 0.5
        };
        if q.norm() == 0.0 {
            return Err(near(x));
        }
        let (y1, y2) = (q / c2, c0 / q);
        if (y1 - y2).norm() <= multiplicity_radius(ROOT_TOL, y1) {
            return Err(near(x));
        }
        let mut v = vec![y1, y2];
        v.sort_by(|a, b| canonical_cmp(*a, *b));
        v
    } else if p.degree() == 0 {
        Vec::new()
    } else {
        let roots = p.roots(ROOT_TOL)?;
        if let Some(r) = roots.iter().find(|r| r.multiplicity > 1) {
            return Err(near(f.eval_plane(r.value).map_or(x, |v| v.0)));
        }
        roots.into_iter().map(|r| r.value).collect()
    };
    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        if y.norm() > PREIMAGE_ESCAPE {
            continue;
        }
        let (_, d) = f.eval_plane(y).ok_or_else(|| near(x))?;
        if d.norm() == 0.0 {
            return Err(near(x));
        }
        out.push((y, d));
    }
    Ok(out)
}

/// `(Tg)(x)`.
pub fn transfer_apply(f: &RationalMap, g: impl Fn(Cplx) -> Cplx, x: Cplx) -> Result<Cplx> {
    Ok(finite_preimages(f, x)?
        .into_iter()
        .map(|(y, d)| g(y) / (d * d))
        .sum())
}

/// `(Tg)(x)` for a fallible evaluator.
pub fn transfer_apply_fallible(
    f: &RationalMap,
    g: impl Fn(Cplx) -> Result<Cplx>,
    x: Cplx,
) -> Result<Cplx> {
    let mut acc = Cplx::new(0.0, 0.0);
    for (y, d) in finite_preimages(f, x)? {
        acc += g(y)? / (d * d);
    }
    Ok(acc)
}

/// `(|T|g)(x)`.
pub fn transfer_apply_abs(f: &RationalMap, g: impl Fn(Cplx) -> Cplx, x: Cplx) -> Result<f64> {
    Ok(finite_preimages(f, x)?
        .into_iter()
        .map(|(y, d)| g(y).norm() / d.norm_sqr())
        .sum())
}

/// One node of a preimage tree: `f^i(y) = x` with `(f^i)'(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreimageNode {
    pub y: Cplx,
    pub acc_derivative: Cplx,
}

/// Expands one tree layer, preserving node order.
pub fn next_layer(f: &RationalMap, layer: &[PreimageNode]) -> Result<Vec<PreimageNode>> {
    const PAR_CHUNK: usize = 256;
    let parts: Vec<Result<Vec<PreimageNode>>> = layer
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() * f.degree());
            for node in chunk {
                for (w, d) in finite_preimages(f, node.y)? {
                    out.push(PreimageNode { y: w, acc_derivative: node.acc_derivative * d });
                }
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::with_capacity(layer.len() * f.degree());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Breadth-first preimage layers `0..=depth` of `x`, stopping early at `node_cap`.
pub fn preimage_layers(
    f: &RationalMap,
    x: Cplx,
    depth: usize,
    node_cap: usize,
) -> Result<Vec<Vec<PreimageNode>>> {
    let mut layers = vec![vec![PreimageNode { y: x, acc_derivative: Cplx::new(1.0, 0.0) }]];
    let mut total = 1;
    for _ in 0..depth {
        let last = layers.last().expect("non-empty");
        if total + last.len() * f.degree() > node_cap {
            break;
        }
        let next = next_layer(f, last)?;
        total += next.len();
        layers.push(next);
    }
    Ok(layers)
}

/// Signed and absolute sums of `ψ(y)/((f^i)'(y))²` over one layer.
pub fn layer_sums(layer: &[PreimageNode], psi: &TestFunction) -> (Cplx, f64) {
    layer
        .par_iter()
        .map(|n| {
            let g = psi.eval(n.y);
            let d2 = n.acc_derivative * n.acc_derivative;
            (g / d2, g.norm() / d2.norm())
        })
        .reduce(
            || (Cplx::new(0.0, 0.0), 0.0),
            |a, b| (a.0 + b.0, a.1 + b.1),
        )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventCtrl {
    pub tol: f64,
    pub max_depth: usize,
    /// Distance to the postcritical cloud below which a point counts as outside the domain.
    /// Defaults to `1e-3 · diameter` of the cloud (or `1e-3` for a one-point cloud).
    pub exclusion_radius: Option<f64>,
    /// Evaluate anyway (with `in_domain = false`) instead of failing.
    pub allow_outside: bool,
    pub node_cap: usize,
}

impl Default for ResolventCtrl {
    fn default() -> Self {
        ResolventCtrl {
            tol: 1e-10,
            max_depth: 20,
            exclusion_radius: None,
            allow_outside: false,
            node_cap: NODE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventEval {
    pub value: Cplx,
    pub abs_value: f64,
    pub depth_used: usize,
    pub tail_estimate: f64,
    pub in_domain: bool,
    pub converged: bool,
}

/// Truncated resolvent `Σ T^i ψ` of one test function.
#[derive(Debug, Clone)]
pub struct Resolvent {
    f: RationalMap,
    psi: TestFunction,
    ctrl: ResolventCtrl,
    cloud: PostcriticalCloud,
    exclusion: f64,
}

impl Resolvent {
    pub fn new(f: &RationalMap, psi: TestFunction, ctrl: ResolventCtrl) -> Self {
        let cloud = f.postcritical_cloud(200, 1e-9);
        let exclusion = ctrl.exclusion_radius.unwrap_or_else(|| {
            let diam = cloud.bbox_diameter();
            if diam > 0.0 { 1e-3 * diam } else { 1e-3 }
        });
        Resolvent { f: f.clone(), psi, ctrl, cloud, exclusion }
    }

    pub fn map(&self) -> &RationalMap {
        &self.f
    }

    pub fn psi(&self) -> &TestFunction {
        &self.psi
    }

    pub fn ctrl(&self) -> &ResolventCtrl {
        &self.ctrl
    }

    pub fn cloud(&self) -> &PostcriticalCloud {
        &self.cloud
    }

    pub fn exclusion_radius(&self) -> f64 {
        self.exclusion
    }

    pub fn in_domain(&self, x: Cplx) -> bool {
        self.cloud.distance(x) >= self.exclusion
    }

    pub fn eval(&self, x: Cplx) -> Result<ResolventEval> {
        let distance = self.cloud.distance(x);
        let in_domain = distance >= self.exclusion;
        if !in_domain && !self.ctrl.allow_outside {
            return Err(Error::DomainViolation { x, distance });
        }
        let (mut value, mut abs_value) = layer_sums(
            &[PreimageNode { y: x, acc_derivative: Cplx::new(1.0, 0.0) }],
            &self.psi,
        );
        let mut layer = vec![PreimageNode { y: x, acc_derivative: Cplx::new(1.0, 0.0) }];
        let mut total = 1;
        let mut depth = 0;
        let mut last = abs_value;
        let mut converged = false;
        while depth < self.ctrl.max_depth {
            if total + layer.len() * self.f.degree() > self.ctrl.node_cap.min(NODE_CAP) {
                break;
            }
            layer = next_layer(&self.f, &layer)?;
            total += layer.len();
            depth += 1;
            let (s, a) = layer_sums(&layer, &self.psi);
            value += s;
            abs_value += a;
            last = a;
            if a < self.ctrl.tol * (1.0 + abs_value) {
                converged = true;
                break;
            }
        }
        Ok(ResolventEval {
            value,
            abs_value,
            depth_used: depth,
            tail_estimate: last,
            in_domain,
            converged,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbelEval {
    pub lambda: f64,
    /// Normalizing series `D(λ) = Σ_k λ^k / (f^k)'(c)`.
    pub d: Cplx,
    pub value: Cplx,
}

/// Abel-summed resolvent of `1/(x − c)` for `z² + c`, via the critical orbit.
pub fn abel_resolvent_quadratic(c: Cplx, x: Cplx, lambdas: &[f64]) -> Result<Vec<AbelEval>> {
    const HORIZON: usize = 100_000;
    const TERM_TOL: f64 = 1e-17;
    lambdas
        .iter()
        .map(|&lambda| {
            if !(0.0..1.0).contains(&lambda) || lambda == 0.0 {
                return Err(Error::InvalidInput(format!("λ must lie in (0, 1), got {lambda}")));
            }
            let mut orbit = c;
            let mut deriv = Cplx::new(1.0, 0.0);
            let mut lam_k = 1.0;
            let mut d = Cplx::new(0.0, 0.0);
            let mut value = Cplx::new(0.0, 0.0);
            for k in 0..HORIZON {
                let w = lam_k / deriv;
                d += w;
                value += w / (x - orbit);
                let term = w.norm();
                if term <= TERM_TOL * (1.0 + d.norm()) || orbit.norm() > 1e150 {
                    return Ok(AbelEval { lambda, d, value: value / d });
                }
                let step = orbit * 2.0;
                if step.norm() <= 1e-14 {
                    return Err(Error::ZeroOrbitDerivative { step: k + 1 });
                }
                deriv *= step;
                orbit = orbit * orbit + c;
                lam_k *= lambda;
            }
            Err(Error::SlowDecay { horizon: HORIZON })
        })
        .collect()
}

/// Coefficients of `(num − x·den)`, exposed for diagnostics.
pub fn preimage_polynomial(f: &RationalMap, x: Cplx) -> Poly {
    f.num().sub(&f.den().scale(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c;
    use crate::sampling::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: Cplx, b: Cplx, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn preimages_examples() {
        let f = RationalMap::quadratic(c(1.0, 0.0)).unwrap();
        let p = preimages(&f, SpherePoint::Finite(c(5.0, 0.0))).unwrap();
        assert_eq!(p.len(), 2);
        assert!(close(p[0].point.finite().unwrap(), c(-2.0, 0.0), 1e-14));
        assert!(close(p[0].derivative, c(-4.0, 0.0), 1e-13));
        assert!(close(p[1].point.finite().unwrap(), c(2.0, 0.0), 1e-14));

        let sq = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        assert!(matches!(
            preimages(&sq, SpherePoint::Finite(c(0.0, 0.0))),
            Err(Error::NearCriticalValue { .. })
        ));
    }

    #[test]
    fn lattes_preimages_residual() {
        let f = RationalMap::lattes();
        let mut rng = stream_rng(5, 0);
        for _ in 0..50 {
            let x = c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let p = finite_preimages(&f, x).unwrap();
            assert_eq!(p.len(), 4);
            for (y, _) in p {
                let (w, _) = f.eval_plane(y).unwrap();
                assert!((w - x).norm() <= 1e-9 * (1.0 + x.norm()));
            }
        }
    }

    #[test]
    fn transfer_examples() {
        let f = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        let x = c(0.7, -1.3);
        assert!(transfer_apply(&f, |y| y.inv(), x).unwrap().norm() < 1e-15);
        let t1 = transfer_apply(&f, |_| c(1.0, 0.0), x).unwrap();
        assert!(close(t1, (x * 2.0).inv(), 1e-14));
    }

    #[test]
    fn transfer_of_cauchy_kernel_closed_form() {
        let cval = c(0.25, 0.1);
        let f = RationalMap::quadratic(cval).unwrap();
        let mut rng = stream_rng(9, 0);
        for _ in 0..100 {
            let z0 = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let x = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let want = z0 / ((x - cval) * (z0 * z0 + cval - x) * 2.0);
            let got = transfer_apply(&f, |y| (z0 - y).inv(), x).unwrap();
            assert!((got - want).norm() <= 1e-9 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn resolvent_of_inverse_identity_for_z2() {
        let f = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        let ctrl = ResolventCtrl { tol: 1e-4, max_depth: 14, ..Default::default() };
        let r = Resolvent::new(&f, TestFunction::CauchyPole(c(0.0, 0.0)), ctrl);
        let e = r.eval(c(2.0, 0.0)).unwrap();
        assert!(close(e.value, c(0.5, 0.0), 1e-12));
        assert!(e.in_domain);
        assert!(e.converged);
        assert!(e.tail_estimate < ctrl.tol * (1.0 + e.abs_value));
    }

    #[test]
    fn resolvent_domain_violation() {
        let f = RationalMap::quadratic(c(-2.0, 0.0)).unwrap();
        let r = Resolvent::new(&f, TestFunction::CauchyPole(c(-2.0, 0.0)), ResolventCtrl::default());
        assert!(matches!(r.eval(c(2.0, 1e-6)), Err(Error::DomainViolation { .. })));
        let ctrl = ResolventCtrl { allow_outside: true, max_depth: 3, ..Default::default() };
        let r = Resolvent::new(&f, TestFunction::CauchyPole(c(-2.0, 0.0)), ctrl);
        assert!(!r.eval(c(2.0, 1e-4)).unwrap().in_domain);
    }

    #[test]
    fn abel_chebyshev() {
        let out = abel_resolvent_quadratic(c(-2.0, 0.0), c(0.0, 0.0), &[1.0 - 1e-8, 0.5]).unwrap();
        let closed = |l: f64| (1.0 - l / 2.0) / (1.0 - l / 4.0);
        assert!(close(out[0].d, c(closed(1.0 - 1e-8), 0.0), 1e-14));
        assert!((out[0].d.re - 2.0 / 3.0).abs() < 1e-8);
        assert!(close(out[1].d, c(6.0 / 7.0, 0.0), 1e-14));
        assert!(close(out[0].value, c(1.0, 0.0), 1e-6));
    }

    #[test]
    fn abel_degenerate() {
        assert_eq!(
            abel_resolvent_quadratic(c(0.0, 0.0), c(1.0, 0.0), &[0.5]).unwrap_err(),
            Error::ZeroOrbitDerivative { step: 1 }
        );
        // Parabolic multiplier: the critical orbit derivatives decay too slowly for λ near 1.
        assert!(matches!(
            abel_resolvent_quadratic(c(0.25, 0.0), c(2.0, 0.0), &[1.0 - 1e-12]),
            Err(Error::SlowDecay { .. })
        ));
    }

    #[test]
    fn catalog() {
        let f = RationalMap::quadratic(c(0.3, 0.0)).unwrap();
        let t = test_functions(&f).unwrap();
        assert_eq!(t.len(), 1);
        assert!(matches!(t[0], TestFunction::CauchyPole(v) if close(v, c(0.3, 0.0), 1e-14)));
        assert_eq!(test_functions(&RationalMap::lattes()).unwrap_err(), Error::KindRequired);
    }

    #[test]
    fn layer_monotonicity() {
        let f = RationalMap::quadratic(c(-0.5, 0.3)).unwrap();
        let psi = TestFunction::CauchyPole(c(-0.5, 0.3));
        let mut prev = -1.0;
        for depth in 0..8 {
            let ctrl = ResolventCtrl { tol: 0.0, max_depth: depth, ..Default::default() };
            let e = Resolvent::new(&f, psi.clone(), ctrl).eval(c(1.5, 0.5)).unwrap();
            assert!(e.abs_value >= prev);
            prev = e.abs_value;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sphere_kernel_partial_fractions(zr in -3.0f64..3.0, zi in 0.1f64..3.0, xr in -3.0f64..3.0, xi in -3.0f64..3.0) {
            let z = c(zr, zi);
            let x = c(xr, xi);
            prop_assume!(x.norm() > 0.05 && (x - 1.0).norm() > 0.05 && (x - z).norm() > 0.05);
            let direct = TestFunction::sphere_kernel(z).unwrap().eval(x);
            let parts = TestFunction::sphere_partial_fractions(z);
            let sum: Cplx = parts.iter().map(|(p, a)| a / (x - p)).sum();
            prop_assert!((direct - sum).norm() <= 1e-12 * (1.0 + direct.norm()) * 10.0);
            let coeff_sum: Cplx = parts.iter().map(|(_, a)| a).sum();
            prop_assert!(coeff_sum.norm() < 1e-15);
        }

        #[test]
        fn resolvent_equation_holds(xr in 1.3f64..2.5, th in 0.0f64..std::f64::consts::TAU) {
            let cval = c(-0.3, 0.2);
            let f = RationalMap::quadratic(cval).unwrap();
            let tol = 1e-5;
            let ctrl = ResolventCtrl { tol, max_depth: 14, ..Default::default() };
            let r = Resolvent::new(&f, TestFunction::CauchyPole(cval), ctrl);
            let x = Cplx::from_polar(xr, th);
            let rx = r.eval(x).unwrap();
            let tr = transfer_apply_fallible(&f, |y| r.eval(y).map(|e| e.value), x).unwrap();
            let psi = (x - cval).inv();
            prop_assert!((rx.value - tr - psi).norm() <= 10.0 * tol * (1.0 + rx.value.norm()));
        }
    }
}
