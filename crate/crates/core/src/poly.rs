//! Complex polynomials in ascending-degree coefficient order.
//!
//! Roots are found by Aberth–Ehrlich simultaneous iteration on the
//! coefficient vector normalized by its largest-magnitude entry, followed by
//! Newton polishing and a multiplicity pass that merges clusters.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::Cplx;

/// Default tolerance passed to [`Poly::roots`] by the rest of the crate.
pub const ROOT_TOL: f64 = 1e-10;

const MAX_ABERTH_ITERS: usize = 1000;

#[derive(Clone, PartialEq, Default)]
pub struct Poly {
    coeffs: Vec<Cplx>,
}

/// A root together with its detected multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: Cplx,
    pub multiplicity: usize,
}

impl Poly {
    /// Builds a polynomial from ascending coefficients, trimming exact trailing zeros.
    pub fn new(mut coeffs: Vec<Cplx>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == Cplx::new(0.0, 0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(Cplx::new(0.0, 0.0));
        }
        Poly { coeffs }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Poly::new(coeffs.iter().map(|&r| Cplx::new(r, 0.0)).collect())
    }

    pub fn constant(value: Cplx) -> Self {
        Poly::new(vec![value])
    }

    /// The monomial `z`.
    pub fn identity() -> Self {
        Poly::from_real(&[0.0, 1.0])
    }

    /// `lead * Π (z - r)` expanded.
    pub fn from_roots(roots: &[Cplx], lead: Cplx) -> Self {
        let mut p = Poly::constant(lead);
        for &r in roots {
            p = p.mul(&Poly::new(vec![-r, Cplx::new(1.0, 0.0)]));
        }
        p
    }

    pub fn coeffs(&self) -> &[Cplx] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> Cplx {
        *self.coeffs.last().unwrap()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == Cplx::new(0.0, 0.0)
    }

    /// Largest coefficient magnitude.
    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Value and first derivative in one Horner pass.
    pub fn horner_eval(&self, z: Cplx) -> (Cplx, Cplx) {
        let mut value = Cplx::new(0.0, 0.0);
        let mut deriv = Cplx::new(0.0, 0.0);
        for &a in self.coeffs.iter().rev() {
            deriv = deriv * z + value;
            value = value * z + a;
        }
        (value, deriv)
    }

    pub fn eval(&self, z: Cplx) -> Cplx {
        self.coeffs
            .iter()
            .rev()
            .fold(Cplx::new(0.0, 0.0), |acc, &a| acc * z + a)
    }

    /// `Σ |a_k| |z|^k`, the natural magnitude against which `|p(z)|` is judged.
    pub fn eval_abs(&self, z: Cplx) -> f64 {
        let r = z.norm();
        self.coeffs.iter().rev().fold(0.0, |acc, a| acc * r + a.norm())
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() == 1 {
            return Poly::constant(Cplx::new(0.0, 0.0));
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &a)| a * k as f64)
                .collect(),
        )
    }

    pub fn nth_derivative(&self, n: usize) -> Poly {
        (0..n).fold(self.clone(), |p, _| p.derivative())
    }

    pub fn scale(&self, s: Cplx) -> Poly {
        Poly::new(self.coeffs.iter().map(|&a| a * s).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = Cplx::new(0.0, 0.0);
        Poly::new(
            (0..n)
                .map(|k| {
                    self.coeffs.get(k).copied().unwrap_or(zero)
                        + other.coeffs.get(k).copied().unwrap_or(zero)
                })
                .collect(),
        )
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(Cplx::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![Cplx::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn pow(&self, n: usize) -> Poly {
        (0..n).fold(Poly::constant(Cplx::new(1.0, 0.0)), |acc, _| acc.mul(self))
    }

    /// Coefficients of `z^n p(1/z)` for `n = degree`.
    pub fn reversed(&self) -> Poly {
        Poly::new(self.coeffs.iter().rev().copied().collect())
    }

    /// All roots with multiplicity, in canonical order (real part, then imaginary part).
    ///
    /// Clusters closer than `max(10 tol, 1e-7) (1 + |r|)` are merged; wider clusters are
    /// merged only when the derivative test at their centroid confirms a multiple root.
    pub fn roots(&self, tol: f64) -> Result<Vec<Root>> {
        let n = self.degree();
        if n == 0 {
            return Err(Error::InvalidInput("roots of a constant polynomial".into()));
        }
        // Divide by the largest coefficient so that `roots(c p) == roots(p)`.
        let pivot = *self
            .coeffs
            .iter()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap();
        let q = Poly::new(self.coeffs.iter().map(|&a| a / pivot).collect());

        let zeros_at_origin = q.coeffs.iter().take_while(|a| a.norm() == 0.0).count();
        let reduced = Poly::new(q.coeffs[zeros_at_origin..].to_vec());

        let mut approx = if reduced.degree() == 0 {
            Vec::new()
        } else {
            aberth(&reduced)?
        };
        for z in approx.iter_mut() {
            *z = newton_polish(&reduced, *z, 3);
        }
        approx.extend(std::iter::repeat_n(Cplx::new(0.0, 0.0), zeros_at_origin));

        let mut roots = merge_clusters(&q, approx, tol);
        roots.sort_by(|a, b| canonical_cmp(a.value, b.value));

        for r in &roots {
            let residual = q.eval(r.value).norm();
            let scale = q.eval_abs(r.value).max(1.0);
            if residual > tol * scale * (n as f64 + 1.0) {
                return Err(Error::NonConvergence {
                    iterations: MAX_ABERTH_ITERS,
                    residual: residual / scale,
                });
            }
        }
        Ok(roots)
    }
}

/// Total order used whenever roots or preimages must be reported deterministically.
pub fn canonical_cmp(a: Cplx, b: Cplx) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn aberth(p: &Poly) -> Result<Vec<Cplx>> {
    let n = p.degree();
    let lead = p.leading();
    if n == 1 {
        return Ok(vec![-p.coeffs[0] / lead]);
    }
    let radius = (p.coeffs[0] / lead).norm().powf(1.0 / n as f64).max(1e-3);
    let mut z: Vec<Cplx> = (0..n)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / n as f64 + 0.4;
            Cplx::from_polar(radius, theta)
        })
        .collect();
    let mut done = vec![false; n];
    let eps = f64::EPSILON;

    for _ in 0..MAX_ABERTH_ITERS {
        let mut all_done = true;
        for k in 0..n {
            if done[k] {
                continue;
            }
            let (v, d) = p.horner_eval(z[k]);
            if v.norm() <= 8.0 * eps * p.eval_abs(z[k]) {
                done[k] = true;
                continue;
            }
            let ratio = v / d;
            let repulsion: Cplx = (0..n)
                .filter(|&j| j != k)
                .map(|j| {
                    let diff = z[k] - z[j];
                    if diff.norm() == 0.0 {
                        Cplx::new(0.0, 0.0)
                    } else {
                        diff.inv()
                    }
                })
                .sum();
            let step = ratio / (Cplx::new(1.0, 0.0) - ratio * repulsion);
            if !step.is_finite() {
                // Perturb out of an exact coincidence.
                let bump = Cplx::new(1e-8, 1e-8) * (1.0 + z[k].norm());
                z[k] += bump;
                all_done = false;
                continue;
            }
            z[k] -= step;
            if step.norm() <= 4.0 * eps * (1.0 + z[k].norm()) {
                done[k] = true;
            } else {
                all_done = false;
            }
        }
        if all_done {
            return Ok(z);
        }
    }
    // Iteration cap: accept only if the backward error is still tiny.
    let worst = z
        .iter()
        .map(|&zk| p.eval(zk).norm() / p.eval_abs(zk).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    if worst <= 1e-10 {
        Ok(z)
    } else {
        Err(Error::NonConvergence {
            iterations: MAX_ABERTH_ITERS,
            residual: worst,
        })
    }
}

fn newton_polish(p: &Poly, mut z: Cplx, steps: usize) -> Cplx {
    for _ in 0..steps {
        let (v, d) = p.horner_eval(z);
        if d.norm() == 0.0 {
            break;
        }
        let next = z - v / d;
        if !next.is_finite() || p.eval(next).norm() > v.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Radius within which two root approximations are always merged.
pub fn multiplicity_radius(tol: f64, z: Cplx) -> f64 {
    (10.0 * tol).max(1e-7) * (1.0 + z.norm())
}

/// True when `p^(k)(z)` is negligible for every `k < m`.
fn derivative_test(derivs: &[Poly], z: Cplx, m: usize, tol: f64) -> bool {
    derivs
        .iter()
        .take(m)
        .all(|d| d.eval(z).norm() <= tol * d.eval_abs(z).max(1.0))
}

fn merge_clusters(p: &Poly, approx: Vec<Cplx>, tol: f64) -> Vec<Root> {
    let n = approx.len();
    // Union-find over the primary radius.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut j = i;
        while parent[j] != r {
            let next = parent[j];
            parent[j] = r;
            j = next;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let rad = multiplicity_radius(tol, approx[i]).max(multiplicity_radius(tol, approx[j]));
            if (approx[i] - approx[j]).norm() <= rad {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }
    let mut clusters: Vec<Vec<Cplx>> = Vec::new();
    let mut index_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if index_of[r] == usize::MAX {
            index_of[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[index_of[r]].push(approx[i]);
    }

    let derivs: Vec<Poly> = (0..=p.degree()).map(|k| p.nth_derivative(k)).collect();
    let test_tol = tol.max(1e-12);

    // Secondary pass: at shrinking radii, merge groups of neighbouring clusters whose
    // union passes the derivative test as a single multiple root.
    for level in [1e-3, 1e-4, 1e-5, 1e-6] {
        let centers: Vec<Cplx> = clusters.iter().map(|cl| centroid(cl)).collect();
        let k = clusters.len();
        let mut group: Vec<usize> = (0..k).collect();
        for i in 0..k {
            for j in (i + 1)..k {
                if (centers[i] - centers[j]).norm() <= level * (1.0 + centers[i].norm()) {
                    let (a, b) = (find(&mut group, i), find(&mut group, j));
                    if a != b {
                        group[b] = a;
                    }
                }
            }
        }
        let mut next: Vec<Vec<Cplx>> = Vec::new();
        let mut slot = vec![usize::MAX; k];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for i in 0..k {
            let r = find(&mut group, i);
            if slot[r] == usize::MAX {
                slot[r] = members.len();
                members.push(Vec::new());
            }
            members[slot[r]].push(i);
        }
        for m in members {
            let union: Vec<Cplx> = m.iter().flat_map(|&i| clusters[i].iter().copied()).collect();
            if m.len() > 1 && derivative_test(&derivs, refined_center(&derivs, &union), union.len(), test_tol) {
                next.push(union);
            } else {
                next.extend(m.iter().map(|&i| clusters[i].clone()));
            }
        }
        clusters = next;
    }

    clusters
        .into_iter()
        .map(|cl| {
            let m = cl.len();
            let value = if m > 1 { refined_center(&derivs, &cl) } else { cl[0] };
            Root {
                value,
                multiplicity: m,
            }
        })
        .collect()
}

/// Centroid of a cluster polished by Newton on `p^(m-1)`, for which the root is simple.
fn refined_center(derivs: &[Poly], cluster: &[Cplx]) -> Cplx {
    let m = cluster.len();
    newton_polish(&derivs[m - 1], centroid(cluster), 5)
}

fn centroid(points: &[Cplx]) -> Cplx {
    points.iter().sum::<Cplx>() / points.len() as f64
}

/// Parses a complex literal `a+bi`; plain reals and pure imaginaries are accepted too.
pub fn parse_cplx(text: &str) -> Result<Cplx> {
    let s: String = text.chars().filter(|ch| !ch.is_whitespace()).collect();
    let bad = || Error::Parse(format!("invalid complex literal `{text}`"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix('i') else {
        return s.parse::<f64>().map(|re| Cplx::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().map_err(|_| bad())?;
            let im_text = &body[k..];
            let im = match im_text {
                "+" => 1.0,
                "-" => -1.0,
                t => t.parse::<f64>().map_err(|_| bad())?,
            };
            Ok(Cplx::new(re, im))
        }
        None => {
            let im = match body {
                "" | "+" => 1.0,
                "-" => -1.0,
                t => t.parse::<f64>().map_err(|_| bad())?,
            };
            Ok(Cplx::new(0.0, im))
        }
    }
}

/// Formats a complex number as `a+bi` with shortest round-trip floats.
pub fn format_cplx(z: Cplx) -> String {
    if z.im.is_sign_negative() {
        format!("{}-{}i", format_real(z.re), format_real(-z.im))
    } else {
        format!("{}+{}i", format_real(z.re), format_real(z.im))
    }
}

fn format_real(x: f64) -> String {
    if x == 0.0 || (1e-5..1e16).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl FromStr for Poly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let coeffs = s
            .split(',')
            .map(parse_cplx)
            .collect::<Result<Vec<_>>>()?;
        Ok(Poly::new(coeffs))
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coeffs.iter().map(|&z| format_cplx(z)).collect();
        f.write_str(&parts.join(","))
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly[{self}]")
    }
}
