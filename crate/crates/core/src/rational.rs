//! Rational maps on the Riemann sphere.
//!
//! A [`RationalMap`] stores `num / den` together with eagerly computed
//! critical and fixed-point data, so shared references need no further
//! synchronization.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{canonical_cmp, format_cplx, parse_cplx, Poly, ROOT_TOL};
use crate::Cplx;

/// Above this modulus points are evaluated in the `1/z` chart.
pub const CHART_RADIUS: f64 = 1e6;

/// Orbit points beyond this modulus are treated as the point at infinity.
pub const ESCAPE_MODULUS: f64 = 1e12;

const COPRIME_THRESHOLD: f64 = 1e-12;
const KIND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpherePoint {
    Finite(Cplx),
    Infinity,
}

impl SpherePoint {
    pub fn finite(self) -> Option<Cplx> {
        match self {
            SpherePoint::Finite(z) => Some(z),
            SpherePoint::Infinity => None,
        }
    }

    pub fn is_infinity(self) -> bool {
        matches!(self, SpherePoint::Infinity)
    }

    /// Chordal distance on the unit sphere; used to compare possibly-infinite points.
    pub fn chordal(self, other: SpherePoint) -> f64 {
        match (self, other) {
            (SpherePoint::Infinity, SpherePoint::Infinity) => 0.0,
            (SpherePoint::Finite(z), SpherePoint::Infinity)
            | (SpherePoint::Infinity, SpherePoint::Finite(z)) => 2.0 / (1.0 + z.norm_sqr()).sqrt(),
            (SpherePoint::Finite(a), SpherePoint::Finite(b)) => {
                2.0 * (a - b).norm() / ((1.0 + a.norm_sqr()).sqrt() * (1.0 + b.norm_sqr()).sqrt())
            }
        }
    }
}

impl From<Cplx> for SpherePoint {
    fn from(z: Cplx) -> Self {
        if z.is_finite() {
            SpherePoint::Finite(z)
        } else {
            SpherePoint::Infinity
        }
    }
}

impl fmt::Display for SpherePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpherePoint::Finite(z) => f.write_str(&format_cplx(*z)),
            SpherePoint::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for SpherePoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(SpherePoint::Infinity),
            t => parse_cplx(t).map(SpherePoint::Finite),
        }
    }
}

/// Normalization kind of a map.
///
/// `General` marks a map that has not been put in either normal form; most
/// point-wise operations work on it, but the test-function catalog does not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MapKind {
    Polynomial,
    NormalizedRational { a: Cplx },
    SphereJulia,
    General,
}

/// Which coordinates a derivative is expressed in when a point is at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChartTag {
    /// Source in the `1/z` chart, image in the plane.
    SourceInverted,
    /// Source in the plane, image in the `1/w` chart.
    TargetInverted,
    /// Both in inverted charts.
    BothInverted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivative {
    Plane(Cplx),
    Chart { value: Cplx, tag: ChartTag },
}

impl Derivative {
    pub fn value(self) -> Cplx {
        match self {
            Derivative::Plane(v) | Derivative::Chart { value: v, .. } => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapValue {
    pub image: SpherePoint,
    pub derivative: Derivative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub point: SpherePoint,
    pub multiplicity: usize,
    pub value: SpherePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub point: SpherePoint,
    pub multiplicity: usize,
    /// Plane multiplier for finite points, chart multiplier at infinity.
    pub multiplier: Cplx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPortrait {
    pub points: Vec<CriticalPoint>,
    /// Pairwise distinct finite values of finite critical points.
    pub values: Vec<Cplx>,
    pub infinity_critical: bool,
    pub infinity_is_critical_value: bool,
}

impl CriticalPortrait {
    pub fn total_multiplicity(&self) -> usize {
        self.points.iter().map(|c| c.multiplicity).sum()
    }

    /// Finite critical points whose value is `v` (within the dedup tolerance).
    pub fn points_over(&self, v: Cplx) -> impl Iterator<Item = &CriticalPoint> + '_ {
        self.points.iter().filter(move |cp| match (cp.point, cp.value) {
            (SpherePoint::Finite(_), SpherePoint::Finite(w)) => (w - v).norm() <= dedup_tol(v),
            _ => false,
        })
    }

    pub fn finite_points(&self) -> impl Iterator<Item = (Cplx, usize)> + '_ {
        self.points
            .iter()
            .filter_map(|cp| cp.point.finite().map(|z| (z, cp.multiplicity)))
    }
}

/// Tolerance used to identify two critical values.
pub fn dedup_tol(v: Cplx) -> f64 {
    1e-8 * (1.0 + v.norm())
}

#[derive(Clone, PartialEq)]
pub struct RationalMap {
    num: Poly,
    den: Poly,
    dnum: Poly,
    dden: Poly,
    kind: MapKind,
    portrait: CriticalPortrait,
    fixed: Vec<FixedPoint>,
}

impl fmt::Debug for RationalMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RationalMap")
            .field("num", &self.num)
            .field("den", &self.den)
            .field("kind", &self.kind)
            .finish()
    }
}

impl RationalMap {
    pub fn new(num: Poly, den: Poly, kind: MapKind) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::InvalidMap("zero denominator".into()));
        }
        let degree = num.degree().max(den.degree());
        if degree < 2 {
            return Err(Error::InvalidMap(format!("degree {degree} < 2")));
        }
        if num.degree() >= 1 && den.degree() >= 1 {
            let res = normalized_resultant(&num, &den)?;
            if res <= COPRIME_THRESHOLD {
                return Err(Error::InvalidMap(format!(
                    "numerator and denominator share a root (normalized resultant {res:e})"
                )));
            }
        }
        let mut map = RationalMap {
            dnum: num.derivative(),
            dden: den.derivative(),
            num,
            den,
            kind,
            portrait: CriticalPortrait {
                points: Vec::new(),
                values: Vec::new(),
                infinity_critical: false,
                infinity_is_critical_value: false,
            },
            fixed: Vec::new(),
        };
        map.portrait = map.compute_portrait()?;
        map.fixed = map.compute_fixed_points()?;
        map.check_kind()?;
        Ok(map)
    }

    pub fn polynomial(p: Poly) -> Result<Self> {
        RationalMap::new(p, Poly::constant(Cplx::new(1.0, 0.0)), MapKind::Polynomial)
    }

    /// `z² + c`.
    pub fn quadratic(c: Cplx) -> Result<Self> {
        RationalMap::polynomial(Poly::new(vec![c, Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0)]))
    }

    /// The flexible Lattès map `(z²+1)² / (4z(z²−1))`.
    pub fn lattes() -> Self {
        let num = Poly::from_real(&[1.0, 0.0, 2.0, 0.0, 1.0]);
        let den = Poly::from_real(&[0.0, -4.0, 0.0, 4.0]);
        RationalMap::new(num, den, MapKind::General).expect("Lattès map is valid")
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn degree(&self) -> usize {
        self.num.degree().max(self.den.degree())
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.degree() == 0
    }

    pub fn critical_portrait(&self) -> &CriticalPortrait {
        &self.portrait
    }

    pub fn critical_values(&self) -> &[Cplx] {
        &self.portrait.values
    }

    pub fn fixed_points(&self) -> &[FixedPoint] {
        &self.fixed
    }

    /// A copy carrying a different kind tag, re-validated.
    pub fn with_kind(&self, kind: MapKind) -> Result<Self> {
        let mut m = self.clone();
        m.kind = kind;
        m.check_kind()?;
        Ok(m)
    }

    /// Fast path for a finite point with finite image: `(f(z), f'(z))`.
    ///
    /// Returns `None` at poles. Points beyond [`CHART_RADIUS`] are evaluated in the `1/z` chart.
    pub fn eval_plane(&self, z: Cplx) -> Option<(Cplx, Cplx)> {
        if z.norm() > CHART_RADIUS {
            return self.eval_far(z);
        }
        let (n, dn) = self.num.horner_eval(z);
        let (d, dd) = self.den.horner_eval(z);
        let w = n / d;
        if d.norm() == 0.0 || !w.is_finite() {
            return None;
        }
        Some((w, (dn * d - n * dd) / (d * d)))
    }

    fn eval_far(&self, z: Cplx) -> Option<(Cplx, Cplx)> {
        let zeta = z.inv();
        let nr = self.num.reversed();
        let dr = self.den.reversed();
        let k = self.den.degree() as i32 - self.num.degree() as i32;
        let (a, da) = nr.horner_eval(zeta);
        let (b, db) = dr.horner_eval(zeta);
        if b.norm() == 0.0 {
            return None;
        }
        let ratio = a / b;
        let dratio = (da * b - a * db) / (b * b);
        let h = zeta.powi(k) * ratio;
        let dh = if k == 0 {
            dratio
        } else {
            zeta.powi(k - 1) * ratio * k as f64 + zeta.powi(k) * dratio
        };
        if !h.is_finite() {
            return None;
        }
        Some((h, -zeta * zeta * dh))
    }

    /// Image and derivative of any sphere point, in the appropriate chart.
    pub fn eval(&self, z: SpherePoint) -> Result<MapValue> {
        match z {
            SpherePoint::Infinity => Ok(self.eval_at_infinity()),
            SpherePoint::Finite(z) => {
                if z.norm() <= CHART_RADIUS {
                    let (n, dn) = self.num.horner_eval(z);
                    let (d, dd) = self.den.horner_eval(z);
                    if self.den.degree() > 0
                        && n.norm() <= 1e-13 * self.num.eval_abs(z)
                        && d.norm() <= 1e-13 * self.den.eval_abs(z)
                    {
                        return Err(Error::IndeterminateAtCommonRoot { at: z });
                    }
                    let w = n / d;
                    if d.norm() == 0.0 || !w.is_finite() {
                        return Ok(MapValue {
                            image: SpherePoint::Infinity,
                            derivative: Derivative::Chart {
                                value: (dd * n - d * dn) / (n * n),
                                tag: ChartTag::TargetInverted,
                            },
                        });
                    }
                    Ok(MapValue {
                        image: SpherePoint::Finite(w),
                        derivative: Derivative::Plane((dn * d - n * dd) / (d * d)),
                    })
                } else {
                    match self.eval_far(z) {
                        Some((w, dw)) => Ok(MapValue {
                            image: SpherePoint::Finite(w),
                            derivative: Derivative::Plane(dw),
                        }),
                        None => {
                            // Pole far out: derivative of 1/f.
                            let (n, dn) = self.num.horner_eval(z);
                            let (d, dd) = self.den.horner_eval(z);
                            Ok(MapValue {
                                image: SpherePoint::Infinity,
                                derivative: Derivative::Chart {
                                    value: (dd * n - d * dn) / (n * n),
                                    tag: ChartTag::TargetInverted,
                                },
                            })
                        }
                    }
                }
            }
        }
    }

    fn eval_at_infinity(&self) -> MapValue {
        let n = self.num.degree();
        let m = self.den.degree();
        let zero = Cplx::new(0.0, 0.0);
        let coef = |p: &Poly, k: usize| p.coeffs().get(k).copied().unwrap_or(zero);
        if n > m {
            let value = if n - m == 1 {
                self.den.leading() / self.num.leading()
            } else {
                zero
            };
            MapValue {
                image: SpherePoint::Infinity,
                derivative: Derivative::Chart {
                    value,
                    tag: ChartTag::BothInverted,
                },
            }
        } else {
            let a = if n == m {
                self.num.leading() / self.den.leading()
            } else {
                zero
            };
            let value = if m - n >= 2 {
                zero
            } else if m - n == 1 {
                self.num.leading() / self.den.leading()
            } else {
                // (Ñ/D̃)'(0) with Ñ(ζ) = ζ^n num(1/ζ).
                let n0 = self.num.leading();
                let d0 = self.den.leading();
                let n1 = if n >= 1 { coef(&self.num, n - 1) } else { zero };
                let d1 = if m >= 1 { coef(&self.den, m - 1) } else { zero };
                (n1 * d0 - n0 * d1) / (d0 * d0)
            };
            MapValue {
                image: SpherePoint::Finite(a),
                derivative: Derivative::Chart {
                    value,
                    tag: ChartTag::SourceInverted,
                },
            }
        }
    }

    /// `f(∞)`.
    pub fn value_at_infinity(&self) -> SpherePoint {
        self.eval_at_infinity().image
    }

    /// Local degree of `f` at infinity.
    fn local_degree_at_infinity(&self) -> usize {
        let n = self.num.degree();
        let m = self.den.degree();
        if n != m {
            return n.abs_diff(m);
        }
        let a = self.num.leading() / self.den.leading();
        let scale = self.num.max_coeff().max(a.norm() * self.den.max_coeff());
        for k in 1..=n {
            let e = self.num.coeffs()[n - k] - a * self.den.coeffs()[m - k];
            if e.norm() > 1e-12 * scale {
                return k;
            }
        }
        n
    }

    fn compute_portrait(&self) -> Result<CriticalPortrait> {
        let w = self.dnum.mul(&self.den).sub(&self.num.mul(&self.dden));
        let w = clean(&w, 1e-14);
        if w.is_zero() {
            return Err(Error::InvalidMap("map is constant".into()));
        }
        let mut points = Vec::new();
        if w.degree() > 0 {
            for r in w.roots(ROOT_TOL)? {
                let value = match self.eval(SpherePoint::Finite(r.value)) {
                    Ok(v) => v.image,
                    Err(_) => SpherePoint::Infinity,
                };
                points.push(CriticalPoint {
                    point: SpherePoint::Finite(r.value),
                    multiplicity: r.multiplicity,
                    value,
                });
            }
        }
        let local = self.local_degree_at_infinity();
        let infinity_critical = local > 1;
        if infinity_critical {
            points.push(CriticalPoint {
                point: SpherePoint::Infinity,
                multiplicity: local - 1,
                value: self.value_at_infinity(),
            });
        }
        let mut values: Vec<Cplx> = Vec::new();
        for cp in &points {
            if let (SpherePoint::Finite(_), SpherePoint::Finite(v)) = (cp.point, cp.value) {
                if !values.iter().any(|&u| (u - v).norm() <= dedup_tol(v)) {
                    values.push(v);
                }
            }
        }
        values.sort_by(|a, b| canonical_cmp(*a, *b));
        let infinity_is_critical_value = points.iter().any(|cp| cp.value.is_infinity());
        Ok(CriticalPortrait {
            points,
            values,
            infinity_critical,
            infinity_is_critical_value,
        })
    }

    fn compute_fixed_points(&self) -> Result<Vec<FixedPoint>> {
        let f = self.num.sub(&Poly::identity().mul(&self.den));
        let f = clean(&f, 1e-14);
        if f.is_zero() {
            return Err(Error::InvalidMap("identity map".into()));
        }
        let mut out = Vec::new();
        if f.degree() > 0 {
            for r in f.roots(ROOT_TOL)? {
                let multiplier = self
                    .eval(SpherePoint::Finite(r.value))?
                    .derivative
                    .value();
                out.push(FixedPoint {
                    point: SpherePoint::Finite(r.value),
                    multiplicity: r.multiplicity,
                    multiplier,
                });
            }
        }
        if self.num.degree() > self.den.degree() {
            let at_inf = self.eval_at_infinity();
            out.push(FixedPoint {
                point: SpherePoint::Infinity,
                multiplicity: 1,
                multiplier: at_inf.derivative.value(),
            });
        }
        Ok(out)
    }

    fn check_kind(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidMap(msg));
        match self.kind {
            MapKind::Polynomial => {
                if self.den.degree() != 0 {
                    return bad("polynomial kind requires a constant denominator".into());
                }
            }
            MapKind::NormalizedRational { a } => {
                if self.den.degree() == 0 {
                    return bad("normalized rational kind requires a non-constant denominator".into());
                }
                match self.value_at_infinity() {
                    SpherePoint::Finite(v) if (v - a).norm() <= KIND_TOL * (1.0 + a.norm()) => {}
                    other => return bad(format!("f(∞) = {other}, expected {}", format_cplx(a))),
                }
                if self.portrait.infinity_critical {
                    return bad("∞ is a critical point".into());
                }
                if self.portrait.values.iter().any(|&v| (v - a).norm() <= dedup_tol(v)) {
                    return bad("a = f(∞) is a critical value".into());
                }
            }
            MapKind::SphereJulia => {
                if self.value_at_infinity() != SpherePoint::Infinity {
                    return bad("sphere kind requires f(∞) = ∞".into());
                }
                if self.portrait.infinity_critical {
                    return bad("∞ is a critical point".into());
                }
                for p in [0.0, 1.0] {
                    let z = Cplx::new(p, 0.0);
                    match self.eval_plane(z) {
                        Some((w, dw)) => {
                            if (w - z).norm() > KIND_TOL {
                                return bad(format!("f({p}) = {} ≠ {p}", format_cplx(w)));
                            }
                            if dw.norm() <= 1e-8 {
                                return bad(format!("{p} is a critical point"));
                            }
                        }
                        None => return bad(format!("{p} is a pole")),
                    }
                }
            }
            MapKind::General => {}
        }
        Ok(())
    }

    /// Conjugate `m ∘ f ∘ m⁻¹`, tagged with `kind`.
    pub fn conjugate(&self, m: &Mobius, kind: MapKind) -> Result<RationalMap> {
        let inv = m.inverse();
        let d = self.degree();
        // m⁻¹(w) = (αw+β)/(γw+δ)
        let top = Poly::new(vec![inv.b, inv.a]);
        let bottom = Poly::new(vec![inv.d, inv.c]);
        let top_pows: Vec<Poly> = (0..=d).map(|k| top.pow(k)).collect();
        let bottom_pows: Vec<Poly> = (0..=d).map(|k| bottom.pow(k)).collect();
        let substitute = |p: &Poly| {
            let mut acc = Poly::constant(Cplx::new(0.0, 0.0));
            for (k, &a) in p.coeffs().iter().enumerate() {
                acc = acc.add(&top_pows[k].mul(&bottom_pows[d - k]).scale(a));
            }
            acc
        };
        let n_sub = substitute(&self.num);
        let d_sub = substitute(&self.den);
        let num = n_sub.scale(m.a).add(&d_sub.scale(m.b));
        let den = n_sub.scale(m.c).add(&d_sub.scale(m.d));
        let s = num.max_coeff().max(den.max_coeff());
        let unit = Cplx::new(1.0 / s, 0.0);
        let num = clean(&num.scale(unit), 1e-13);
        let den = clean(&den.scale(unit), 1e-13);
        RationalMap::new(num, den, kind)
    }

    /// Conjugates into one of the two normal forms.
    pub fn normalize(
        &self,
        mode: NormalizeMode,
        hints: &NormalizeHints,
    ) -> Result<(RationalMap, Mobius)> {
        match mode {
            NormalizeMode::InfinityInFatou => {
                let p = hints.fatou_point.ok_or(Error::HintRequired)?;
                let m = match p {
                    SpherePoint::Infinity => Mobius::identity(),
                    SpherePoint::Finite(p) => Mobius::new(
                        Cplx::new(0.0, 0.0),
                        Cplx::new(1.0, 0.0),
                        Cplx::new(1.0, 0.0),
                        -p,
                    )?,
                };
                let g = self.conjugate(&m, MapKind::General)?;
                let a = match g.value_at_infinity() {
                    SpherePoint::Finite(a) => a,
                    SpherePoint::Infinity => {
                        return Err(Error::NormalizationImpossible(
                            "hinted point is fixed; f(∞) would be ∞".into(),
                        ))
                    }
                };
                let g = g
                    .with_kind(MapKind::NormalizedRational { a })
                    .map_err(|e| Error::NormalizationImpossible(e.to_string()))?;
                Ok((g, m))
            }
            NormalizeMode::ThreeFixedPoints => {
                let [to_inf, to_one, to_zero] = match hints.fixed_points {
                    Some(t) => {
                        for p in t {
                            if !self.is_noncritical_fixed(p) {
                                return Err(Error::NormalizationImpossible(format!(
                                    "{p} is not a non-critical fixed point"
                                )));
                            }
                        }
                        t
                    }
                    None => self.default_fixed_triple()?,
                };
                let m = Mobius::sending_to_inf_one_zero(to_inf, to_one, to_zero)?;
                let g = self
                    .conjugate(&m, MapKind::SphereJulia)
                    .map_err(|e| match e {
                        Error::InvalidMap(msg) => Error::NormalizationImpossible(msg),
                        other => other,
                    })?;
                Ok((g, m))
            }
        }
    }

    fn eligible_fixed(&self) -> Vec<SpherePoint> {
        self.fixed
            .iter()
            .filter(|fp| fp.multiplicity == 1 && fp.multiplier.norm() > 1e-8)
            .map(|fp| fp.point)
            .collect()
    }

    fn is_noncritical_fixed(&self, p: SpherePoint) -> bool {
        self.eligible_fixed().iter().any(|&q| q.chordal(p) <= 1e-9)
    }

    fn default_fixed_triple(&self) -> Result<[SpherePoint; 3]> {
        let eligible = self.eligible_fixed();
        let has = |p: SpherePoint| eligible.iter().any(|&q| q.chordal(p) <= 1e-9);
        let zero = SpherePoint::Finite(Cplx::new(0.0, 0.0));
        let one = SpherePoint::Finite(Cplx::new(1.0, 0.0));
        if has(SpherePoint::Infinity) && has(one) && has(zero) {
            return Ok([SpherePoint::Infinity, one, zero]);
        }
        let mut finite: Vec<Cplx> = eligible.iter().filter_map(|p| p.finite()).collect();
        // Real fixed points first, then canonical order.
        finite.sort_by(|a, b| {
            (a.im.abs() > 1e-12)
                .cmp(&(b.im.abs() > 1e-12))
                .then(canonical_cmp(*a, *b))
        });
        let mut chosen: Vec<SpherePoint> = Vec::new();
        if has(SpherePoint::Infinity) {
            chosen.push(SpherePoint::Infinity);
        }
        chosen.extend(finite.into_iter().map(SpherePoint::Finite));
        if chosen.len() < 3 {
            return Err(Error::NormalizationImpossible(format!(
                "only {} non-critical fixed points",
                chosen.len()
            )));
        }
        // `m(z) = (z - z1) / (z2 - z1)`: the first finite point goes to 0, the second to 1.
        Ok([chosen[0], chosen[2], chosen[1]])
    }

    /// Forward orbits of all critical values, merged within `merge_eps`.
    pub fn postcritical_cloud(&self, n_max: usize, merge_eps: f64) -> PostcriticalCloud {
        let mut cloud = PostcriticalCloud {
            finite: Vec::new(),
            contains_infinity: false,
            a_orbit: None,
        };
        for cp in &self.portrait.points {
            self.trace_orbit(cp.value, n_max, merge_eps, &mut cloud.finite, &mut cloud.contains_infinity);
        }
        if let MapKind::NormalizedRational { a } = self.kind {
            let mut pts = Vec::new();
            let mut inf = false;
            if let Ok(v) = self.eval(SpherePoint::Finite(a)) {
                self.trace_orbit(v.image, n_max, merge_eps, &mut pts, &mut inf);
            }
            cloud.a_orbit = Some(pts);
        }
        cloud
    }

    fn trace_orbit(
        &self,
        start: SpherePoint,
        n_max: usize,
        merge_eps: f64,
        out: &mut Vec<Cplx>,
        infinity: &mut bool,
    ) {
        let mut p = start;
        for _ in 0..n_max {
            match p {
                SpherePoint::Infinity => {
                    if *infinity {
                        break;
                    }
                    *infinity = true;
                }
                SpherePoint::Finite(z) if z.norm() > ESCAPE_MODULUS => {
                    if *infinity {
                        break;
                    }
                    *infinity = true;
                    p = SpherePoint::Infinity;
                }
                SpherePoint::Finite(z) => {
                    if out.iter().any(|&q| (q - z).norm() <= merge_eps) {
                        break;
                    }
                    out.push(z);
                }
            }
            p = match self.eval(p) {
                Ok(v) => v.image,
                Err(_) => break,
            };
        }
    }
}

/// Normalized resultant magnitude: `|lc(n)|^deg(d) Π |d(r_i)|` over roots of `n`, after
/// scaling both polynomials to unit max coefficient.
pub fn normalized_resultant(num: &Poly, den: &Poly) -> Result<f64> {
    let n = num.scale(Cplx::new(1.0 / num.max_coeff(), 0.0));
    let d = den.scale(Cplx::new(1.0 / den.max_coeff(), 0.0));
    let mut res = n.leading().norm().powi(d.degree() as i32);
    for r in n.roots(ROOT_TOL)? {
        res *= d.eval(r.value).norm().powi(r.multiplicity as i32);
    }
    Ok(res)
}

/// Zeroes coefficients below `rel * max_coeff`.
fn clean(p: &Poly, rel: f64) -> Poly {
    let s = p.max_coeff();
    Poly::new(
        p.coeffs()
            .iter()
            .map(|&a| if a.norm() <= rel * s { Cplx::new(0.0, 0.0) } else { a })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    /// Send a caller-designated Fatou point to ∞ (`a = f(∞)` finite, non-critical).
    InfinityInFatou,
    /// Send three non-critical fixed points to `∞, 1, 0`.
    ThreeFixedPoints,
}

#[derive(Debug, Clone, Default)]
pub struct NormalizeHints {
    pub fatou_point: Option<SpherePoint>,
    /// Fixed points sent to `∞`, `1` and `0` respectively.
    pub fixed_points: Option<[SpherePoint; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostcriticalCloud {
    pub finite: Vec<Cplx>,
    pub contains_infinity: bool,
    /// Orbit of `a = f(∞)` for normalized rational maps.
    pub a_orbit: Option<Vec<Cplx>>,
}

impl PostcriticalCloud {
    pub fn all_finite(&self) -> impl Iterator<Item = Cplx> + '_ {
        self.finite
            .iter()
            .copied()
            .chain(self.a_orbit.iter().flatten().copied())
    }

    pub fn distance(&self, x: Cplx) -> f64 {
        self.all_finite()
            .map(|p| (p - x).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Diameter of the bounding box of the finite points.
    pub fn bbox_diameter(&self) -> f64 {
        let mut it = self.all_finite();
        let Some(first) = it.next() else { return 0.0 };
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = Cplx::new(lo.re.min(p.re), lo.im.min(p.im));
            hi = Cplx::new(hi.re.max(p.re), hi.im.max(p.im));
        }
        (hi - lo).norm()
    }
}

/// `z ↦ (az + b)/(cz + d)`, stored with determinant 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: Cplx,
    pub b: Cplx,
    pub c: Cplx,
    pub d: Cplx,
}

impl Mobius {
    pub fn new(a: Cplx, b: Cplx, c: Cplx, d: Cplx) -> Result<Self> {
        let det = a * d - b * c;
        let scale = [a, b, c, d].iter().map(|z| z.norm()).fold(0.0, f64::max);
        if det.norm() <= 1e-12 * scale * scale || scale == 0.0 {
            return Err(Error::InvalidInput("degenerate Möbius transformation".into()));
        }
        let s = det.sqrt().inv();
        Ok(Mobius {
            a: a * s,
            b: b * s,
            c: c * s,
            d: d * s,
        })
    }

    pub fn identity() -> Self {
        let one = Cplx::new(1.0, 0.0);
        let zero = Cplx::new(0.0, 0.0);
        Mobius { a: one, b: zero, c: zero, d: one }
    }

    /// The unique map sending `p_inf → ∞`, `p_one → 1`, `p_zero → 0`.
    pub fn sending_to_inf_one_zero(
        p_inf: SpherePoint,
        p_one: SpherePoint,
        p_zero: SpherePoint,
    ) -> Result<Self> {
        let one = Cplx::new(1.0, 0.0);
        let zero = Cplx::new(0.0, 0.0);
        use SpherePoint::{Finite as F, Infinity as I};
        match (p_inf, p_one, p_zero) {
            (I, F(p1), F(p0)) => Mobius::new(one, -p0, zero, p1 - p0),
            (F(pi), I, F(p0)) => Mobius::new(one, -p0, one, -pi),
            (F(pi), F(p1), I) => Mobius::new(zero, p1 - pi, one, -pi),
            (F(pi), F(p1), F(p0)) => {
                Mobius::new(p1 - pi, -p0 * (p1 - pi), p1 - p0, -pi * (p1 - p0))
            }
            _ => Err(Error::InvalidInput("points must be distinct".into())),
        }
    }

    pub fn inverse(&self) -> Self {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn compose(&self, other: &Mobius) -> Mobius {
        Mobius {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    pub fn apply(&self, z: SpherePoint) -> SpherePoint {
        match z {
            SpherePoint::Infinity => {
                if self.c.norm() == 0.0 {
                    SpherePoint::Infinity
                } else {
                    SpherePoint::Finite(self.a / self.c)
                }
            }
            SpherePoint::Finite(z) => {
                let den = self.c * z + self.d;
                if den.norm() == 0.0 {
                    SpherePoint::Infinity
                } else {
                    SpherePoint::from((self.a * z + self.b) / den)
                }
            }
        }
    }

    pub fn apply_finite(&self, z: Cplx) -> Option<Cplx> {
        self.apply(SpherePoint::Finite(z)).finite()
    }
}

/// Parses the map file format: numerator line, denominator line, kind line.
///
/// Blank lines and lines starting with `#` are ignored. The kind line is one of
/// `polynomial`, `normalized [a]`, `sphere`, `general`.
pub fn parse_map(text: &str) -> Result<RationalMap> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if lines.len() != 3 {
        return Err(Error::Parse(format!(
            "map file needs 3 lines (numerator, denominator, kind), found {}",
            lines.len()
        )));
    }
    let num: Poly = lines[0].parse()?;
    let den: Poly = lines[1].parse()?;
    let mut words = lines[2].split_whitespace();
    let kind = match words.next() {
        Some("polynomial") => MapKind::Polynomial,
        Some("sphere") => MapKind::SphereJulia,
        Some("general") => MapKind::General,
        Some("normalized") => {
            let a = match words.next() {
                Some(t) => parse_cplx(t)?,
                None => {
                    let probe = RationalMap::new(num.clone(), den.clone(), MapKind::General)?;
                    probe.value_at_infinity().finite().ok_or_else(|| {
                        Error::InvalidMap("normalized kind requires f(∞) finite".into())
                    })?
                }
            };
            MapKind::NormalizedRational { a }
        }
        other => return Err(Error::Parse(format!("unknown kind tag {other:?}"))),
    };
    RationalMap::new(num, den, kind)
}

/// Inverse of [`parse_map`].
pub fn format_map(f: &RationalMap) -> String {
    let kind = match f.kind() {
        MapKind::Polynomial => "polynomial".to_string(),
        MapKind::NormalizedRational { a } => format!("normalized {}", format_cplx(a)),
        MapKind::SphereJulia => "sphere".to_string(),
        MapKind::General => "general".to_string(),
    };
    format!("{}\n{}\n{}\n", f.num(), f.den(), kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c;
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn close(a: Cplx, b: Cplx, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn lattes_real_fixed() -> (Cplx, Cplx) {
        // Real roots of 3z⁴ − 6z² − 1: z² = 1 + 2/√3.
        let r = (1.0 + 2.0 / 3f64.sqrt()).sqrt();
        (c(-r, 0.0), c(r, 0.0))
    }

    #[test]
    fn eval_examples() {
        let sq = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        let v = sq.eval(SpherePoint::Finite(c(1.0, 1.0))).unwrap();
        assert_eq!(v.image, SpherePoint::Finite(c(0.0, 2.0)));
        assert_eq!(v.derivative, Derivative::Plane(c(2.0, 2.0)));

        let f = RationalMap::lattes();
        let v = f.eval(SpherePoint::Finite(c(0.0, 1.0))).unwrap();
        assert!(close(v.image.finite().unwrap(), c(0.0, 0.0), 1e-15));
        assert!(v.derivative.value().is_finite());

        let v = f.eval(SpherePoint::Infinity).unwrap();
        assert_eq!(v.image, SpherePoint::Infinity);
        assert_eq!(
            v.derivative,
            Derivative::Chart { value: c(4.0, 0.0), tag: ChartTag::BothInverted }
        );
    }

    #[test]
    fn chart_derivative_at_infinity_matches_laurent_expansion() {
        // 1/f(1/ζ) has derivative 4 at ζ = 0; check by finite differences.
        let f = RationalMap::lattes();
        let h = 1e-6;
        let g = |zeta: Cplx| f.eval_plane(zeta.inv()).unwrap().0.inv();
        let fd = (g(c(h, 0.0)) - g(c(-h, 0.0))) / (2.0 * h);
        assert!(close(fd, c(4.0, 0.0), 1e-6));
    }

    #[test]
    fn pole_and_common_root() {
        let f = RationalMap::lattes();
        assert_eq!(f.eval(SpherePoint::Finite(c(1.0, 0.0))).unwrap().image, SpherePoint::Infinity);
        let shared =
            RationalMap::new(Poly::from_real(&[-1.0, 0.0, 1.0]), Poly::from_real(&[-1.0, 1.0]), MapKind::General);
        assert!(matches!(shared, Err(Error::InvalidMap(_))));
    }

    #[test]
    fn far_chart_agrees_with_plane_evaluation() {
        let f = RationalMap::lattes();
        let z = c(3e6, -2e6);
        let (w, dw) = f.eval_plane(z).unwrap();
        let (n, dn) = f.num().horner_eval(z);
        let (d, dd) = f.den().horner_eval(z);
        assert!(close(w, n / d, 1e-9 * w.norm()));
        assert!(close(dw, (dn * d - n * dd) / (d * d), 1e-9 * dw.norm()));
    }

    #[test]
    fn portrait_quadratic() {
        let cval = c(0.3, -0.2);
        let f = RationalMap::quadratic(cval).unwrap();
        let p = f.critical_portrait();
        assert_eq!(p.values, vec![cval]);
        assert!(p.infinity_critical);
        assert_eq!(p.total_multiplicity(), 2);
    }

    #[test]
    fn portrait_cubic() {
        let f = RationalMap::polynomial(Poly::from_real(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        let p = f.critical_portrait();
        assert_eq!(p.points.len(), 2);
        assert_eq!(p.points[0].point, SpherePoint::Finite(c(0.0, 0.0)));
        assert_eq!(p.points[0].multiplicity, 2);
        assert_eq!(p.points[1].point, SpherePoint::Infinity);
        assert_eq!(p.points[1].multiplicity, 2);
        assert_eq!(p.values, vec![c(0.0, 0.0)]);
    }

    #[test]
    fn portrait_lattes_riemann_hurwitz() {
        let f = RationalMap::lattes();
        let p = f.critical_portrait();
        assert_eq!(p.total_multiplicity(), 2 * f.degree() - 2);
        assert_eq!(p.values.len(), 3);
        for (v, want) in p.values.iter().zip([-1.0, 0.0, 1.0]) {
            assert!(close(*v, c(want, 0.0), 1e-9));
        }
        // Each critical point polished by Newton on f' stays put.
        let dnum = f.num().derivative().mul(f.den()).sub(&f.num().mul(&f.den().derivative()));
        for (z, _) in p.finite_points() {
            let (v, d) = dnum.horner_eval(z);
            assert!((v / d).norm() < 1e-12);
        }
    }

    #[test]
    fn fixed_points_examples() {
        let f = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        let fp = f.fixed_points();
        assert_eq!(fp.len(), 3);
        assert!(close(fp[0].point.finite().unwrap(), c(0.0, 0.0), 1e-14));
        assert!(close(fp[0].multiplier, c(0.0, 0.0), 1e-14));
        assert!(close(fp[1].point.finite().unwrap(), c(1.0, 0.0), 1e-14));
        assert!(close(fp[1].multiplier, c(2.0, 0.0), 1e-14));
        assert_eq!(fp[2].point, SpherePoint::Infinity);
        assert_eq!(fp[2].multiplier, c(0.0, 0.0));

        let g = RationalMap::quadratic(c(-2.0, 0.0)).unwrap();
        let fin: Vec<_> = g.fixed_points().iter().filter(|p| !p.point.is_infinity()).collect();
        assert!(close(fin[0].point.finite().unwrap(), c(-1.0, 0.0), 1e-14));
        assert!(close(fin[0].multiplier, c(-2.0, 0.0), 1e-14));
        assert!(close(fin[1].point.finite().unwrap(), c(2.0, 0.0), 1e-14));
        assert!(close(fin[1].multiplier, c(4.0, 0.0), 1e-14));
    }

    #[test]
    fn lattes_fixed_points_solve_quartic() {
        let f = RationalMap::lattes();
        let quartic = Poly::from_real(&[-1.0, 0.0, -6.0, 0.0, 3.0]);
        let fp = f.fixed_points();
        assert_eq!(fp.len(), 5);
        let inf = fp.iter().find(|p| p.point.is_infinity()).unwrap();
        assert!(close(inf.multiplier, c(4.0, 0.0), 1e-14));
        for p in fp.iter().filter_map(|p| p.point.finite()) {
            assert!(quartic.eval(p).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_identity_when_already_normal() {
        // f(z) = z + k z(z − 1)(z − 2)/(z² + 5) fixes 0, 1 and ∞ with non-zero multipliers.
        let k = 0.5;
        let lin = Poly::identity().mul(&Poly::from_real(&[5.0, 0.0, 1.0]));
        let cubic = Poly::from_roots(&[c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)], c(k, 0.0));
        let num = lin.add(&cubic);
        let den = Poly::from_real(&[5.0, 0.0, 1.0]);
        let f = RationalMap::new(num, den, MapKind::General).unwrap();
        let (g, m) = f
            .normalize(NormalizeMode::ThreeFixedPoints, &NormalizeHints::default())
            .unwrap();
        assert_eq!(g.kind(), MapKind::SphereJulia);
        let id = Mobius::identity();
        for z in [c(0.3, 0.1), c(-2.0, 1.0)] {
            assert!(close(m.apply_finite(z).unwrap(), id.apply_finite(z).unwrap(), 1e-12));
        }
    }

    #[test]
    fn normalize_lattes_three_fixed_points() {
        let f = RationalMap::lattes();
        let (z1, z2) = lattes_real_fixed();
        let hints = NormalizeHints {
            fatou_point: None,
            fixed_points: Some([SpherePoint::Infinity, SpherePoint::Finite(z2), SpherePoint::Finite(z1)]),
        };
        let (g, m) = f.normalize(NormalizeMode::ThreeFixedPoints, &hints).unwrap();
        // m(z) = (z − z1)/(z2 − z1)
        for z in [c(0.2, 0.7), c(-1.5, 0.1)] {
            let want = (z - z1) / (z2 - z1);
            assert!(close(m.apply_finite(z).unwrap(), want, 1e-12));
        }
        assert_eq!(g.kind(), MapKind::SphereJulia);
        // Default choice picks the same triple.
        let (_, m2) = f
            .normalize(NormalizeMode::ThreeFixedPoints, &NormalizeHints::default())
            .unwrap();
        let z = c(0.4, 0.4);
        assert!(close(m.apply_finite(z).unwrap(), m2.apply_finite(z).unwrap(), 1e-12));
    }

    #[test]
    fn normalize_z2_impossible() {
        let f = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        let r = f.normalize(NormalizeMode::ThreeFixedPoints, &NormalizeHints::default());
        assert!(matches!(r, Err(Error::NormalizationImpossible(_))));
        let r = f.normalize(NormalizeMode::InfinityInFatou, &NormalizeHints::default());
        assert_eq!(r.unwrap_err(), Error::HintRequired);
    }

    #[test]
    fn normalize_mode_a() {
        // z² − 1 has the superattracting 2-cycle 0 ↔ −1; send 0 to ∞, then f(∞) = m(−1) = −1.
        let f = RationalMap::quadratic(c(-1.0, 0.0)).unwrap();
        let hints = NormalizeHints {
            fatou_point: Some(SpherePoint::Finite(c(0.0, 0.0))),
            fixed_points: None,
        };
        // 0 is critical, so a = m(f(0)) = m(−1) would be a critical value of g: rejected.
        assert!(matches!(
            f.normalize(NormalizeMode::InfinityInFatou, &hints),
            Err(Error::NormalizationImpossible(_))
        ));
        // A non-critical point of the basin works.
        let hints = NormalizeHints {
            fatou_point: Some(SpherePoint::Finite(c(0.1, 0.05))),
            fixed_points: None,
        };
        let (g, m) = f.normalize(NormalizeMode::InfinityInFatou, &hints).unwrap();
        let want = m.apply(SpherePoint::Finite(c(0.1f64.powi(2) - 0.05f64.powi(2) - 1.0, 0.01))).finite().unwrap();
        match g.kind() {
            MapKind::NormalizedRational { a } => assert!(close(a, want, 1e-9)),
            k => panic!("unexpected kind {k:?}"),
        }
    }

    fn conjugation_checks(f: &RationalMap, g: &RationalMap, m: &Mobius) {
        let mut rng = stream_rng(11, 0);
        let mut checked = 0;
        while checked < 100 {
            let z = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (Some(fz), Some(mz)) = (f.eval_plane(z).map(|v| v.0), m.apply_finite(z)) else { continue };
            let (Some(lhs), Some(rhs)) = (g.eval_plane(mz).map(|v| v.0), m.apply_finite(fz)) else { continue };
            assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()), "{lhs} vs {rhs}");
            checked += 1;
        }
        // Multipliers as multisets.
        let mut mf: Vec<Cplx> = f.fixed_points().iter().map(|p| p.multiplier).collect();
        let mut mg: Vec<Cplx> = g.fixed_points().iter().map(|p| p.multiplier).collect();
        mf.sort_by(|a, b| canonical_cmp(*a, *b));
        mg.sort_by(|a, b| canonical_cmp(*a, *b));
        assert_eq!(mf.len(), mg.len());
        for (a, b) in mf.iter().zip(&mg) {
            assert!(close(*a, *b, 1e-8), "{a} vs {b}");
        }
        // Critical values map across.
        for v in f.critical_values() {
            let mv = m.apply_finite(*v).unwrap();
            assert!(g.critical_values().iter().any(|w| close(*w, mv, 1e-8)));
        }
    }

    #[test]
    fn conjugation_consistency_lattes() {
        let f = RationalMap::lattes();
        let (g, m) = f
            .normalize(NormalizeMode::ThreeFixedPoints, &NormalizeHints::default())
            .unwrap();
        conjugation_checks(&f, &g, &m);
    }

    #[test]
    fn conjugation_consistency_general_mobius() {
        let f = RationalMap::quadratic(c(-0.12, 0.74)).unwrap();
        let m = Mobius::new(c(1.0, 0.5), c(0.2, 0.0), c(0.0, 0.0), c(1.0, 0.0)).unwrap();
        let g = f.conjugate(&m, MapKind::Polynomial).unwrap();
        conjugation_checks(&f, &g, &m);
    }

    #[test]
    fn postcritical_examples() {
        let f = RationalMap::quadratic(c(-2.0, 0.0)).unwrap();
        let cloud = f.postcritical_cloud(200, 1e-9);
        assert_eq!(cloud.finite, vec![c(-2.0, 0.0), c(2.0, 0.0)]);
        assert!(cloud.contains_infinity);

        let f = RationalMap::quadratic(c(0.0, 1.0)).unwrap();
        let cloud = f.postcritical_cloud(200, 1e-9);
        assert_eq!(cloud.finite.len(), 3);
        for want in [c(0.0, 1.0), c(-1.0, 1.0), c(0.0, -1.0)] {
            assert!(cloud.finite.iter().any(|&p| close(p, want, 1e-12)));
        }

        let f = RationalMap::quadratic(c(0.0, 0.0)).unwrap();
        assert_eq!(f.postcritical_cloud(200, 1e-9).finite, vec![c(0.0, 0.0)]);
    }

    #[test]
    fn postcritical_forward_invariant() {
        let f = RationalMap::quadratic(c(-0.1, 0.2)).unwrap();
        let eps = 1e-9;
        let cloud = f.postcritical_cloud(200, eps);
        let near = |z: Cplx| cloud.finite.iter().any(|&p| (p - z).norm() <= 2.0 * eps);
        for &p in &cloud.finite {
            let (w, _) = f.eval_plane(p).unwrap();
            assert!(near(w), "f({p}) = {w} not in cloud");
        }
    }

    #[test]
    fn map_file_roundtrip() {
        let f = RationalMap::lattes();
        let text = "# Lattès\n1+0i,0+0i,2+0i,0+0i,1+0i\n0+0i,-4+0i,0+0i,4+0i\ngeneral\n";
        let g = parse_map(text).unwrap();
        assert_eq!(g.num(), f.num());
        assert_eq!(g.den(), f.den());
        let h = parse_map(&format_map(&g)).unwrap();
        assert_eq!(h.num(), g.num());
        assert!(parse_map("1+0i\n1+0i\nweird\n").is_err());
    }

    #[test]
    fn kind_validation() {
        // Lattès does not fix 0, so it cannot be tagged sphere directly.
        assert!(RationalMap::lattes().with_kind(MapKind::SphereJulia).is_err());
        assert!(RationalMap::new(
            Poly::from_real(&[1.0, 0.0, 1.0]),
            Poly::from_real(&[1.0, 1.0]),
            MapKind::Polynomial
        )
        .is_err());
        let num = Poly::from_real(&[1.0, 0.0, 1.0]);
        let den = Poly::from_real(&[5.0, -3.0, 2.0]);
        let f = RationalMap::new(num, den, MapKind::NormalizedRational { a: c(0.5, 0.0) }).unwrap();
        assert!(!f.critical_portrait().infinity_critical);
    }
}
