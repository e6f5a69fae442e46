//! Cell models of planar sets and area integration.

use bitvec::prelude::*;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rational::RationalMap;
use crate::sampling::{mc_estimate, mc_polar_disk, stream_rng, Estimate};
use crate::transfer::finite_preimages;
use crate::Cplx;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: Cplx,
    pub hi: Cplx,
    pub resolution: usize,
}

impl Grid {
    pub fn new(lo: Cplx, hi: Cplx, resolution: usize) -> Result<Self> {
        if !(hi.re > lo.re && hi.im > lo.im) {
            return Err(Error::InvalidInput("degenerate grid box".into()));
        }
        if resolution < 8 {
            return Err(Error::InvalidInput(format!("resolution {resolution} < 8")));
        }
        Ok(Grid { lo, hi, resolution })
    }

    /// Square box `[-r, r]²` around `center`.
    pub fn square(center: Cplx, r: f64, resolution: usize) -> Result<Self> {
        Grid::new(center - Cplx::new(r, r), center + Cplx::new(r, r), resolution)
    }

    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        (self.hi.re - self.lo.re) / self.resolution as f64
    }

    pub fn dy(&self) -> f64 {
        (self.hi.im - self.lo.im) / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.dx().hypot(self.dy())
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.resolution + ix
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.resolution, idx / self.resolution)
    }

    pub fn center(&self, idx: usize) -> Cplx {
        let (ix, iy) = self.coords(idx);
        Cplx::new(
            self.lo.re + (ix as f64 + 0.5) * self.dx(),
            self.lo.im + (iy as f64 + 0.5) * self.dy(),
        )
    }

    /// Lower-left corner of cell `(ix, iy)`; `ix, iy` may equal `resolution`.
    pub fn vertex(&self, ix: usize, iy: usize) -> Cplx {
        Cplx::new(self.lo.re + ix as f64 * self.dx(), self.lo.im + iy as f64 * self.dy())
    }

    pub fn cell_of(&self, p: Cplx) -> Option<usize> {
        if !p.is_finite() {
            return None;
        }
        let fx = (p.re - self.lo.re) / self.dx();
        let fy = (p.im - self.lo.im) / self.dy();
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.resolution && iy < self.resolution).then(|| self.index(ix, iy))
    }

    /// The same box at `factor` times the resolution.
    pub fn refined(&self, factor: usize) -> Grid {
        Grid { resolution: self.resolution * factor, ..*self }
    }
}

#[derive(Clone, PartialEq)]
pub struct CellSet {
    grid: Grid,
    mask: BitVec,
}

impl std::fmt::Debug for CellSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CellSet({} of {} cells)", self.count(), self.grid.len())
    }
}

impl CellSet {
    pub fn empty(grid: Grid) -> Self {
        CellSet { grid, mask: bitvec![0; grid.len()] }
    }

    pub fn full(grid: Grid) -> Self {
        CellSet { grid, mask: bitvec![1; grid.len()] }
    }

    pub fn from_fn(grid: Grid, pred: impl Fn(usize) -> bool + Sync) -> Self {
        let bits: Vec<bool> = (0..grid.len()).into_par_iter().map(&pred).collect();
        CellSet { grid, mask: bits.into_iter().collect() }
    }

    /// Cells whose center lies within `r` of `center`.
    pub fn disk(grid: Grid, center: Cplx, r: f64) -> Self {
        CellSet::from_fn(grid, |i| (grid.center(i) - center).norm() <= r)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bits(&self) -> &BitSlice {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn contains_point(&self, p: Cplx) -> bool {
        self.grid.cell_of(p).is_some_and(|i| self.mask[i])
    }

    pub fn insert(&mut self, idx: usize) {
        self.mask.set(idx, true);
    }

    pub fn count(&self) -> usize {
        self.mask.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.not_any()
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.grid.cell_area()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter_ones()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    fn check(&self, other: &CellSet) {
        assert_eq!(self.grid, other.grid, "cell sets on different grids");
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        self.check(other);
        CellSet { grid: self.grid, mask: self.mask.clone() | &other.mask }
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        self.check(other);
        CellSet { grid: self.grid, mask: self.mask.clone() & &other.mask }
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        self.check(other);
        CellSet { grid: self.grid, mask: self.mask.clone() & !other.mask.clone() }
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.difference(other).is_empty()
    }

    pub fn is_disjoint(&self, other: &CellSet) -> bool {
        self.intersection(other).is_empty()
    }

    /// Adds every cell within `k` cells (Chebyshev distance) of a member.
    pub fn dilate(&self, k: usize) -> CellSet {
        let g = self.grid;
        let n = g.resolution as isize;
        let k = k as isize;
        CellSet::from_fn(g, |i| {
            let (ix, iy) = g.coords(i);
            for dy in -k..=k {
                for dx in -k..=k {
                    let (x, y) = (ix as isize + dx, iy as isize + dy);
                    if x >= 0 && y >= 0 && x < n && y < n && self.mask[g.index(x as usize, y as usize)] {
                        return true;
                    }
                }
            }
            false
        })
    }

    /// Binary P6 pixmap, top row = largest imaginary part, marked cells white.
    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.grid.resolution;
        let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
        for row in (0..n).rev() {
            for col in 0..n {
                let v = if self.mask[self.grid.index(col, row)] { 255 } else { 0 };
                out.extend_from_slice(&[v, v, v]);
            }
        }
        out
    }

    /// Inverse of [`CellSet::to_ppm`]: any non-black pixel marks its cell.
    pub fn from_ppm(grid: Grid, bytes: &[u8]) -> Result<CellSet> {
        let n = grid.resolution;
        let header = format!("P6\n{n} {n}\n255\n");
        let body = bytes
            .strip_prefix(header.as_bytes())
            .ok_or_else(|| Error::Parse("unexpected pixmap header".into()))?;
        if body.len() != 3 * n * n {
            return Err(Error::Parse("pixmap size mismatch".into()));
        }
        let mut set = CellSet::empty(grid);
        for (k, px) in body.chunks(3).enumerate() {
            if px.iter().any(|&b| b != 0) {
                let (row, col) = (n - 1 - k / n, k % n);
                set.insert(grid.index(col, row));
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JuliaParams {
    pub iter_cap: usize,
    pub escape_radius: f64,
    pub inverse_samples: usize,
    pub seed: u64,
}

impl Default for JuliaParams {
    fn default() -> Self {
        JuliaParams { iter_cap: 1000, escape_radius: 1e6, inverse_samples: 1 << 20, seed: 1 }
    }
}

/// Escape iteration count and, if the orbit escaped, the distance estimate `|z| ln|z| / |z'|`.
fn escape(f: &RationalMap, z0: Cplx, params: &JuliaParams) -> (usize, Option<f64>) {
    let mut z = z0;
    let mut dz = Cplx::new(1.0, 0.0);
    for n in 0..params.iter_cap {
        if z.norm() > params.escape_radius {
            let r = z.norm();
            return (n, Some(r * r.ln() / dz.norm()));
        }
        let Some((w, dw)) = f.eval_plane(z) else {
            return (n, Some(0.0));
        };
        dz *= dw;
        z = w;
    }
    (params.iter_cap, None)
}

/// Cell model of the Julia set.
///
/// Polynomials: a cell is marked when its corners disagree on escaping, or when the distance
/// estimate at its center is within one cell diagonal. Other maps: cells hit by random backward
/// orbits from a repelling fixed point.
pub fn julia_cells(f: &RationalMap, grid: Grid, params: &JuliaParams) -> Result<CellSet> {
    if f.is_polynomial() {
        let n = grid.resolution;
        let escaped: Vec<bool> = (0..(n + 1) * (n + 1))
            .into_par_iter()
            .map(|k| escape(f, grid.vertex(k % (n + 1), k / (n + 1)), params).1.is_some())
            .collect();
        let diag = grid.cell_diagonal();
        Ok(CellSet::from_fn(grid, |i| {
            let (ix, iy) = grid.coords(i);
            let corners = [
                escaped[iy * (n + 1) + ix],
                escaped[iy * (n + 1) + ix + 1],
                escaped[(iy + 1) * (n + 1) + ix],
                escaped[(iy + 1) * (n + 1) + ix + 1],
            ];
            if corners.iter().any(|&e| e != corners[0]) {
                return true;
            }
            matches!(escape(f, grid.center(i), params).1, Some(d) if d <= diag)
        }))
    } else {
        inverse_iteration_cells(f, grid, params)
    }
}

/// A finite fixed point with multiplier modulus above 1.
pub fn repelling_seed(f: &RationalMap) -> Result<Cplx> {
    f.fixed_points()
        .iter()
        .filter(|p| p.multiplier.norm() > 1.0 + 1e-9)
        .filter_map(|p| p.point.finite())
        .next()
        .ok_or(Error::SeedNotRepelling)
}

fn inverse_iteration_cells(f: &RationalMap, grid: Grid, params: &JuliaParams) -> Result<CellSet> {
    const CHAINS: usize = 64;
    const BURN_IN: usize = 100;
    let seed_point = repelling_seed(f)?;
    let per_chain = params.inverse_samples.div_ceil(CHAINS);
    let masks: Vec<BitVec> = (0..CHAINS)
        .into_par_iter()
        .map(|chain| {
            let mut rng = stream_rng(params.seed, chain as u64);
            let mut mask = bitvec![0; grid.len()];
            let mut z = seed_point;
            for step in 0..BURN_IN + per_chain {
                let pre = match finite_preimages(f, z) {
                    Ok(p) if !p.is_empty() => p,
                    _ => {
                        z = seed_point;
                        continue;
                    }
                };
                z = pre[rng.gen_range(0..pre.len())].0;
                if step >= BURN_IN {
                    if let Some(i) = grid.cell_of(z) {
                        mask.set(i, true);
                    }
                }
            }
            mask
        })
        .collect();
    let mut mask = bitvec![0; grid.len()];
    for m in masks {
        mask |= m;
    }
    Ok(CellSet { grid, mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalSetApprox {
    pub k: CellSet,
    pub k_prime: CellSet,
    pub w: CellSet,
    pub horizon: usize,
    pub k_empty: bool,
    pub k_prime_empty: bool,
}

/// Cells searched around an image point when snapping back onto the J-cells.
pub const SNAP_RADIUS: isize = 2;

/// Center of the J-cell nearest to `z` within `SNAP_RADIUS` cells of the cell containing `z`.
pub fn snap_to_julia(j: &CellSet, z: Cplx) -> Option<Cplx> {
    let grid = j.grid();
    let (ix, iy) = grid.coords(grid.cell_of(z)?);
    let n = grid.resolution as isize;
    let mut best: Option<(f64, Cplx)> = None;
    for dy in -SNAP_RADIUS..=SNAP_RADIUS {
        for dx in -SNAP_RADIUS..=SNAP_RADIUS {
            let (x, y) = (ix as isize + dx, iy as isize + dy);
            if x < 0 || y < 0 || x >= n || y >= n {
                continue;
            }
            let k = grid.index(x as usize, y as usize);
            if j.contains(k) {
                let c = grid.center(k);
                let d = (c - z).norm();
                if best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, c));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

/// One step of the cell dynamics: the image of `z`, snapped back onto the J-cells.
///
/// Orbits of cell centers drift off the Julia set at the expansion rate, so each image is
/// replaced by the nearest J-cell center.
pub fn shadow_step(f: &RationalMap, j: &CellSet, z: Cplx) -> Option<Cplx> {
    snap_to_julia(j, f.eval_plane(z)?.0)
}

/// The J-cell of `y` lies in `W` and its first `horizon` shadowed images land in `W`.
fn stays(f: &RationalMap, j: &CellSet, w: &CellSet, y: Cplx, horizon: usize) -> bool {
    let grid = j.grid();
    let Some(i) = grid.cell_of(y) else { return false };
    if !(j.contains(i) && w.contains(i)) {
        return false;
    }
    let mut z = grid.center(i);
    for _ in 0..horizon {
        match shadow_step(f, j, z) {
            Some(fz) if w.contains_point(fz) => z = fz,
            _ => return false,
        }
    }
    true
}

/// Grid approximation of `K(W)` and `K' = f⁻¹(K) ∖ K`.
///
/// Membership is decided on cell centers with shadowed orbits: a J-cell belongs to `K'` when it
/// fails the `K` test but the shadowed image of its center passes it.
pub fn fundamental_set(f: &RationalMap, j_cells: &CellSet, w: &CellSet, horizon: usize) -> FundamentalSetApprox {
    let grid = *j_cells.grid();
    let outside: Vec<Cplx> = f
        .postcritical_cloud(200, 1e-9)
        .all_finite()
        .filter(|&p| !w.contains_point(p))
        .collect();
    if !outside.is_empty() {
        log::warn!("{} postcritical points lie outside W", outside.len());
    }
    let k = CellSet::from_fn(grid, |i| j_cells.contains(i) && stays(f, j_cells, w, grid.center(i), horizon));
    let k_prime = CellSet::from_fn(grid, |i| {
        if !j_cells.contains(i) || k.contains(i) {
            return false;
        }
        let c = grid.center(i);
        !stays(f, j_cells, w, c, horizon)
            && shadow_step(f, j_cells, c).is_some_and(|fc| stays(f, j_cells, w, fc, horizon))
    });
    FundamentalSetApprox {
        k_empty: k.is_empty(),
        k_prime_empty: k_prime.is_empty(),
        k,
        k_prime,
        w: w.clone(),
        horizon,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullbackPartition {
    /// Layer `i`: J-cells outside `K` whose shadowed center orbit first enters `K'` after `i` steps.
    pub layers: Vec<CellSet>,
    pub coverage_fraction: f64,
    pub disjoint: bool,
}

/// First-entry decomposition of the J-cells into pullbacks of `K'`.
pub fn pullback_partition(
    f: &RationalMap,
    j_cells: &CellSet,
    fs: &FundamentalSetApprox,
    depth: usize,
) -> PullbackPartition {
    let grid = *j_cells.grid();
    let entry: Vec<Option<usize>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !j_cells.contains(i) || fs.k.contains(i) {
                return None;
            }
            if fs.k_prime.contains(i) {
                return Some(0);
            }
            let mut z = grid.center(i);
            for step in 1..=depth {
                z = shadow_step(f, j_cells, z)?;
                if fs.k_prime.contains_point(z) {
                    return Some(step);
                }
            }
            None
        })
        .collect();
    let mut layers = vec![CellSet::empty(grid); depth + 1];
    for (i, e) in entry.iter().enumerate() {
        if let Some(step) = e {
            layers[*step].insert(i);
        }
    }
    let mut disjoint = true;
    let mut covered = fs.k.clone();
    for l in &layers {
        disjoint &= l.is_disjoint(&covered);
        covered = covered.union(l);
    }
    let total = j_cells.count();
    let coverage_fraction = if total == 0 {
        0.0
    } else {
        covered.intersection(j_cells).count() as f64 / total as f64
    };
    PullbackPartition { layers, coverage_fraction, disjoint }
}

#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Cells(&'a CellSet),
    Box(Cplx, Cplx),
    Disk(Cplx, f64),
}

impl Region<'_> {
    pub fn contains(&self, p: Cplx) -> bool {
        match self {
            Region::Cells(s) => s.contains_point(p),
            Region::Box(lo, hi) => p.re >= lo.re && p.re < hi.re && p.im >= lo.im && p.im < hi.im,
            Region::Disk(c, r) => (p - c).norm() < *r,
        }
    }

    fn diameter(&self) -> f64 {
        match self {
            Region::Cells(s) => (s.grid().hi - s.grid().lo).norm(),
            Region::Box(lo, hi) => (hi - lo).norm(),
            Region::Disk(_, r) => 2.0 * r,
        }
    }

    fn area(&self) -> f64 {
        match self {
            Region::Cells(s) => s.area(),
            Region::Box(lo, hi) => (hi.re - lo.re) * (hi.im - lo.im),
            Region::Disk(_, r) => std::f64::consts::PI * r * r,
        }
    }

    /// Uniform point of the region.
    fn sample<R: Rng>(&self, rng: &mut R, cells: &[usize]) -> Cplx {
        match self {
            Region::Cells(s) => {
                let g = s.grid();
                let i = cells[rng.gen_range(0..cells.len())];
                let (ix, iy) = g.coords(i);
                g.vertex(ix, iy) + Cplx::new(rng.gen::<f64>() * g.dx(), rng.gen::<f64>() * g.dy())
            }
            Region::Box(lo, hi) => Cplx::new(rng.gen_range(lo.re..hi.re), rng.gen_range(lo.im..hi.im)),
            Region::Disk(c, r) => c + Cplx::from_polar(r * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..std::f64::consts::TAU)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    CellMidpoint,
    MonteCarlo { n: usize, seed: u64 },
    /// Monte Carlo with polar sampling on small disks around the declared poles.
    PolarRefined { n: usize, seed: u64 },
}

/// `∫_region g dA`.
pub fn integrate<G>(g: G, region: Region<'_>, scheme: Scheme, poles: &[Cplx]) -> Result<Estimate>
where
    G: Fn(Cplx) -> Cplx + Sync,
{
    let zero = Estimate::exact(Cplx::new(0.0, 0.0));
    match scheme {
        Scheme::CellMidpoint => {
            let Region::Cells(s) = region else {
                return Err(Error::InvalidInput("cell midpoint rule needs a cell region".into()));
            };
            if let Some(&pole) = poles.iter().find(|&&p| s.contains_point(p)) {
                return Err(Error::PoleInRegion { pole });
            }
            let area = s.grid().cell_area();
            let idx = s.indices();
            let sum: Cplx = idx.par_iter().map(|&i| g(s.grid().center(i))).sum();
            Ok(Estimate::exact(sum * area))
        }
        Scheme::MonteCarlo { n, seed } => Ok(mc_region(&g, region, n, seed, &[])),
        Scheme::PolarRefined { n, seed } => {
            if poles.is_empty() {
                return Ok(mc_region(&g, region, n, seed, &[]));
            }
            let scale = 0.05 * region.diameter();
            let disks: Vec<(Cplx, f64)> = poles
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let sep = poles
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .map(|(_, &q)| 0.5 * (p - q).norm())
                        .fold(scale, f64::min);
                    (p, sep.max(1e-12))
                })
                .collect();
            let mut est = mc_region(&g, region, n / 2, seed, &disks);
            let per = (n / 2) / disks.len();
            for (k, &(p, rho)) in disks.iter().enumerate() {
                let part = mc_polar_disk(p, rho, per.max(1), seed.wrapping_add(1 + k as u64) ^ 0xd15c, |x| {
                    if region.contains(x) { g(x) } else { Cplx::new(0.0, 0.0) }
                });
                est = est.add(part);
            }
            Ok(if est.value.is_finite() { est } else { zero })
        }
    }
}

/// Uniform Monte Carlo over `region` minus the excluded disks.
fn mc_region<G>(g: &G, region: Region<'_>, n: usize, seed: u64, excluded: &[(Cplx, f64)]) -> Estimate
where
    G: Fn(Cplx) -> Cplx + Sync,
{
    let cells = match region {
        Region::Cells(s) => s.indices(),
        _ => Vec::new(),
    };
    if matches!(region, Region::Cells(_)) && cells.is_empty() {
        return Estimate::exact(Cplx::new(0.0, 0.0));
    }
    let area = region.area();
    mc_estimate(n, seed, |rng| {
        let x = region.sample(rng, &cells);
        if excluded.iter().any(|&(p, r)| (x - p).norm() < r) {
            Cplx::new(0.0, 0.0)
        } else {
            g(x) * area
        }
    })
}
