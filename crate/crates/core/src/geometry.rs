//! Macroscopic domains and their lattice discretizations.
//!
//! A macroscopic domain is a slab `{x : n . x in (a, b)}` or a slab whose
//! wall is locally pushed outward (a recess in the `a`-side wall or a bulge
//! past the `b`-side wall), so that the inner slab is contained in the domain
//! and the domain in an outer slab. Transverse directions are periodic with
//! macroscopic width `W`, standing in for the infinite transverse extent.
//!
//! The lattice domain at scale `N` keeps the sites `{x : x / N in domain}`,
//! a reservoir shell of every outside cell within the interaction range of a
//! site, and a reservoir density field on the shell. Shell cells are
//! classified into boundary components by connectivity; a component belongs
//! to the `a` side when its mean slab coordinate sits below the slab center,
//! which reproduces the two-sided reservoir data on slabs and extends it to
//! perturbed walls.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{Site, Vecf, MAX_D};
use crate::{Error, Result};

/// Slab `{x in R^d : n . x in (a, b)}`.
#[derive(Clone, Debug)]
pub struct SlabDomain {
    d: usize,
    normal: Vecf,
    a: f64,
    b: f64,
}

impl SlabDomain {
    /// Builds a slab; the normal is renormalized to unit length and must not
    /// use axes beyond `d`.
    pub fn new(d: usize, normal: Vecf, a: f64, b: f64) -> Result<Self> {
        if d == 0 || d > MAX_D {
            return Err(Error::BadDomain(format!("dimension {d} out of 1..={MAX_D}")));
        }
        for ax in d..MAX_D {
            if normal[ax] != 0.0 {
                return Err(Error::BadDomain(format!(
                    "normal uses axis {ax} beyond dimension {d}"
                )));
            }
        }
        let norm = libm::sqrt(normal.iter().map(|c| c * c).sum::<f64>());
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::BadDomain("zero normal".into()));
        }
        if !(a < b) {
            return Err(Error::BadDomain(format!("slab bounds {a} >= {b}")));
        }
        let mut n = normal;
        for c in &mut n {
            *c /= norm;
        }
        Ok(Self { d, normal: n, a, b })
    }

    /// Axis-aligned slab along `+e_axis`.
    pub fn axis_aligned(d: usize, axis: usize, a: f64, b: f64) -> Result<Self> {
        if axis >= d {
            return Err(Error::BadDomain(format!("axis {axis} beyond dimension {d}")));
        }
        let mut n = [0.0; MAX_D];
        n[axis] = 1.0;
        Self::new(d, n, a, b)
    }

    /// Active dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Unit normal.
    pub fn normal(&self) -> Vecf {
        self.normal
    }

    /// Lower slab bound.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Upper slab bound.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Slab coordinate `n . x` of a macroscopic point.
    pub fn coordinate(&self, x: Vecf) -> f64 {
        (0..self.d).map(|i| self.normal[i] * x[i]).sum()
    }

    /// The axis when the normal is `+e_axis` (what lattice discretization
    /// supports).
    pub fn aligned_axis(&self) -> Option<usize> {
        let mut axis = None;
        for i in 0..self.d {
            if self.normal[i] != 0.0 {
                if axis.is_some() {
                    return None;
                }
                axis = Some(i);
            }
        }
        axis.filter(|&i| self.normal[i] > 0.0)
    }
}

/// Side of the boundary data a shell component carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Lower slab coordinate; carries `lambda_a`.
    A,
    /// Upper slab coordinate; carries `lambda_b`.
    B,
}

/// Region of a site relative to the inner slab.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Sites of the outward extension with slab coordinate `<= a`.
    CollarA,
    /// Strictly inside the inner slab.
    Inner,
    /// Sites of the outward extension with slab coordinate `>= b`.
    CollarB,
}

/// Which wall is pushed outward, within a transverse window.
#[derive(Clone, Copy, Debug)]
pub enum Perturbation {
    /// Recess in the `a`-side wall: the domain extends down to `a_outer`
    /// for transverse coordinate in `[t_lo, t_hi)`.
    NotchA {
        /// Window start in the first transverse coordinate, in `[0, W)`.
        t_lo: f64,
        /// Window end.
        t_hi: f64,
    },
    /// Bulge past the `b`-side wall on `[t_lo, t_hi)`, up to `b_outer`.
    BumpB {
        /// Window start.
        t_lo: f64,
        /// Window end.
        t_hi: f64,
    },
}

/// Slab with one perturbed wall: inner slab `(a, b)`, outer bounds
/// `a_outer <= a <= b <= b_outer`, extension region given by the
/// perturbation kind.
#[derive(Clone, Debug)]
pub struct PerturbedDomain {
    inner: SlabDomain,
    a_outer: f64,
    b_outer: f64,
    kind: Perturbation,
}

impl PerturbedDomain {
    /// Builds a perturbed slab; requires `d >= 2` (the window lives in the
    /// first transverse coordinate) and a nonempty window with
    /// `0 <= t_lo < t_hi`.
    pub fn new(inner: SlabDomain, a_outer: f64, b_outer: f64, kind: Perturbation) -> Result<Self> {
        if inner.d() < 2 {
            return Err(Error::BadDomain("perturbed walls need d >= 2".into()));
        }
        if !(a_outer <= inner.a() && b_outer >= inner.b()) {
            return Err(Error::BadDomain(format!(
                "outer bounds ({a_outer}, {b_outer}) do not contain ({}, {})",
                inner.a(),
                inner.b()
            )));
        }
        let (t_lo, t_hi) = match kind {
            Perturbation::NotchA { t_lo, t_hi } | Perturbation::BumpB { t_lo, t_hi } => {
                (t_lo, t_hi)
            }
        };
        if !(0.0 <= t_lo && t_lo < t_hi) {
            return Err(Error::BadDomain(format!("bad window [{t_lo}, {t_hi})")));
        }
        match kind {
            Perturbation::NotchA { .. } if !(a_outer < inner.a()) => {
                return Err(Error::BadDomain("notch needs a_outer < a".into()));
            }
            Perturbation::BumpB { .. } if !(b_outer > inner.b()) => {
                return Err(Error::BadDomain("bump needs b_outer > b".into()));
            }
            _ => {}
        }
        Ok(Self { inner, a_outer, b_outer, kind })
    }

    /// Inner slab.
    pub fn inner(&self) -> &SlabDomain {
        &self.inner
    }

    /// Outer lower bound.
    pub fn a_outer(&self) -> f64 {
        self.a_outer
    }

    /// Outer upper bound.
    pub fn b_outer(&self) -> f64 {
        self.b_outer
    }

    /// Perturbation kind.
    pub fn kind(&self) -> Perturbation {
        self.kind
    }
}

/// A macroscopic domain the lattice layer can discretize.
#[derive(Clone, Debug)]
pub enum DomainShape {
    /// Plain slab.
    Slab(SlabDomain),
    /// Slab with one perturbed wall.
    Perturbed(PerturbedDomain),
}

impl DomainShape {
    /// The inner slab (the whole domain for `Slab`).
    pub fn inner(&self) -> &SlabDomain {
        match self {
            DomainShape::Slab(s) => s,
            DomainShape::Perturbed(p) => p.inner(),
        }
    }

    /// Outer slab bounds (equal to the inner bounds for `Slab`).
    pub fn outer_bounds(&self) -> (f64, f64) {
        match self {
            DomainShape::Slab(s) => (s.a(), s.b()),
            DomainShape::Perturbed(p) => (p.a_outer(), p.b_outer()),
        }
    }

    /// Membership in slab coordinates: `s` along the normal, `t` the first
    /// transverse coordinate already wrapped into `[0, W)` (ignored for
    /// slabs and for `d = 1`).
    pub fn contains(&self, s: f64, t: f64) -> bool {
        let (a, b) = (self.inner().a(), self.inner().b());
        if a < s && s < b {
            return true;
        }
        match self {
            DomainShape::Slab(_) => false,
            DomainShape::Perturbed(p) => match p.kind() {
                Perturbation::NotchA { t_lo, t_hi } => {
                    p.a_outer() < s && s <= a && t_lo <= t && t < t_hi
                }
                Perturbation::BumpB { t_lo, t_hi } => {
                    b <= s && s < p.b_outer() && t_lo <= t && t < t_hi
                }
            },
        }
    }
}

/// Classification of a lattice cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    /// Domain site, with its dense index.
    Interior(u32),
    /// Reservoir shell cell, with its shell index.
    Shell(u32),
    /// Neither.
    Outside,
}

/// Lattice discretization of a domain at scale `N` with periodic transverse
/// wrapping, plus the reservoir shell and its density field.
#[derive(Clone, Debug)]
pub struct LatticeDomain {
    shape: DomainShape,
    d: usize,
    axis: usize,
    n_scale: u32,
    range: i64,
    width: f64,
    box_lo: i64,
    box_hi: i64,
    trans_extent: i64,
    cells: Vec<CellKind>,
    sites: Vec<Site>,
    shell: Vec<Site>,
    lambda: Vec<f64>,
    shell_side: Vec<Side>,
}

impl LatticeDomain {
    /// Discretizes `shape` at scale `N >= 2` with interaction range
    /// `range >= 1` and transverse width `width` (per transverse axis;
    /// ignored in d = 1).
    ///
    /// Sites are the cells whose rescaled coordinates lie in the domain; the
    /// shell is every other cell within `range` (sup-distance, transverse
    /// wrap) of a site. Shell components are classified into sides by their
    /// mean slab coordinate. Reservoir densities start at zero.
    pub fn discretize(shape: DomainShape, n_scale: u32, width: f64, range: i64) -> Result<Self> {
        if n_scale < 2 {
            return Err(Error::BadDomain(format!("scale N = {n_scale} < 2")));
        }
        if range < 1 {
            return Err(Error::BadDomain(format!("interaction range {range} < 1")));
        }
        let d = shape.inner().d();
        let axis = shape
            .inner()
            .aligned_axis()
            .ok_or_else(|| Error::BadDomain("lattice needs an axis-aligned +e normal".into()))?;
        let n = n_scale as f64;
        let trans_extent = if d == 1 {
            1i64
        } else {
            if !(width > 0.0) {
                return Err(Error::BadDomain(format!("transverse width {width}")));
            }
            let ext = libm::round(width * n) as i64;
            if ext < 2 * range + 1 {
                return Err(Error::BadDomain(format!(
                    "transverse extent {ext} below periodicity floor {}",
                    2 * range + 1
                )));
            }
            ext
        };
        let (a_out, b_out) = shape.outer_bounds();
        let s_min = libm::floor(a_out * n) as i64 + 1;
        let s_max = libm::ceil(b_out * n) as i64 - 1;
        if s_min > s_max {
            return Err(Error::EmptyDomain);
        }
        let box_lo = s_min - range;
        let box_hi = s_max + range;
        let axis_span = (box_hi - box_lo + 1) as usize;
        let tcount = trans_extent as usize;
        let mut len = axis_span;
        for _ in 0..d.saturating_sub(1) {
            len = len
                .checked_mul(tcount)
                .ok_or_else(|| Error::BadDomain("lattice too large".into()))?;
        }

        let trans_axes: Vec<usize> = (0..d).filter(|&ax| ax != axis).collect();
        // Decode a dense cell index back into a canonical site.
        let decode = |mut idx: usize| -> Site {
            let mut x = [0i64; MAX_D];
            for &ax in trans_axes.iter().rev() {
                x[ax] = (idx % tcount) as i64;
                idx /= tcount;
            }
            x[axis] = box_lo + idx as i64;
            x
        };

        let mut cells = vec![CellKind::Outside; len];
        let mut sites = Vec::new();
        for idx in 0..len {
            let x = decode(idx);
            let s = x[axis] as f64 / n;
            let t = if d >= 2 { x[trans_axes[0]] as f64 / n } else { 0.0 };
            if shape.contains(s, t) {
                cells[idx] = CellKind::Interior(sites.len() as u32);
                sites.push(x);
            }
        }
        if sites.is_empty() {
            return Err(Error::EmptyDomain);
        }

        // Shell pass: outside cells with a site in their range-ball.
        let encode = |x: Site| -> Option<usize> {
            let s = x[axis];
            if s < box_lo || s > box_hi {
                return None;
            }
            let mut idx = (s - box_lo) as usize;
            for &ax in &trans_axes {
                idx = idx * tcount + x[ax].rem_euclid(trans_extent) as usize;
            }
            Some(idx)
        };
        let mut shell = Vec::new();
        let mut offsets = vec![[0i64; MAX_D]];
        for &ax in core::iter::once(&axis).chain(&trans_axes) {
            let mut next = Vec::with_capacity(offsets.len() * (2 * range as usize + 1));
            for off in &offsets {
                for delta in -range..=range {
                    let mut o = *off;
                    o[ax] = delta;
                    next.push(o);
                }
            }
            offsets = next;
        }
        for idx in 0..len {
            if cells[idx] != CellKind::Outside {
                continue;
            }
            let x = decode(idx);
            let near_site = offsets.iter().any(|off| {
                let y = crate::model::site_add(x, *off);
                matches!(encode(y).map(|k| cells[k]), Some(CellKind::Interior(_)))
            });
            if near_site {
                cells[idx] = CellKind::Shell(shell.len() as u32);
                shell.push(x);
            }
        }

        // Component classification: breadth-first search over shell cells
        // with sup-distance-1 adjacency, transverse wrap.
        let mut adj = vec![[0i64; MAX_D]];
        for &ax in core::iter::once(&axis).chain(&trans_axes) {
            let mut next = Vec::with_capacity(adj.len() * 3);
            for off in &adj {
                for delta in -1i64..=1 {
                    let mut o = *off;
                    o[ax] = delta;
                    next.push(o);
                }
            }
            adj = next;
        }
        let mid = 0.5 * (shape.inner().a() + shape.inner().b());
        let mut shell_side = vec![Side::A; shell.len()];
        let mut seen = vec![false; shell.len()];
        for start in 0..shell.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start as u32];
            seen[start] = true;
            let mut head = 0;
            while head < comp.len() {
                let x = shell[comp[head] as usize];
                head += 1;
                for off in &adj {
                    let y = crate::model::site_add(x, *off);
                    if let Some(CellKind::Shell(j)) = encode(y).map(|k| cells[k]) {
                        if !seen[j as usize] {
                            seen[j as usize] = true;
                            comp.push(j);
                        }
                    }
                }
            }
            let mean: f64 = comp.iter().map(|&j| shell[j as usize][axis] as f64).sum::<f64>()
                / comp.len() as f64;
            let side = if mean / n <= mid { Side::A } else { Side::B };
            for &j in &comp {
                shell_side[j as usize] = side;
            }
        }

        let lambda = vec![0.0; shell.len()];
        Ok(Self {
            shape,
            d,
            axis,
            n_scale,
            range,
            width: if d == 1 { 0.0 } else { trans_extent as f64 / n },
            box_lo,
            box_hi,
            trans_extent,
            cells,
            sites,
            shell,
            lambda,
            shell_side,
        })
    }

    /// The macroscopic shape this lattice discretizes.
    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    /// Active dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Slab axis.
    pub fn axis(&self) -> usize {
        self.axis
    }

    /// Scaling parameter `N`.
    pub fn n_scale(&self) -> u32 {
        self.n_scale
    }

    /// Interaction range the shell was built for.
    pub fn range(&self) -> i64 {
        self.range
    }

    /// Realized transverse width (0 in d = 1).
    pub fn width(&self) -> f64 {
        self.width
    }

    /// Sites per transverse axis.
    pub fn trans_extent(&self) -> i64 {
        self.trans_extent
    }

    /// Domain sites in scan order.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// Shell cells in scan order.
    pub fn shell(&self) -> &[Site] {
        &self.shell
    }

    /// Site coordinates for a dense index.
    pub fn site(&self, idx: u32) -> Site {
        self.sites[idx as usize]
    }

    /// Cell classification (transverse coordinates wrap).
    pub fn cell(&self, x: Site) -> CellKind {
        let s = x[self.axis];
        if s < self.box_lo || s > self.box_hi {
            return CellKind::Outside;
        }
        let mut idx = (s - self.box_lo) as usize;
        for ax in 0..self.d {
            if ax != self.axis {
                idx = idx * self.trans_extent as usize
                    + x[ax].rem_euclid(self.trans_extent) as usize;
            }
        }
        self.cells[idx]
    }

    /// Dense site index of a cell, if it is a site.
    pub fn site_index(&self, x: Site) -> Option<u32> {
        match self.cell(x) {
            CellKind::Interior(i) => Some(i),
            _ => None,
        }
    }

    /// Reservoir density at a shell index.
    pub fn lambda(&self, shell_idx: u32) -> f64 {
        self.lambda[shell_idx as usize]
    }

    /// Reservoir density at a cell, if it is a shell cell.
    pub fn lambda_at(&self, x: Site) -> Option<f64> {
        match self.cell(x) {
            CellKind::Shell(i) => Some(self.lambda[i as usize]),
            _ => None,
        }
    }

    /// Boundary side of a shell index.
    pub fn shell_side(&self, shell_idx: u32) -> Side {
        self.shell_side[shell_idx as usize]
    }

    /// Rescaled coordinates `x / N` of a cell.
    pub fn macro_point(&self, x: Site) -> Vecf {
        let n = self.n_scale as f64;
        let mut p = [0.0; MAX_D];
        for ax in 0..self.d {
            let c = if ax == self.axis { x[ax] } else { x[ax].rem_euclid(self.trans_extent) };
            p[ax] = c as f64 / n;
        }
        p
    }

    /// Region of a site relative to the inner slab.
    pub fn region(&self, x: Site) -> Region {
        let s = x[self.axis] as f64 / self.n_scale as f64;
        if s <= self.shape.inner().a() {
            Region::CollarA
        } else if s >= self.shape.inner().b() {
            Region::CollarB
        } else {
            Region::Inner
        }
    }

    /// Sets the reservoir field from a profile on rescaled coordinates;
    /// values must land in `[0, k_max]`.
    pub fn set_reservoir_profile(
        &mut self,
        k_max: f64,
        f: impl Fn(Vecf) -> f64,
    ) -> Result<()> {
        for i in 0..self.shell.len() {
            let v = f(self.macro_point(self.shell[i]));
            if !(0.0 <= v && v <= k_max) {
                return Err(Error::ReservoirOutOfRange { value: v });
            }
            self.lambda[i] = v;
        }
        Ok(())
    }

    /// Sets the two-sided boundary data: `lambda_a` on `a`-side components,
    /// `lambda_b` on `b`-side components.
    pub fn set_reservoirs(&mut self, k_max: f64, lambda_a: f64, lambda_b: f64) -> Result<()> {
        for &v in &[lambda_a, lambda_b] {
            if !(0.0 <= v && v <= k_max) {
                return Err(Error::ReservoirOutOfRange { value: v });
            }
        }
        for i in 0..self.shell.len() {
            self.lambda[i] = match self.shell_side[i] {
                Side::A => lambda_a,
                Side::B => lambda_b,
            };
        }
        Ok(())
    }
}
