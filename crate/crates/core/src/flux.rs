//! Macroscopic flux functions: closed forms from models, sampled tables,
//! Godunov numerical fluxes, and extremizer sets.
//!
//! The hydrodynamic flux of a misanthrope model is `h(rho) = gamma *
//! E[b(n, m)]` with independent equilibrium occupancies `n, m` at density
//! `rho` and `gamma` the kernel drift; for overtaking it is componentwise
//! `rho (1 - rho) sum_j j (beta_j^{+e} - beta_j^{-e}) rho^{j-1}`. Projecting
//! on a slab normal gives the scalar flux `f = h . n` driving the boundary
//! problem.
//!
//! Scalar fluxes live in a uniformly sampled [`FluxTable`] (linear
//! interpolation between nodes, parabolic refinement at interior extrema).
//! The Godunov flux is the extreme value of `f` between its arguments:
//! `min_[u, v] f` when `u <= v`, `max_[v, u] f` otherwise; extremizer
//! queries additionally report where extrema sit, with near-ties collected
//! into intervals, which is exactly what the hydrostatic classifier needs.

use alloc::vec::Vec;

use crate::marginal::marginal_for_density;
use crate::model::{ModelSpec, Vecf, MAX_D};
use crate::{Error, Result};

/// Default sampling step of flux tables.
pub const DEFAULT_DRHO: f64 = 1e-3;
/// Absolute tolerance for extremizer ties.
pub const EPS_TIE: f64 = 1e-6;

/// Vector flux `h(rho)` of a model at equilibrium density `rho`.
///
/// Misanthrope models evaluate the equilibrium mean of `b` over independent
/// site pairs (series truncation handled by the marginal layer); overtaking
/// models use the closed polynomial form.
pub fn model_flux(spec: &ModelSpec, rho: f64) -> Result<Vecf> {
    let mut out = [0.0; MAX_D];
    match spec {
        ModelSpec::Misanthrope { kernel, rates } => {
            let theta = marginal_for_density(rho, spec)?;
            let probs = theta.probs();
            let mut mean_b = 0.0;
            for (n, &pn) in probs.iter().enumerate() {
                if pn == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for (m, &pm) in probs.iter().enumerate() {
                    row += pm * rates.b(n as u32, m as u32);
                }
                mean_b += pn * row;
            }
            let gamma = kernel.drift();
            for ax in 0..kernel.d() {
                out[ax] = gamma[ax] * mean_b;
            }
        }
        ModelSpec::Overtaking(rates) => {
            if !(0.0 <= rho && rho <= 1.0) {
                return Err(Error::DensityOutOfRange { rho });
            }
            for axis in 0..rates.d() {
                let mut s = 0.0;
                let mut pow = 1.0;
                for j in 1..=rates.max_j() {
                    s += j as f64 * rates.signed_beta(axis, j) * pow;
                    pow *= rho;
                }
                out[axis] = rho * (1.0 - rho) * s;
            }
        }
    }
    Ok(out)
}

/// Scalar flux along a unit normal.
pub fn scalar_model_flux(spec: &ModelSpec, normal: Vecf, rho: f64) -> Result<f64> {
    let h = model_flux(spec, rho)?;
    Ok((0..spec.d()).map(|i| h[i] * normal[i]).sum())
}

/// Sparse table for O(1) range-extremum queries over the node values.
#[derive(Clone, Debug)]
struct Rmq {
    levels: Vec<Vec<u32>>,
    maximize: bool,
}

impl Rmq {
    fn build(values: &[f64], maximize: bool) -> Self {
        let n = values.len();
        let mut levels: Vec<Vec<u32>> = Vec::new();
        levels.push((0..n as u32).collect());
        let mut span = 1usize;
        let better = |a: u32, b: u32| -> u32 {
            let (va, vb) = (values[a as usize], values[b as usize]);
            if (maximize && vb > va) || (!maximize && vb < va) {
                b
            } else {
                a
            }
        };
        while 2 * span <= n {
            let prev = levels.last().unwrap();
            let mut next = Vec::with_capacity(n - 2 * span + 1);
            for i in 0..=(n - 2 * span) {
                next.push(better(prev[i], prev[i + span]));
            }
            levels.push(next);
            span *= 2;
        }
        Self { levels, maximize }
    }

    /// Argbest over the inclusive index range.
    fn query(&self, values: &[f64], lo: usize, hi: usize) -> u32 {
        debug_assert!(lo <= hi);
        let len = hi - lo + 1;
        let k = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let a = self.levels[k][lo];
        let b = self.levels[k][hi + 1 - (1 << k)];
        let (va, vb) = (values[a as usize], values[b as usize]);
        if (self.maximize && vb > va) || (!self.maximize && vb < va) {
            b
        } else {
            a
        }
    }
}

/// Where a constrained extremum of the flux is attained: best value plus the
/// near-tie positions merged into closed intervals.
#[derive(Clone, Debug)]
pub struct ExtremizerSet {
    /// Extreme value.
    pub value: f64,
    /// Position of the best candidate.
    pub argbest: f64,
    /// Tie intervals (singletons have equal endpoints), ascending.
    pub intervals: Vec<(f64, f64)>,
    /// Extent of the flux's flat stretch through `argbest`, clamped to the
    /// query interval: positive means the extremum sits on a plateau.
    pub flat_span: f64,
    /// Width below which the flat stretch still counts as a point.
    point_width: f64,
}

impl ExtremizerSet {
    /// Whether the extremizer is a single point (up to grid resolution):
    /// one tie cluster, not a plateau. Shallow strict extrema produce wide
    /// tie clusters but no flat stretch, so flatness is what distinguishes a
    /// plateau from a point.
    pub fn is_unique(&self) -> bool {
        self.intervals.len() == 1 && self.flat_span <= self.point_width
    }

    /// Whether `v` lies in the extremizer set within `tol`.
    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo - tol <= v && v <= hi + tol)
    }
}

/// Uniformly sampled scalar flux on `[0, k_max]`.
#[derive(Clone, Debug)]
pub struct FluxTable {
    k_max: f64,
    drho: f64,
    values: Vec<f64>,
    lipschitz: f64,
    eps_flat: f64,
    rmq_min: Rmq,
    rmq_max: Rmq,
}

impl FluxTable {
    /// Builds a table from precomputed node values `f(i * drho)`,
    /// `i = 0..=n` with `n * drho = k_max`.
    pub fn from_values(k_max: f64, values: Vec<f64>) -> Result<Self> {
        if !(k_max > 0.0) || !k_max.is_finite() {
            return Err(Error::BadDomain(alloc::format!("flux range {k_max}")));
        }
        if values.len() < 3 {
            return Err(Error::BadDomain("flux table needs >= 3 nodes".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadDomain("non-finite flux value".into()));
        }
        let n = values.len() - 1;
        let drho = k_max / n as f64;
        let mut steep = 0.0f64;
        let mut amp = 0.0f64;
        for i in 0..n {
            steep = steep.max((values[i + 1] - values[i]).abs() / drho);
        }
        for &v in &values {
            amp = amp.max(v.abs());
        }
        // A vanishing flux still needs a positive time step and a usable
        // flatness scale.
        let lipschitz = (1.1 * steep).max(1e-12);
        let eps_flat = (1e-9 * amp).max(1e-300);
        let rmq_min = Rmq::build(&values, false);
        let rmq_max = Rmq::build(&values, true);
        Ok(Self { k_max, drho, values, lipschitz, eps_flat, rmq_min, rmq_max })
    }

    /// Samples `f` on `[0, k_max]` with step `drho`.
    pub fn from_fn(k_max: f64, drho: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(drho > 0.0 && drho < k_max) {
            return Err(Error::BadDomain(alloc::format!("flux step {drho}")));
        }
        let n = libm::round(k_max / drho) as usize;
        let values = (0..=n).map(|i| f(i as f64 * k_max / n as f64)).collect();
        Self::from_values(k_max, values)
    }

    /// Samples the model's scalar flux along `normal`. Bounded models use
    /// `[0, K]`; unbounded models need an explicit `rho_max`.
    pub fn from_model(spec: &ModelSpec, normal: Vecf, rho_max: Option<f64>) -> Result<Self> {
        let k_max = match rho_max {
            Some(r) => r,
            None => {
                let k = spec.k_max();
                if !k.is_finite() {
                    return Err(Error::DensityOutOfRange { rho: k });
                }
                k
            }
        };
        let n = libm::round(k_max / DEFAULT_DRHO) as usize;
        let mut values = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let rho = i as f64 * k_max / n as f64;
            values.push(scalar_model_flux(spec, normal, rho)?);
        }
        Self::from_values(k_max, values)
    }

    /// Upper density bound.
    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// Node spacing.
    pub fn drho(&self) -> f64 {
        self.drho
    }

    /// Node values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Inflated Lipschitz bound `M = 1.1 * max |difference quotient|`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Flatness tolerance `1e-9 * sup |f|`.
    pub fn eps_flat(&self) -> f64 {
        self.eps_flat
    }

    /// Largest sampled `|f|`.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Interpolated `f(rho)`; `rho` is clamped to `[0, k_max]` (values off
    /// the range by more than 1e-9 are a caller bug).
    pub fn eval(&self, rho: f64) -> f64 {
        debug_assert!(
            rho > -1e-9 && rho < self.k_max + 1e-9,
            "density {rho} outside [0, {}]",
            self.k_max
        );
        let x = rho.clamp(0.0, self.k_max) / self.drho;
        let i = (x as usize).min(self.values.len() - 2);
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Parabolic vertex through nodes `i - 1, i, i + 1`, if it is an
    /// extremum of the right orientation inside the node triple.
    fn refine_vertex(&self, i: usize, maximize: bool) -> Option<(f64, f64)> {
        if i == 0 || i + 1 >= self.values.len() {
            return None;
        }
        let (ya, y0, yb) = (self.values[i - 1], self.values[i], self.values[i + 1]);
        let denom = ya - 2.0 * y0 + yb;
        if (maximize && denom >= 0.0) || (!maximize && denom <= 0.0) {
            return None;
        }
        let x0 = i as f64 * self.drho;
        let dx = 0.5 * self.drho * (ya - yb) / denom;
        if dx.abs() > self.drho {
            return None;
        }
        let y = y0 - 0.125 * (ya - yb) * (ya - yb) / denom;
        Some((x0 + dx, y))
    }

    /// Godunov flux `G(u, v)`: `min_[u, v] f` for `u <= v`, `max_[v, u] f`
    /// otherwise, taken over the piecewise-linear table exactly (its
    /// extrema sit at nodes or interval endpoints, so the value agrees with
    /// [`Self::eval`] and with [`Self::extremize`] to the last bit).
    pub fn godunov(&self, u: f64, v: f64) -> f64 {
        let maximize = u > v;
        let (lo, hi) = if maximize { (v, u) } else { (u, v) };
        let lo = lo.clamp(0.0, self.k_max);
        let hi = hi.clamp(0.0, self.k_max);
        let mut best = if maximize {
            self.eval(lo).max(self.eval(hi))
        } else {
            self.eval(lo).min(self.eval(hi))
        };
        let i_lo = libm::floor(lo / self.drho) as usize + 1;
        let i_hi = (libm::ceil(hi / self.drho) as isize - 1).min(self.values.len() as isize - 1);
        if i_lo as isize <= i_hi {
            let i_hi = i_hi as usize;
            let rmq = if maximize { &self.rmq_max } else { &self.rmq_min };
            let i = rmq.query(&self.values, i_lo, i_hi) as usize;
            let node = self.values[i];
            best = if maximize { best.max(node) } else { best.min(node) };
        }
        best
    }

    /// Constrained extremum over `[lo, hi]` with its near-tie set.
    ///
    /// The value is the exact piecewise-linear extremum (endpoints and
    /// interior nodes), so it always agrees with [`Self::godunov`]. When the
    /// winner is a strict interior extremum node, `argbest` is sharpened to
    /// the parabolic-vertex position through the node triple, a better
    /// estimate of the underlying smooth extremizer. Positions within
    /// [`EPS_TIE`] of the best value are merged into intervals when adjacent
    /// within 1.5 node spacings.
    pub fn extremize(&self, lo: f64, hi: f64, maximize: bool) -> ExtremizerSet {
        let lo = lo.clamp(0.0, self.k_max);
        let hi = hi.clamp(0.0, self.k_max);
        debug_assert!(lo <= hi);
        let mut cands: Vec<(f64, f64)> = Vec::new();
        cands.push((lo, self.eval(lo)));
        if hi > lo {
            cands.push((hi, self.eval(hi)));
        }
        let i_lo = libm::floor(lo / self.drho) as usize + 1;
        let i_hi = (libm::ceil(hi / self.drho) as isize - 1).min(self.values.len() as isize - 1);
        if i_lo as isize <= i_hi {
            for i in i_lo..=(i_hi as usize) {
                cands.push((i as f64 * self.drho, self.values[i]));
            }
        }
        let mut best = cands[0];
        for &c in &cands[1..] {
            if (maximize && c.1 > best.1) || (!maximize && c.1 < best.1) {
                best = c;
            }
        }
        let mut argbest = best.0;
        let i = libm::round(best.0 / self.drho) as usize;
        if i as f64 * self.drho == best.0 && i > 0 && i + 1 < self.values.len() {
            let strict = if maximize {
                self.values[i] > self.values[i - 1] && self.values[i] > self.values[i + 1]
            } else {
                self.values[i] < self.values[i - 1] && self.values[i] < self.values[i + 1]
            };
            if strict {
                if let Some((x, _)) = self.refine_vertex(i, maximize) {
                    if x >= lo && x <= hi {
                        argbest = x;
                    }
                }
            }
        }
        let mut ties: Vec<f64> = cands
            .iter()
            .filter(|c| (c.1 - best.1).abs() <= EPS_TIE)
            .map(|c| c.0)
            .collect();
        ties.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for &x in &ties {
            match intervals.last_mut() {
                Some(iv) if x - iv.1 <= 1.5 * self.drho => iv.1 = x,
                _ => intervals.push((x, x)),
            }
        }
        let flat_lo = self.flat_reach(best.0, true).max(lo);
        let flat_hi = self.flat_reach(best.0, false).min(hi);
        ExtremizerSet {
            value: best.1,
            argbest,
            intervals,
            flat_span: (flat_hi - flat_lo).max(0.0),
            point_width: 3.5 * self.drho,
        }
    }

    /// How far the flux stays flat from `start`: the farthest position
    /// (downward if `downward`, else upward) such that the sampled values
    /// between it and `start` all sit within `eps_flat` of each other.
    pub fn flat_reach(&self, start: f64, downward: bool) -> f64 {
        let start = start.clamp(0.0, self.k_max);
        let v0 = self.eval(start);
        let (mut band_lo, mut band_hi) = (v0, v0);
        let mut pos = start;
        if downward {
            let mut i = libm::floor(start / self.drho) as isize;
            // A node exactly at `start` still counts as reached.
            while i >= 0 {
                let v = self.values[i as usize];
                band_lo = band_lo.min(v);
                band_hi = band_hi.max(v);
                if band_hi - band_lo > self.eps_flat {
                    break;
                }
                pos = i as f64 * self.drho;
                i -= 1;
            }
        } else {
            let mut i = libm::ceil(start / self.drho) as usize;
            while i < self.values.len() {
                let v = self.values[i];
                band_lo = band_lo.min(v);
                band_hi = band_hi.max(v);
                if band_hi - band_lo > self.eps_flat {
                    break;
                }
                pos = i as f64 * self.drho;
                i += 1;
            }
        }
        pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JumpKernel;

    fn parabola() -> FluxTable {
        FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| r * (1.0 - r)).unwrap()
    }

    fn double_hump() -> FluxTable {
        FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| {
            r * (1.0 - r) * ((r - 0.5) * (r - 0.5) + 0.02)
        })
        .unwrap()
    }

    #[test]
    fn closed_form_fluxes() {
        let tasep = ModelSpec::tasep();
        for &r in &[0.0, 0.1, 0.5, 0.9] {
            let f = scalar_model_flux(&tasep, [1.0, 0.0, 0.0], r).unwrap();
            assert!((f - r * (1.0 - r)).abs() < 1e-9, "rho = {r}: {f}");
        }
        let k3 = ModelSpec::misanthrope_k3(JumpKernel::delta(1, [1, 0, 0]).unwrap());
        for &r in &[0.1, 1.5, 2.7] {
            let f = scalar_model_flux(&k3, [1.0, 0.0, 0.0], r).unwrap();
            assert!((f - r * (3.0 - r)).abs() < 1e-8, "rho = {r}: {f}");
        }
        let zr = ModelSpec::zero_range_unit(JumpKernel::delta(1, [1, 0, 0]).unwrap());
        for &r in &[0.1, 0.5, 2.0] {
            let f = scalar_model_flux(&zr, [1.0, 0.0, 0.0], r).unwrap();
            assert!((f - r / (1.0 + r)).abs() < 1e-9, "rho = {r}: {f}");
        }
        let ot = ModelSpec::overtaking_1d(&[2.0, 1.0], &[]).unwrap();
        for &r in &[0.2, 0.5, 1.0 / libm::sqrt(3.0)] {
            let f = scalar_model_flux(&ot, [1.0, 0.0, 0.0], r).unwrap();
            assert!((f - 2.0 * (r - r * r * r)).abs() < 1e-12, "rho = {r}: {f}");
        }
    }

    #[test]
    fn table_eval_and_lipschitz() {
        let t = parabola();
        for &r in &[0.0, 0.25, 0.5, 0.33341, 1.0] {
            assert!((t.eval(r) - r * (1.0 - r)).abs() < 3e-7);
        }
        assert!(t.lipschitz() > 1.0 && t.lipschitz() < 1.11);
    }

    #[test]
    fn godunov_closed_forms() {
        let t = parabola();
        // Increasing data: minimum over the interval, here the right edge.
        assert!((t.godunov(0.2, 0.9) - 0.09).abs() < 1e-9);
        // One-slope increasing pair: endpoint minimum.
        assert!((t.godunov(0.2, 0.6) - 0.16).abs() < 1e-9);
        // Decreasing data: maximum; vertex refinement recovers 1/4 exactly
        // for a quadratic.
        assert!((t.godunov(0.9, 0.2) - 0.25).abs() < 1e-9);
        assert!((t.godunov(0.8, 0.2) - 0.25).abs() < 1e-9);
        // Consistency.
        for &r in &[0.0, 0.3, 0.55, 1.0] {
            assert!((t.godunov(r, r) - t.eval(r)).abs() < 1e-12);
        }
        // Sonic-free increasing pair on one slope.
        assert!((t.godunov(0.6, 0.8) - t.eval(0.8)).abs() < 1e-12);
    }

    #[test]
    fn godunov_monotone_on_grid() {
        let t = double_hump();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        for &u in &grid {
            for &v in &grid {
                let g = t.godunov(u, v);
                // Nondecreasing in u, nonincreasing in v.
                let du = 0.025;
                if u + du <= 1.0 {
                    assert!(t.godunov(u + du, v) >= g - 1e-12, "u {u} v {v}");
                }
                if v + du <= 1.0 {
                    assert!(t.godunov(u, v + du) <= g + 1e-12, "u {u} v {v}");
                }
            }
        }
    }

    #[test]
    fn extremizers_unique_and_tied() {
        let t = parabola();
        let e = t.extremize(0.2, 0.9, true);
        assert!(e.is_unique(), "{:?}", e);
        assert!((e.value - 0.25).abs() < 1e-9);
        assert!((e.argbest - 0.5).abs() < 1e-6);
        let e = t.extremize(0.2, 0.9, false);
        assert!(e.is_unique());
        assert!((e.argbest - 0.9).abs() < 1e-12);

        // Symmetric double hump: two tied maxima.
        let t = double_hump();
        let e = t.extremize(0.0, 1.0, true);
        assert_eq!(e.intervals.len(), 2, "{:?}", e.intervals);
        let (p, q) = (e.intervals[0], e.intervals[1]);
        assert!((p.0 + q.1 - 1.0).abs() < 3e-3, "asymmetric ties {p:?} {q:?}");
        // Interior minimum between the humps sits at the symmetry point.
        let e = t.extremize(p.0, q.1, false);
        assert!(e.is_unique());
        assert!((e.argbest - 0.5).abs() < 1e-6);
    }

    #[test]
    fn plateaus_and_flat_reach() {
        let t = FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| r.min(0.3).min(1.0 - r)).unwrap();
        let e = t.extremize(0.1, 0.9, true);
        assert!(!e.is_unique());
        assert_eq!(e.intervals.len(), 1);
        let (lo, hi) = e.intervals[0];
        assert!((lo - 0.3).abs() < 2e-3 && (hi - 0.7).abs() < 2e-3, "({lo}, {hi})");
        assert!(e.contains(0.5, 0.0));

        assert!((t.flat_reach(0.45, true) - 0.3).abs() < 1e-12);
        assert!((t.flat_reach(0.45, false) - 0.7).abs() < 1e-12);
        // No flat segment at a strictly sloped point: the reach is the point.
        assert!((t.flat_reach(0.1, true) - 0.1).abs() < 1e-12);

        // Vanishing flux: the whole range is one flat extremizer.
        let z = FluxTable::from_fn(1.0, DEFAULT_DRHO, |_| 0.0).unwrap();
        let e = z.extremize(0.2, 0.6, false);
        assert!(!e.is_unique());
        assert_eq!(e.intervals.len(), 1);
        assert_eq!(e.intervals[0], (0.2, 0.6));
    }

    #[test]
    fn unbounded_model_needs_explicit_range() {
        let zr = ModelSpec::zero_range_unit(JumpKernel::delta(1, [1, 0, 0]).unwrap());
        assert!(FluxTable::from_model(&zr, [1.0, 0.0, 0.0], None).is_err());
        let t = FluxTable::from_model(&zr, [1.0, 0.0, 0.0], Some(3.0)).unwrap();
        assert!((t.eval(2.0) - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn diagonal_normal_projects_drift() {
        // 2d TASEP-like kernel with drift (0.75, 0.25): f = (n . gamma) r (1 - r).
        let kernel = JumpKernel::new(
            2,
            &[([1, 0, 0], 0.75), ([0, 1, 0], 0.25)],
        )
        .unwrap();
        let spec = ModelSpec::sep(kernel);
        let inv = core::f64::consts::FRAC_1_SQRT_2;
        let n = [inv, inv, 0.0];
        let f = scalar_model_flux(&spec, n, 0.5).unwrap();
        assert!((f - inv * 0.25).abs() < 1e-9);
    }
}
