//! Variational bulk-density formula, phase classification, and stationary
//! profile construction for the open boundary-driven system.
//!
//! The stationary bulk density solves a one-line variational problem over
//! the interval spanned by the reservoir densities: minimize the flux when
//! the left reservoir is the lower one, maximize it when the order is
//! reversed. Flat segments of the flux make densities interchangeable, so
//! each reservoir endpoint first extends outward across any flat segment it
//! touches (the effective endpoints). Which point attains the extremum
//! fixes the phase: the left endpoint (low density), the right endpoint
//! (high density), an interior local max (maximal current) or min (minimal
//! current); ties between separated extremizers mean coexistence, and a
//! wide flat extremizer set means the classification degenerates.

use alloc::vec;
use alloc::vec::Vec;

use crate::flux::{ExtremizerSet, FluxTable};
use crate::geometry::{Perturbation, PerturbedDomain, Side};
use crate::pde::{
    default_c_grid, default_spatial_bumps, entropy_audit_stationary, solve_ibvp, EntropyReport,
};
use crate::{Error, Result};

/// Phase of a stationary point of the open system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseLabel {
    /// Bulk pinned to the left (incoming) reservoir.
    LowDensity,
    /// Bulk pinned to the right reservoir.
    HighDensity,
    /// Bulk at an interior local maximum of the flux.
    MaxCurrent,
    /// Bulk at an interior local minimum of the flux.
    MinCurrent,
    /// Separated extremizers tie: the profile may place a shock anywhere.
    Coexistence,
    /// The extremizer set is a flat continuum; no classification applies.
    DegenerateFlat,
}

impl PhaseLabel {
    /// Bitmask bit for label sets.
    pub fn bit(self) -> u8 {
        match self {
            PhaseLabel::LowDensity => 1,
            PhaseLabel::HighDensity => 2,
            PhaseLabel::MaxCurrent => 4,
            PhaseLabel::MinCurrent => 8,
            PhaseLabel::Coexistence => 16,
            PhaseLabel::DegenerateFlat => 32,
        }
    }

    /// Short name for tables.
    pub fn short(self) -> &'static str {
        match self {
            PhaseLabel::LowDensity => "LD",
            PhaseLabel::HighDensity => "HD",
            PhaseLabel::MaxCurrent => "MC",
            PhaseLabel::MinCurrent => "mC",
            PhaseLabel::Coexistence => "coex",
            PhaseLabel::DegenerateFlat => "flat",
        }
    }
}

/// Classified stationary point.
#[derive(Clone, Debug)]
pub struct PhasePoint {
    /// Left reservoir density.
    pub lambda_a: f64,
    /// Right reservoir density.
    pub lambda_b: f64,
    /// Left endpoint extended outward across flat segments.
    pub eff_a: f64,
    /// Right endpoint extended outward across flat segments.
    pub eff_b: f64,
    /// Extremizer set of the flux over the effective interval.
    pub extremizers: ExtremizerSet,
    /// Unique bulk density, when the extremizer is a point.
    pub bulk: Option<f64>,
    /// Primary phase label.
    pub label: PhaseLabel,
    /// All applicable labels as a bitmask of [`PhaseLabel::bit`].
    pub label_set: u8,
}

/// Positional tolerance for deciding that an endpoint attains the extremum.
const POS_TOL: f64 = 1e-9;

/// Extends each reservoir endpoint outward (away from the other) across any
/// flat segment of the flux it touches.
pub fn effective_endpoints(flux: &FluxTable, lambda_a: f64, lambda_b: f64) -> (f64, f64) {
    if lambda_a <= lambda_b {
        (flux.flat_reach(lambda_a, true), flux.flat_reach(lambda_b, false))
    } else {
        (flux.flat_reach(lambda_a, false), flux.flat_reach(lambda_b, true))
    }
}

/// Classifies a reservoir pair: extremizes the flux over the effective
/// interval (minimize if `lambda_a < lambda_b`, maximize if reversed) and
/// labels the point by where the extremum is attained.
///
/// Equal reservoirs always have bulk `lambda_a`; their label comes from the
/// local slope of the flux (rising: low density; falling: high density;
/// local extremum: max/min current), which matches the label of the
/// surrounding generic points.
pub fn bulk_density(flux: &FluxTable, lambda_a: f64, lambda_b: f64) -> PhasePoint {
    let (eff_a, eff_b) = effective_endpoints(flux, lambda_a, lambda_b);
    if lambda_a == lambda_b {
        return equal_point(flux, lambda_a);
    }
    let minimize = lambda_a < lambda_b;
    let (lo, hi) = if eff_a <= eff_b { (eff_a, eff_b) } else { (eff_b, eff_a) };
    let ex = flux.extremize(lo, hi, !minimize);
    let at_a = ex.contains(eff_a, POS_TOL);
    let at_b = ex.contains(eff_b, POS_TOL);
    let mut label_set = 0u8;
    if at_a {
        label_set |= PhaseLabel::LowDensity.bit();
    }
    if at_b {
        label_set |= PhaseLabel::HighDensity.bit();
    }
    if ex.intervals.len() >= 2 {
        label_set |= PhaseLabel::Coexistence.bit();
    } else if !ex.is_unique() {
        label_set |= PhaseLabel::DegenerateFlat.bit();
    }
    let label = if ex.intervals.len() >= 2 {
        PhaseLabel::Coexistence
    } else if !ex.is_unique() {
        PhaseLabel::DegenerateFlat
    } else if at_a {
        PhaseLabel::LowDensity
    } else if at_b {
        PhaseLabel::HighDensity
    } else if minimize {
        label_set |= PhaseLabel::MinCurrent.bit();
        PhaseLabel::MinCurrent
    } else {
        label_set |= PhaseLabel::MaxCurrent.bit();
        PhaseLabel::MaxCurrent
    };
    let bulk = if label == PhaseLabel::Coexistence || label == PhaseLabel::DegenerateFlat {
        None
    } else {
        // Unique extremizer: report within the original reservoir interval
        // (the outward extension only adds flux-equivalent values).
        Some(ex.argbest.clamp(lambda_a.min(lambda_b), lambda_a.max(lambda_b)))
    };
    PhasePoint {
        lambda_a,
        lambda_b,
        eff_a,
        eff_b,
        extremizers: ex,
        bulk,
        label,
        label_set,
    }
}

/// Classification for `lambda_a == lambda_b`: bulk is the common value, and
/// the label follows the local slope so that diagonal points carry the
/// phase of their neighborhood.
fn equal_point(flux: &FluxTable, v: f64) -> PhasePoint {
    let h = flux.drho();
    let k = flux.k_max();
    let ex = flux.extremize(v, v, false);
    // A wide flat through the point degenerates the classification.
    let span = flux.flat_reach(v, false) - flux.flat_reach(v, true);
    let label = if span > 3.5 * h {
        PhaseLabel::DegenerateFlat
    } else {
        let up = flux.eval((v + h).min(k));
        let down = flux.eval((v - h).max(0.0));
        let slope = up - down;
        let eps = flux.eps_flat().max(1e-14);
        if slope > eps {
            PhaseLabel::LowDensity
        } else if slope < -eps {
            PhaseLabel::HighDensity
        } else if up + down - 2.0 * flux.eval(v) < 0.0 {
            PhaseLabel::MaxCurrent
        } else {
            PhaseLabel::MinCurrent
        }
    };
    let label_set = if label == PhaseLabel::DegenerateFlat {
        label.bit()
    } else {
        PhaseLabel::LowDensity.bit() | PhaseLabel::HighDensity.bit() | label.bit()
    };
    PhasePoint {
        lambda_a: v,
        lambda_b: v,
        eff_a: v,
        eff_b: v,
        extremizers: ex,
        bulk: if label == PhaseLabel::DegenerateFlat { None } else { Some(v) },
        label,
        label_set,
    }
}

/// Classified reservoir grid with connected-region counts.
#[derive(Clone, Debug)]
pub struct PhaseDiagram {
    /// Grid subdivisions per axis (nodes are `0..=resolution`).
    pub resolution: usize,
    /// Density range.
    pub k_max: f64,
    /// Primary label per node, row-major in `(i, j)` with
    /// `lambda_a = k_max * i / resolution`, `lambda_b = k_max * j / resolution`.
    pub labels: Vec<PhaseLabel>,
    /// Bulk density per node (NaN where not unique).
    pub bulks: Vec<f64>,
    /// Connected regions per phase: low density, high density, max current,
    /// min current.
    pub region_counts: [usize; 4],
    /// Nodes labeled coexistence.
    pub coexistence_cells: Vec<(usize, usize)>,
}

impl PhaseDiagram {
    /// Primary label at node `(i, j)`.
    pub fn label_at(&self, i: usize, j: usize) -> PhaseLabel {
        self.labels[i * (self.resolution + 1) + j]
    }

    /// Total phase regions (low/high density + max/min current).
    pub fn total_regions(&self) -> usize {
        self.region_counts.iter().sum()
    }
}

/// Classifies every node of a `(resolution + 1)^2` reservoir grid and
/// counts 4-connected regions of each phase. Single-node components are
/// discarded: they only arise where a measure-zero boundary (the equal
/// reservoir diagonal through an extremum of the flux) touches the grid.
pub fn phase_diagram(flux: &FluxTable, resolution: usize) -> PhaseDiagram {
    let n = resolution + 1;
    let k = flux.k_max();
    let mut labels = vec![PhaseLabel::DegenerateFlat; n * n];
    let mut bulks = vec![f64::NAN; n * n];
    let mut coexistence_cells = Vec::new();
    for i in 0..n {
        let la = k * i as f64 / resolution as f64;
        for j in 0..n {
            let lb = k * j as f64 / resolution as f64;
            let pp = bulk_density(flux, la, lb);
            labels[i * n + j] = pp.label;
            if let Some(b) = pp.bulk {
                bulks[i * n + j] = b;
            }
            if pp.label == PhaseLabel::Coexistence {
                coexistence_cells.push((i, j));
            }
        }
    }
    let counted = [
        PhaseLabel::LowDensity,
        PhaseLabel::HighDensity,
        PhaseLabel::MaxCurrent,
        PhaseLabel::MinCurrent,
    ];
    let mut region_counts = [0usize; 4];
    let mut seen = vec![false; n * n];
    for (li, &want) in counted.iter().enumerate() {
        seen.iter_mut().for_each(|s| *s = false);
        for start in 0..n * n {
            if seen[start] || labels[start] != want {
                continue;
            }
            // BFS over the 4-connected component.
            let mut queue = vec![start];
            seen[start] = true;
            let mut size = 0usize;
            while let Some(idx) = queue.pop() {
                size += 1;
                let (i, j) = (idx / n, idx % n);
                let mut push = |ii: usize, jj: usize, queue: &mut Vec<usize>| {
                    let nb = ii * n + jj;
                    if !seen[nb] && labels[nb] == want {
                        seen[nb] = true;
                        queue.push(nb);
                    }
                };
                if i > 0 {
                    push(i - 1, j, &mut queue);
                }
                if i + 1 < n {
                    push(i + 1, j, &mut queue);
                }
                if j > 0 {
                    push(i, j - 1, &mut queue);
                }
                if j + 1 < n {
                    push(i, j + 1, &mut queue);
                }
            }
            if size >= 2 {
                region_counts[li] += 1;
            }
        }
    }
    PhaseDiagram {
        resolution,
        k_max: k,
        labels,
        bulks,
        region_counts,
        coexistence_cells,
    }
}

/// Piecewise-constant stationary profile on `(a, b)`.
#[derive(Clone, Debug)]
pub struct StationaryProfile {
    lambda_a: f64,
    lambda_b: f64,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StationaryProfile {
    /// Left end.
    pub fn a(&self) -> f64 {
        self.breakpoints[0]
    }

    /// Right end.
    pub fn b(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Left reservoir density.
    pub fn lambda_a(&self) -> f64 {
        self.lambda_a
    }

    /// Right reservoir density.
    pub fn lambda_b(&self) -> f64 {
        self.lambda_b
    }

    /// Breakpoints `a = x_0 < ... < x_n = b`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Piece values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `x` (pieces are right-open).
    pub fn value_at(&self, x: f64) -> f64 {
        let k = self.breakpoints[1..self.breakpoints.len() - 1]
            .partition_point(|&bp| bp <= x);
        self.values[k]
    }

    /// Cell averages on a uniform grid of `cells` cells (sampled at cell
    /// centers; exact when breakpoints sit on cell faces).
    pub fn sample_cells(&self, cells: usize) -> Vec<f64> {
        let (a, b) = (self.a(), self.b());
        let dx = (b - a) / cells as f64;
        (0..cells).map(|i| self.value_at(a + (i as f64 + 0.5) * dx)).collect()
    }
}

/// Validates a piecewise-constant profile as a stationary entropy solution
/// candidate: every value must lie in the extremizer set of the reservoir
/// pair, and consecutive values must be ordered like the reservoirs
/// (equality up to a flat segment of the flux is allowed).
pub fn build_stationary_profile(
    flux: &FluxTable,
    lambda_a: f64,
    lambda_b: f64,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
) -> Result<StationaryProfile> {
    if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
        return Err(Error::BadDomain("need n+1 breakpoints for n values".into()));
    }
    if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::BadDomain("breakpoints must increase".into()));
    }
    let pp = bulk_density(flux, lambda_a, lambda_b);
    for &v in &values {
        if !(0.0 <= v && v <= flux.k_max()) {
            return Err(Error::DataOutOfRange { value: v });
        }
        if !pp.extremizers.contains(v, 1e-6) {
            return Err(Error::ProfileValueNotExtremal { value: v });
        }
    }
    let increasing = lambda_a <= lambda_b;
    for w in values.windows(2) {
        let (x, y) = (w[0], w[1]);
        let ordered = if increasing { x <= y + 1e-12 } else { y <= x + 1e-12 };
        if !ordered {
            // Out-of-order pairs are still fine when the flux is constant
            // between them (flux-equivalent densities commute).
            let (lo, hi) = (x.min(y), x.max(y));
            if flux.flat_reach(lo, false) < hi - 1e-12 {
                return Err(Error::ProfileOrderViolation { lo: x, hi: y });
            }
        }
    }
    Ok(StationaryProfile { lambda_a, lambda_b, breakpoints, values })
}

/// Outcome of [`verify_stationary`].
#[derive(Clone, Debug)]
pub struct StationaryCheck {
    /// Stationary entropy audit of the profile.
    pub audit: EntropyReport,
    /// L1 distance between the profile and its evolution after one
    /// crossing time.
    pub l1_drift: f64,
    /// The crossing time used.
    pub t_cross: f64,
}

/// Audits a profile with spatial-only test functions and evolves it under
/// the boundary solver for one crossing time, reporting the L1 drift.
pub fn verify_stationary(
    profile: &StationaryProfile,
    flux: &FluxTable,
    m: f64,
    dx_target: f64,
    cfl: f64,
) -> Result<StationaryCheck> {
    let (a, b) = (profile.a(), profile.b());
    let cells = (libm::round((b - a) / dx_target) as usize).max(2);
    let u0 = profile.sample_cells(cells);
    let bumps = default_spatial_bumps(a, b);
    let audit = entropy_audit_stationary(
        &u0,
        a,
        b,
        profile.lambda_a,
        profile.lambda_b,
        flux,
        m,
        &default_c_grid(flux.k_max()),
        &bumps,
    )?;
    let t_cross = 1.1 * (b - a) / flux.lipschitz();
    let traj = solve_ibvp(
        flux,
        |x| profile.value_at(x),
        profile.lambda_a,
        profile.lambda_b,
        a,
        b,
        t_cross,
        dx_target,
        cfl,
    )?;
    let end = traj.at_time(t_cross);
    let start = &traj.frames()[0];
    let l1_drift: f64 =
        end.iter().zip(start).map(|(u, v)| (u - v).abs()).sum::<f64>() * traj.dx();
    Ok(StationaryCheck { audit, l1_drift, t_cross })
}

/// Region-wise prediction for a perturbed slab domain: exact bulk on the
/// inner slab, and an interval band on the perturbation collar.
#[derive(Clone, Copy, Debug)]
pub struct PerturbedPrediction {
    /// Bulk density on the inner slab.
    pub bulk: f64,
    /// Band spanned between the effective left endpoint and the bulk,
    /// predicted on a left-side collar.
    pub band_a: (f64, f64),
    /// Band spanned between the bulk and the effective right endpoint,
    /// predicted on a right-side collar.
    pub band_b: (f64, f64),
    /// The left band collapses: the bulk extends through a left collar.
    pub extends_a: bool,
    /// The right band collapses: the bulk extends through a right collar.
    pub extends_b: bool,
    /// Which side the domain actually perturbs.
    pub perturbed_side: Side,
}

impl PerturbedPrediction {
    /// Band predicted on the perturbed side's collar.
    pub fn active_band(&self) -> (f64, f64) {
        match self.perturbed_side {
            Side::A => self.band_a,
            Side::B => self.band_b,
        }
    }
}

/// Instantiates the perturbed-domain hydrostatic prediction for a scalar
/// flux (already projected on the slab normal). Requires a unique bulk.
pub fn perturbed_domain_prediction(
    flux: &FluxTable,
    lambda_a: f64,
    lambda_b: f64,
    domain: &PerturbedDomain,
) -> Result<PerturbedPrediction> {
    let pp = bulk_density(flux, lambda_a, lambda_b);
    let bulk = pp.bulk.ok_or_else(|| {
        Error::BadDomain("perturbed prediction needs a unique bulk density".into())
    })?;
    let band = |x: f64, y: f64| if x <= y { (x, y) } else { (y, x) };
    let band_a = band(pp.eff_a, bulk);
    let band_b = band(bulk, pp.eff_b);
    Ok(PerturbedPrediction {
        bulk,
        band_a,
        band_b,
        extends_a: band_a.1 - band_a.0 <= POS_TOL,
        extends_b: band_b.1 - band_b.0 <= POS_TOL,
        perturbed_side: match domain.kind() {
            Perturbation::NotchA { .. } => Side::A,
            Perturbation::BumpB { .. } => Side::B,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::DEFAULT_DRHO;
    use crate::geometry::SlabDomain;

    fn tasep() -> FluxTable {
        FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| r * (1.0 - r)).unwrap()
    }

    fn double_hump() -> FluxTable {
        FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| {
            r * (1.0 - r) * ((r - 0.5) * (r - 0.5) + 0.02)
        })
        .unwrap()
    }

    #[test]
    fn tasep_reference_points() {
        let f = tasep();
        let cases = [
            (0.2, 0.6, 0.2, PhaseLabel::LowDensity),
            (0.3, 0.9, 0.9, PhaseLabel::HighDensity),
            (0.8, 0.2, 0.5, PhaseLabel::MaxCurrent),
        ];
        for (la, lb, want, label) in cases {
            let pp = bulk_density(&f, la, lb);
            assert_eq!(pp.label, label, "({la}, {lb})");
            assert!((pp.bulk.unwrap() - want).abs() < 1e-6, "({la}, {lb}) -> {:?}", pp.bulk);
            assert_eq!((pp.eff_a, pp.eff_b), (la, lb), "strictly curved flux");
        }
        // Equal endpoint fluxes on the minimizing branch: coexistence.
        let pp = bulk_density(&f, 0.3, 0.7);
        assert_eq!(pp.label, PhaseLabel::Coexistence);
        assert!(pp.bulk.is_none());
        assert!(pp.extremizers.contains(0.3, 1e-9) && pp.extremizers.contains(0.7, 1e-9));
        // The mirrored pair maximizes instead: unique max current.
        let pp = bulk_density(&f, 0.7, 0.3);
        assert_eq!(pp.label, PhaseLabel::MaxCurrent);
    }

    #[test]
    fn equal_reservoirs_label_by_slope() {
        let f = tasep();
        for (v, label) in [
            (0.2, PhaseLabel::LowDensity),
            (0.7, PhaseLabel::HighDensity),
            (0.5, PhaseLabel::MaxCurrent),
        ] {
            let pp = bulk_density(&f, v, v);
            assert_eq!(pp.label, label, "diagonal at {v}");
            assert_eq!(pp.bulk, Some(v));
        }
        let dh = double_hump();
        let pp = bulk_density(&dh, 0.5, 0.5);
        assert_eq!(pp.label, PhaseLabel::MinCurrent);
    }

    #[test]
    fn effective_endpoints_extend_through_flats() {
        let f = tasep();
        assert_eq!(effective_endpoints(&f, 0.2, 0.6), (0.2, 0.6));
        // Flux flat on [0.3, 0.4], strictly increasing elsewhere.
        let plateau = FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| {
            if r < 0.3 {
                r
            } else if r < 0.4 {
                0.3
            } else {
                r - 0.1
            }
        })
        .unwrap();
        let (ea, eb) = effective_endpoints(&plateau, 0.35, 0.8);
        assert!((ea - 0.3).abs() < 2e-3, "left endpoint slides down the plateau: {ea}");
        assert!((eb - 0.8).abs() < 1e-9);
        // Reversed data mirror the directions.
        let (ea, eb) = effective_endpoints(&plateau, 0.8, 0.35);
        assert!((ea - 0.8).abs() < 1e-9);
        assert!((eb - 0.3).abs() < 2e-3);
    }

    #[test]
    fn zero_flux_degenerates() {
        let z = FluxTable::from_fn(1.0, DEFAULT_DRHO, |_| 0.0).unwrap();
        let (ea, eb) = effective_endpoints(&z, 0.35, 0.8);
        assert!(ea.abs() < 1e-12 && (eb - 1.0).abs() < 1e-12, "full-range extension");
        let pp = bulk_density(&z, 0.35, 0.8);
        assert_eq!(pp.label, PhaseLabel::DegenerateFlat);
        assert!(pp.bulk.is_none());
    }

    #[test]
    fn increasing_flux_is_always_low_density() {
        // Zero-range style strictly increasing flux: bulk is the incoming
        // reservoir everywhere and the diagram is a single phase.
        let f = FluxTable::from_fn(3.0, DEFAULT_DRHO, |r| r / (1.0 + r)).unwrap();
        for (la, lb) in [(0.4, 2.0), (2.0, 0.4), (1.0, 1.0), (2.5, 0.1)] {
            let pp = bulk_density(&f, la, lb);
            assert_eq!(pp.label, PhaseLabel::LowDensity, "({la}, {lb})");
            assert!((pp.bulk.unwrap() - la).abs() < 1e-9);
        }
        let diag = phase_diagram(&f, 80);
        assert_eq!(diag.region_counts, [1, 0, 0, 0]);
        assert!(diag.coexistence_cells.is_empty());
    }

    #[test]
    fn tasep_phase_diagram_counts_and_coexistence_line() {
        let diag = phase_diagram(&tasep(), 400);
        assert_eq!(diag.region_counts, [1, 1, 1, 0], "LD, HD, MC phases");
        assert_eq!(diag.total_regions(), 3);
        let want: Vec<(usize, usize)> = (0..200).map(|i| (i, 400 - i)).collect();
        assert_eq!(diag.coexistence_cells, want, "coexistence = anti-diagonal, lambda_a < 1/2");
    }

    #[test]
    fn double_hump_has_seven_phases() {
        let diag = phase_diagram(&double_hump(), 400);
        assert_eq!(diag.region_counts, [2, 2, 2, 1], "2 LD + 2 HD + 2 MC + 1 mC");
        assert_eq!(diag.total_regions(), 7);
    }

    #[test]
    fn bulk_carries_godunov_flux_and_fixed_points() {
        for f in [tasep(), double_hump()] {
            for i in 0..=40 {
                let la = i as f64 / 40.0;
                // R_f(l, l) = l.
                let pp = bulk_density(&f, la, la);
                if pp.label != PhaseLabel::DegenerateFlat {
                    assert_eq!(pp.bulk, Some(la));
                }
                for j in 0..=40 {
                    let lb = j as f64 / 40.0;
                    let pp = bulk_density(&f, la, lb);
                    // The selected extremum value is the Godunov flux itself;
                    // evaluating at the (vertex-sharpened) bulk density can
                    // differ only by the piecewise-linear gap of one node.
                    let diff = pp.extremizers.value - f.godunov(la, lb);
                    assert!(
                        diff.abs() <= 1e-12,
                        "extremum != godunov at ({la}, {lb}): {diff:e}"
                    );
                    if let Some(bulk) = pp.bulk {
                        let gap = f.eval(bulk) - f.godunov(la, lb);
                        assert!(
                            gap.abs() <= f.lipschitz() * f.drho(),
                            "f(R_f) far from godunov at ({la}, {lb}): {gap:e}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn particle_hole_symmetry_swaps_ld_and_hd() {
        // Holes of the exclusion process hop the other way, so rho -> 1-rho
        // together with a wall swap maps (la, lb) to (1-lb, 1-la), keeps the
        // flux, and must swap the low/high-density labels.
        let f = tasep();
        for (la, lb) in [(0.2, 0.6), (0.3, 0.9), (0.1, 0.35), (0.85, 0.95), (0.8, 0.2)] {
            let pp = bulk_density(&f, la, lb);
            let mirrored = bulk_density(&f, 1.0 - lb, 1.0 - la);
            let want = match pp.label {
                PhaseLabel::LowDensity => PhaseLabel::HighDensity,
                PhaseLabel::HighDensity => PhaseLabel::LowDensity,
                other => other,
            };
            assert_eq!(mirrored.label, want, "({la}, {lb})");
            if let (Some(x), Some(y)) = (pp.bulk, mirrored.bulk) {
                assert!((x + y - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn profile_construction_rules() {
        let f = tasep();
        // Unique bulk: only the constant profile passes.
        let ok = build_stationary_profile(&f, 0.2, 0.6, vec![0.0, 1.0], vec![0.2]);
        assert!(ok.is_ok());
        let bad = build_stationary_profile(&f, 0.2, 0.6, vec![0.0, 1.0], vec![0.4]);
        assert!(matches!(bad, Err(Error::ProfileValueNotExtremal { .. })));
        // Coexistence: the two-step family is valid at any breakpoint.
        for x1 in [0.25, 0.5, 0.8] {
            let p =
                build_stationary_profile(&f, 0.3, 0.7, vec![0.0, x1, 1.0], vec![0.3, 0.7])
                    .unwrap();
            assert_eq!(p.value_at(x1 - 0.01), 0.3);
            assert_eq!(p.value_at(x1 + 0.01), 0.7);
        }
        // Downward order against increasing reservoirs is rejected.
        let bad =
            build_stationary_profile(&f, 0.3, 0.7, vec![0.0, 0.5, 1.0], vec![0.7, 0.3]);
        assert!(matches!(bad, Err(Error::ProfileOrderViolation { .. })));
    }

    #[test]
    fn verify_constant_and_two_step_profiles() {
        let f = tasep();
        let m = 1.2 * f.lipschitz();
        // Constant low-density profile: audit passes, drift negligible
        // (the Godunov boundary flux matches the bulk flux exactly).
        let p = build_stationary_profile(&f, 0.2, 0.6, vec![0.0, 1.0], vec![0.2]).unwrap();
        let check = verify_stationary(&p, &f, m, 1.0 / 200.0, 0.45).unwrap();
        assert!(check.audit.pass);
        assert!(check.l1_drift < 1e-12, "drift {}", check.l1_drift);
        // Two-step coexistence profile: stationary shock, small drift.
        let p = build_stationary_profile(&f, 0.3, 0.7, vec![0.0, 0.5, 1.0], vec![0.3, 0.7])
            .unwrap();
        let check = verify_stationary(&p, &f, m, 1.0 / 200.0, 0.45).unwrap();
        assert!(check.audit.pass);
        assert!(check.l1_drift < 0.02, "drift {}", check.l1_drift);
        // A constant off-extremal profile with mismatched boundary data
        // drifts visibly within one crossing time.
        let traj = solve_ibvp(&f, |_| 0.4, 0.2, 0.6, 0.0, 1.0, check.t_cross, 1.0 / 200.0, 0.45)
            .unwrap();
        let end = traj.at_time(check.t_cross);
        let drift: f64 =
            end.iter().map(|u| (u - 0.4).abs()).sum::<f64>() * traj.dx();
        assert!(drift > 0.05, "off-extremal drift {drift}");
    }

    #[test]
    fn perturbed_predictions() {
        let f = tasep();
        let slab = SlabDomain::axis_aligned(2, 0, 0.0, 1.0).unwrap();
        let notch = PerturbedDomain::new(
            slab.clone(),
            -0.25,
            1.0,
            Perturbation::NotchA { t_lo: 0.0, t_hi: 0.25 },
        )
        .unwrap();
        // Low density: the bulk extends through the left collar.
        let pred = perturbed_domain_prediction(&f, 0.2, 0.6, &notch).unwrap();
        assert_eq!(pred.perturbed_side, Side::A);
        assert!(pred.extends_a);
        assert_eq!(pred.active_band(), (0.2, 0.2));
        // Max current: collar bands bracket the extremizer.
        let pred = perturbed_domain_prediction(&f, 0.8, 0.2, &notch).unwrap();
        assert!(!pred.extends_a);
        let (lo, hi) = pred.band_a;
        assert!((lo - 0.5).abs() < 1e-6 && (hi - 0.8).abs() < 1e-9);
        let (lo, hi) = pred.band_b;
        assert!((lo - 0.2).abs() < 1e-9 && (hi - 0.5).abs() < 1e-6);
        // High density with a bump on the right: bulk extends rightward.
        let bump = PerturbedDomain::new(
            slab,
            0.0,
            1.25,
            Perturbation::BumpB { t_lo: 0.0, t_hi: 0.25 },
        )
        .unwrap();
        let pred = perturbed_domain_prediction(&f, 0.3, 0.9, &bump).unwrap();
        assert_eq!(pred.perturbed_side, Side::B);
        assert!(pred.extends_b);
        assert_eq!(pred.active_band(), (0.9, 0.9));
        // Coexistence points have no unique prediction.
        assert!(perturbed_domain_prediction(&f, 0.3, 0.7, &bump).is_err());
    }
}
