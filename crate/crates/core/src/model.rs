//! Microscopic particle models.
//!
//! Two families share an interface:
//!
//! * misanthrope dynamics: a particle jumps `x -> y` at rate
//!   `p(y - x) * b(eta(x), eta(y))`, with a translation-invariant jump kernel
//!   `p` and a rate table `b` that is nondecreasing in the source occupancy
//!   and nonincreasing in the target occupancy (attractiveness);
//! * exclusion with overtaking: along each lattice axis a particle hops over
//!   `j - 1` occupied neighbours onto the first vacancy at distance `j`, at
//!   rate `beta_j` for that direction, with `beta_j` nonincreasing in `j`.
//!
//! Rates are plain `f64` tables so model files can carry arbitrary measured
//! values; algebraic structure (the product-measure compatibility conditions,
//! monotonicity) is checked by [`validate_model`], which reports findings
//! instead of failing hard, so intentionally broken tables can still be
//! simulated when a caller opts out of validation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Maximum spatial dimension supported by the fixed-width site type.
pub const MAX_D: usize = 3;

/// Lattice site, padded to [`MAX_D`] coordinates; axes past the active
/// dimension stay zero.
pub type Site = [i64; MAX_D];

/// Real vector with the same layout as [`Site`].
pub type Vecf = [f64; MAX_D];

/// Componentwise `x + y`.
#[inline]
pub fn site_add(x: Site, y: Site) -> Site {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
}

/// Componentwise `x - y`.
#[inline]
pub fn site_sub(x: Site, y: Site) -> Site {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
}

/// `x + k * y`.
#[inline]
pub fn site_addk(x: Site, k: i64, y: Site) -> Site {
    [x[0] + k * y[0], x[1] + k * y[1], x[2] + k * y[2]]
}

/// Euclidean dot product of a real vector with a site.
#[inline]
pub fn dotf(n: Vecf, x: Site) -> f64 {
    n[0] * x[0] as f64 + n[1] * x[1] as f64 + n[2] * x[2] as f64
}

/// Axis direction `sign * e_axis`, the unit steps of overtaking dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisDir {
    /// Axis index in `0..d`.
    pub axis: usize,
    /// `false` for `+e_axis`, `true` for `-e_axis`.
    pub neg: bool,
}

impl AxisDir {
    /// Unit step of this direction.
    #[inline]
    pub fn step(self) -> Site {
        let mut s = [0i64; MAX_D];
        s[self.axis] = if self.neg { -1 } else { 1 };
        s
    }

    /// All `2d` axis directions in a fixed order (axis ascending, `+` first).
    pub fn all(d: usize) -> impl Iterator<Item = AxisDir> {
        (0..d).flat_map(|axis| {
            [AxisDir { axis, neg: false }, AxisDir { axis, neg: true }].into_iter()
        })
    }
}

/// Finite-support jump kernel `p` on the lattice: a probability vector over
/// nonzero displacements.
#[derive(Clone, Debug)]
pub struct JumpKernel {
    d: usize,
    support: Vec<(Site, f64)>,
    range: i64,
    drift: Vecf,
}

impl JumpKernel {
    /// Builds a kernel from `(displacement, probability)` pairs.
    ///
    /// Requires `1 <= d <= MAX_D`, displacements nonzero with coordinates
    /// beyond `d` zero, probabilities positive, and total mass 1 within
    /// 1e-12. Duplicate displacements are rejected.
    pub fn new(d: usize, support: &[(Site, f64)]) -> Result<Self> {
        if d == 0 || d > MAX_D {
            return Err(Error::InvalidModel(format!("dimension {d} out of 1..={MAX_D}")));
        }
        if support.is_empty() {
            return Err(Error::InvalidModel("empty jump kernel".into()));
        }
        let mut sum = 0.0;
        let mut range = 0i64;
        let mut drift = [0.0; MAX_D];
        for (i, &(z, p)) in support.iter().enumerate() {
            if z == [0; MAX_D] {
                return Err(Error::InvalidModel("kernel charges the zero displacement".into()));
            }
            for ax in d..MAX_D {
                if z[ax] != 0 {
                    return Err(Error::InvalidModel(format!(
                        "displacement {z:?} uses axis {ax} beyond dimension {d}"
                    )));
                }
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidModel(format!("kernel weight {p} at {z:?}")));
            }
            if support[..i].iter().any(|&(w, _)| w == z) {
                return Err(Error::InvalidModel(format!("duplicate displacement {z:?}")));
            }
            sum += p;
            range = range.max(z.iter().map(|c| c.abs()).max().unwrap());
            for ax in 0..d {
                drift[ax] += p * z[ax] as f64;
            }
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("kernel mass {sum} != 1")));
        }
        Ok(Self { d, support: support.to_vec(), range, drift })
    }

    /// Single-displacement kernel (totally asymmetric along `z`).
    pub fn delta(d: usize, z: Site) -> Result<Self> {
        Self::new(d, &[(z, 1.0)])
    }

    /// Active dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Supported displacements with their probabilities, in insertion order.
    pub fn support(&self) -> &[(Site, f64)] {
        &self.support
    }

    /// L-infinity radius of the support.
    pub fn range(&self) -> i64 {
        self.range
    }

    /// Mean displacement `gamma = sum_z z p(z)`.
    pub fn drift(&self) -> Vecf {
        self.drift
    }

    /// Probability of displacement `z` (0 off support).
    pub fn p(&self, z: Site) -> f64 {
        self.support.iter().find(|&&(w, _)| w == z).map_or(0.0, |&(_, p)| p)
    }

    /// Whether the symmetrized support generates the whole lattice
    /// (irreducibility), tested by breadth-first search on a box of radius
    /// `2 * range + 1` from the origin: the walk must reach every residue
    /// pattern, which on a box that size is equivalent to reaching every
    /// cell.
    pub fn irreducible(&self) -> bool {
        let r = 2 * self.range + 1;
        let width = (2 * r + 1) as usize;
        let len = width.pow(self.d as u32);
        let idx = |x: Site| -> Option<usize> {
            let mut k = 0usize;
            for ax in 0..self.d {
                let c = x[ax] + r;
                if c < 0 || c > 2 * r {
                    return None;
                }
                k = k * width + c as usize;
            }
            Some(k)
        };
        let mut seen = vec![false; len];
        let mut queue = vec![[0i64; MAX_D]];
        seen[idx([0; MAX_D]).unwrap()] = true;
        let mut reached = 1usize;
        while let Some(x) = queue.pop() {
            for &(z, _) in &self.support {
                for s in [1i64, -1] {
                    let y = site_addk(x, s, z);
                    if let Some(k) = idx(y) {
                        if !seen[k] {
                            seen[k] = true;
                            reached += 1;
                            queue.push(y);
                        }
                    }
                }
            }
        }
        reached == len
    }
}

/// Occupancy cap of a misanthrope rate table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cap {
    /// At most `K` particles per site; `b(., K) = 0`.
    Finite(u32),
    /// No cap; the stored table is clamped beyond its row bound.
    Unbounded,
}

/// Dense misanthrope rate table `b(n, m)`.
///
/// `b(n, m)` is the jump rate factor from a site holding `n` particles to a
/// site holding `m`. Stored over `0..=n_max` in both arguments; for
/// [`Cap::Unbounded`] lookups clamp both arguments to `n_max`, which is exact
/// whenever the true rates are constant past the stored bound (as for
/// zero-range `g = 1_{n>=1}`).
#[derive(Clone, Debug)]
pub struct MisanthropeRates {
    cap: Cap,
    n_max: u32,
    table: Vec<f64>,
}

impl MisanthropeRates {
    /// Builds a table from rows `b(n, .)` for `n = 0..=n_max`.
    ///
    /// For `Cap::Finite(K)` the table must be exactly `(K+1) x (K+1)`.
    /// Entries must be finite and nonnegative; structural conditions are
    /// checked by [`validate_model`], not here.
    pub fn new(cap: Cap, rows: &[Vec<f64>]) -> Result<Self> {
        let n_max = match cap {
            Cap::Finite(k) => {
                if k == 0 {
                    return Err(Error::InvalidModel("cap K = 0 leaves no particles".into()));
                }
                if rows.len() != (k + 1) as usize {
                    return Err(Error::InvalidModel(format!(
                        "finite cap {k} needs {} rows, got {}",
                        k + 1,
                        rows.len()
                    )));
                }
                k
            }
            Cap::Unbounded => {
                if rows.len() < 2 {
                    return Err(Error::InvalidModel("unbounded table needs >= 2 rows".into()));
                }
                (rows.len() - 1) as u32
            }
        };
        let w = (n_max + 1) as usize;
        let mut table = Vec::with_capacity(w * w);
        for row in rows {
            if row.len() != w {
                return Err(Error::InvalidModel(format!(
                    "ragged rate table: row of {} in width-{w} table",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidModel(format!("rate entry {v}")));
                }
                table.push(v);
            }
        }
        Ok(Self { cap, n_max, table })
    }

    /// Builds a table by sampling `f(n, m)` over `0..=n_max`.
    pub fn from_fn(cap: Cap, n_max_hint: u32, f: impl Fn(u32, u32) -> f64) -> Result<Self> {
        let n_max = match cap {
            Cap::Finite(k) => k,
            Cap::Unbounded => n_max_hint,
        };
        let rows: Vec<Vec<f64>> =
            (0..=n_max).map(|n| (0..=n_max).map(|m| f(n, m)).collect()).collect();
        Self::new(cap, &rows)
    }

    /// Occupancy cap.
    pub fn cap(&self) -> Cap {
        self.cap
    }

    /// Stored row bound (equals `K` when finite).
    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// Rate `b(n, m)`; clamped lookup when unbounded, zero at `n = 0`.
    #[inline]
    pub fn b(&self, n: u32, m: u32) -> f64 {
        let w = (self.n_max + 1) as usize;
        match self.cap {
            Cap::Finite(k) => {
                debug_assert!(n <= k && m <= k, "occupancy beyond cap");
                self.table[n.min(k) as usize * w + m.min(k) as usize]
            }
            Cap::Unbounded => {
                self.table[n.min(self.n_max) as usize * w + m.min(self.n_max) as usize]
            }
        }
    }

    /// `q(n) = b(n, 0) / b(1, n - 1)` for `n >= 1`, the ratio that drives the
    /// grand-canonical weights; clamped lookups past the stored bound.
    pub fn q(&self, n: u32) -> f64 {
        debug_assert!(n >= 1);
        let denom = self.b(1, n - 1);
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        self.b(n, 0) / denom
    }

    /// Largest stored rate (used for menu bounds).
    pub fn b_max(&self) -> f64 {
        self.table.iter().cloned().fold(0.0, f64::max)
    }
}

/// Overtaking rates: for each axis and orientation, `beta[j - 1]` is the rate
/// of hopping over `j - 1` occupied sites onto the first vacancy at distance
/// `j`. Missing entries are zero.
#[derive(Clone, Debug)]
pub struct OvertakingRates {
    d: usize,
    beta: Vec<[Vec<f64>; 2]>,
    max_j: i64,
}

impl OvertakingRates {
    /// Builds rates from per-axis `(beta_plus, beta_minus)` lists, where
    /// `beta_plus[j - 1]` is the rate of a distance-`j` move along `+e_axis`.
    /// Entries must be finite and nonnegative and at least one must be
    /// positive.
    pub fn new(d: usize, per_axis: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        if d == 0 || d > MAX_D {
            return Err(Error::InvalidModel(format!("dimension {d} out of 1..={MAX_D}")));
        }
        if per_axis.len() != d {
            return Err(Error::InvalidModel(format!(
                "need beta lists for {d} axes, got {}",
                per_axis.len()
            )));
        }
        let mut beta = Vec::with_capacity(d);
        let mut max_j = 0i64;
        let mut any = false;
        for (plus, minus) in per_axis {
            for list in [plus, minus] {
                for &v in list.iter() {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::InvalidModel(format!("overtaking rate {v}")));
                    }
                    if v > 0.0 {
                        any = true;
                    }
                }
                max_j = max_j.max(list.len() as i64);
            }
            beta.push([plus.clone(), minus.clone()]);
        }
        if !any {
            return Err(Error::InvalidModel("all overtaking rates vanish".into()));
        }
        Ok(Self { d, beta, max_j })
    }

    /// Active dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Longest admissible move.
    pub fn max_j(&self) -> i64 {
        self.max_j
    }

    /// `beta_j` for direction `dir` (zero beyond the stored list or `j = 0`).
    #[inline]
    pub fn beta(&self, dir: AxisDir, j: i64) -> f64 {
        if j < 1 {
            return 0.0;
        }
        let list = &self.beta[dir.axis][dir.neg as usize];
        list.get((j - 1) as usize).copied().unwrap_or(0.0)
    }

    /// Largest single rate.
    pub fn beta_max(&self) -> f64 {
        self.beta
            .iter()
            .flat_map(|pair| pair.iter().flatten())
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Drift-like coefficient `sum_j j (beta_j^{+e} - beta_j^{-e})` per axis;
    /// the hydrodynamic flux along `e_i` is `rho (1 - rho) * sum_j j
    /// (beta_j^{+} - beta_j^{-}) rho^{j-1}` componentwise, evaluated
    /// elsewhere.
    pub fn signed_beta(&self, axis: usize, j: i64) -> f64 {
        self.beta(AxisDir { axis, neg: false }, j) - self.beta(AxisDir { axis, neg: true }, j)
    }
}

/// A particle model: rates plus geometry-free structure.
#[derive(Clone, Debug)]
pub enum ModelSpec {
    /// Misanthrope dynamics `p(y - x) b(eta(x), eta(y))`.
    Misanthrope {
        /// Jump kernel `p`.
        kernel: JumpKernel,
        /// Rate table `b`.
        rates: MisanthropeRates,
    },
    /// Exclusion with overtaking (hard cap 1).
    Overtaking(OvertakingRates),
}

impl ModelSpec {
    /// Active dimension.
    pub fn d(&self) -> usize {
        match self {
            ModelSpec::Misanthrope { kernel, .. } => kernel.d(),
            ModelSpec::Overtaking(r) => r.d(),
        }
    }

    /// Occupancy cap (overtaking is exclusion: cap 1).
    pub fn cap(&self) -> Cap {
        match self {
            ModelSpec::Misanthrope { rates, .. } => rates.cap(),
            ModelSpec::Overtaking(_) => Cap::Finite(1),
        }
    }

    /// Cap as density bound: `K` or `+inf`.
    pub fn k_max(&self) -> f64 {
        match self.cap() {
            Cap::Finite(k) => k as f64,
            Cap::Unbounded => f64::INFINITY,
        }
    }

    /// Interaction radius in lattice units: kernel range for misanthrope,
    /// longest move for overtaking. Reservoir shells must be at least this
    /// thick.
    pub fn interaction_range(&self) -> i64 {
        match self {
            ModelSpec::Misanthrope { kernel, .. } => kernel.range(),
            ModelSpec::Overtaking(r) => r.max_j(),
        }
    }

    /// `q(n)` ratio of the grand-canonical weights. Overtaking behaves as
    /// `b(n, m) = n(1 - m)`-exclusion for single-site statistics: `q = 1`.
    pub fn q(&self, n: u32) -> f64 {
        match self {
            ModelSpec::Misanthrope { rates, .. } => rates.q(n),
            ModelSpec::Overtaking(_) => 1.0,
        }
    }

    /// Supremum of `q` over admissible occupancies: the fugacity range is
    /// `[0, q_sup)`. Finite for unbounded tables (clamped q), `+inf` when a
    /// finite cap makes `q(K + 1)` meaningless.
    pub fn q_sup(&self) -> f64 {
        match self.cap() {
            Cap::Finite(_) => f64::INFINITY,
            Cap::Unbounded => match self {
                ModelSpec::Misanthrope { rates, .. } => rates.q(rates.n_max() + 1),
                ModelSpec::Overtaking(_) => unreachable!(),
            },
        }
    }

    /// Misanthrope parts, if this is a misanthrope model.
    pub fn as_misanthrope(&self) -> Option<(&JumpKernel, &MisanthropeRates)> {
        match self {
            ModelSpec::Misanthrope { kernel, rates } => Some((kernel, rates)),
            ModelSpec::Overtaking(_) => None,
        }
    }

    /// Overtaking rates, if this is an overtaking model.
    pub fn as_overtaking(&self) -> Option<&OvertakingRates> {
        match self {
            ModelSpec::Misanthrope { .. } => None,
            ModelSpec::Overtaking(r) => Some(r),
        }
    }

    /// Simple exclusion with kernel `p`: `b(n, m) = n (1 - m)`, cap 1.
    pub fn sep(kernel: JumpKernel) -> Self {
        let rates = MisanthropeRates::from_fn(Cap::Finite(1), 1, |n, m| {
            n as f64 * (1.0 - m as f64)
        })
        .unwrap();
        ModelSpec::Misanthrope { kernel, rates }
    }

    /// Totally asymmetric simple exclusion in one dimension.
    pub fn tasep() -> Self {
        Self::sep(JumpKernel::delta(1, [1, 0, 0]).unwrap())
    }

    /// Cap-3 misanthrope `b(n, m) = n (3 - m)` with kernel `p`.
    pub fn misanthrope_k3(kernel: JumpKernel) -> Self {
        let rates = MisanthropeRates::from_fn(Cap::Finite(3), 3, |n, m| {
            n as f64 * (3.0 - m as f64)
        })
        .unwrap();
        ModelSpec::Misanthrope { kernel, rates }
    }

    /// Zero-range process with unit rate `g(n) = 1_{n >= 1}` and kernel `p`.
    pub fn zero_range_unit(kernel: JumpKernel) -> Self {
        let rates = MisanthropeRates::from_fn(Cap::Unbounded, 2, |n, _| {
            if n >= 1 { 1.0 } else { 0.0 }
        })
        .unwrap();
        ModelSpec::Misanthrope { kernel, rates }
    }

    /// One-dimensional exclusion with overtaking, rates `beta_plus[j-1]`
    /// forward and `beta_minus[j-1]` backward.
    pub fn overtaking_1d(beta_plus: &[f64], beta_minus: &[f64]) -> Result<Self> {
        Ok(ModelSpec::Overtaking(OvertakingRates::new(
            1,
            &[(beta_plus.to_vec(), beta_minus.to_vec())],
        )?))
    }
}

/// One validation finding.
#[derive(Clone, Debug)]
pub struct Check {
    /// What was checked.
    pub name: String,
    /// Whether it held.
    pub pass: bool,
    /// Worst offender or confirmation note.
    pub detail: String,
}

/// Validation report: structural requirements checked over the stored table.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    /// Individual findings.
    pub checks: Vec<Check>,
}

impl ValidationReport {
    /// True when every check passed.
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn push(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check { name: name.into(), pass, detail });
    }
}

/// Checks the structural requirements of a model and reports each finding.
///
/// Misanthrope tables are checked for: `b(0, .) = 0`; `b(., K) = 0` and
/// `b(n, m) > 0` for `n > 0`, `m < K` under a finite cap; monotonicity
/// (nondecreasing in the source count, nonincreasing in the target count);
/// the two product-measure compatibility conditions
/// `b(n, m) - b(m, n) = b(n, 0) - b(m, 0)` and
/// `b(n, m) b(m + 1, 0) b(1, n - 1) = b(m + 1, n - 1) b(n, 0) b(1, m)`
/// (stated multiplicatively to avoid dividing by zero); `q` nondecreasing;
/// and kernel irreducibility. Overtaking rates are checked for monotonicity
/// `beta_{j+1} <= beta_j` per direction and for a positive total rate.
pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut rep = ValidationReport::default();
    const TOL: f64 = 1e-10;
    match spec {
        ModelSpec::Misanthrope { kernel, rates } => {
            let nm = rates.n_max();
            rep.push(
                "kernel irreducible",
                kernel.irreducible(),
                format!("support size {}", kernel.support().len()),
            );

            let mut worst = (true, String::from("all zero"));
            for m in 0..=nm {
                if rates.b(0, m) != 0.0 {
                    worst = (false, format!("b(0, {m}) = {}", rates.b(0, m)));
                    break;
                }
            }
            rep.push("no jumps from empty sites", worst.0, worst.1);

            if let Cap::Finite(k) = rates.cap() {
                let mut ok = true;
                let mut det = String::from("b(., K) = 0");
                for n in 0..=k {
                    if rates.b(n, k) != 0.0 {
                        ok = false;
                        det = format!("b({n}, {k}) = {}", rates.b(n, k));
                        break;
                    }
                }
                rep.push("no jumps onto full sites", ok, det);

                let mut ok = true;
                let mut det = String::from("b > 0 below the cap");
                'pos: for n in 1..=k {
                    for m in 0..k {
                        if !(rates.b(n, m) > 0.0) {
                            ok = false;
                            det = format!("b({n}, {m}) = {}", rates.b(n, m));
                            break 'pos;
                        }
                    }
                }
                rep.push("positive rates below the cap", ok, det);
            }

            let mut ok = true;
            let mut det = String::from("nondecreasing in source count");
            'mono_n: for n in 0..nm {
                for m in 0..=nm {
                    if rates.b(n + 1, m) < rates.b(n, m) - TOL {
                        ok = false;
                        det = format!(
                            "b({}, {m}) = {} < b({n}, {m}) = {}",
                            n + 1,
                            rates.b(n + 1, m),
                            rates.b(n, m)
                        );
                        break 'mono_n;
                    }
                }
            }
            rep.push("monotone in source occupancy", ok, det);

            let mut ok = true;
            let mut det = String::from("nonincreasing in target count");
            'mono_m: for n in 0..=nm {
                for m in 0..nm {
                    if rates.b(n, m + 1) > rates.b(n, m) + TOL {
                        ok = false;
                        det = format!(
                            "b({n}, {}) = {} > b({n}, {m}) = {}",
                            m + 1,
                            rates.b(n, m + 1),
                            rates.b(n, m)
                        );
                        break 'mono_m;
                    }
                }
            }
            rep.push("monotone in target occupancy", ok, det);

            let mut ok = true;
            let mut det = String::from("b(n, m) - b(m, n) = b(n, 0) - b(m, 0)");
            'diff: for n in 0..=nm {
                for m in 0..=nm {
                    let lhs = rates.b(n, m) - rates.b(m, n);
                    let rhs = rates.b(n, 0) - rates.b(m, 0);
                    let scale = 1.0 + lhs.abs().max(rhs.abs());
                    if (lhs - rhs).abs() > TOL * scale {
                        ok = false;
                        det = format!("violated at (n, m) = ({n}, {m}): {lhs} vs {rhs}");
                        break 'diff;
                    }
                }
            }
            rep.push("skew difference condition", ok, det);

            let mut ok = true;
            let mut det = String::from("cross-multiplied ratio condition");
            'ratio: for n in 1..=nm {
                for m in 0..nm {
                    // b(n, m) / b(m+1, n-1) = b(n, 0) b(1, m) / (b(m+1, 0) b(1, n-1)),
                    // cross-multiplied so zero rates need no special casing.
                    let lhs = rates.b(n, m) * rates.b(m + 1, 0) * rates.b(1, n - 1);
                    let rhs = rates.b(m + 1, n - 1) * rates.b(n, 0) * rates.b(1, m);
                    let scale = 1.0 + lhs.abs().max(rhs.abs());
                    if (lhs - rhs).abs() > TOL * scale {
                        ok = false;
                        det = format!("violated at (n, m) = ({n}, {m}): {lhs} vs {rhs}");
                        break 'ratio;
                    }
                }
            }
            rep.push("ratio compatibility condition", ok, det);

            let mut ok = true;
            let mut det = String::from("q nondecreasing");
            let q_top = match rates.cap() {
                Cap::Finite(k) => k,
                Cap::Unbounded => nm + 1,
            };
            let mut prev = 0.0f64;
            for n in 1..=q_top {
                let q = rates.q(n);
                if q < prev - TOL * (1.0 + prev.abs()) {
                    ok = false;
                    det = format!("q({n}) = {q} < q({}) = {prev}", n - 1);
                    break;
                }
                prev = q;
            }
            rep.push("fugacity ratio q nondecreasing", ok, det);
        }
        ModelSpec::Overtaking(rates) => {
            let mut ok = true;
            let mut det = String::from("beta_{j+1} <= beta_j per direction");
            'beta: for dir in AxisDir::all(rates.d()) {
                for j in 1..rates.max_j() {
                    if rates.beta(dir, j + 1) > rates.beta(dir, j) + TOL {
                        ok = false;
                        det = format!(
                            "axis {} {}: beta_{} = {} > beta_{} = {}",
                            dir.axis,
                            if dir.neg { "-" } else { "+" },
                            j + 1,
                            rates.beta(dir, j + 1),
                            j,
                            rates.beta(dir, j)
                        );
                        break 'beta;
                    }
                }
            }
            rep.push("overtaking rates nonincreasing in distance", ok, det);
            rep.push(
                "positive total rate",
                rates.beta_max() > 0.0,
                format!("max rate {}", rates.beta_max()),
            );
        }
    }
    rep
}

/// Bulk misanthrope jump rate for the displacement `z = y - x`:
/// `p(z) * b(n_from, n_to)`.
#[inline]
pub fn bulk_rate(kernel: &JumpKernel, rates: &MisanthropeRates, z: Site, n_from: u32, n_to: u32) -> f64 {
    let p = kernel.p(z);
    if p == 0.0 {
        return 0.0;
    }
    p * rates.b(n_from, n_to)
}

/// Overtaking move rate with a general occupancy field `w` (values in
/// `[0, 1]`; hard occupancies are 0/1): rate of the distance-`j` move from
/// `x` along `dir`, `beta_j * w(x) ... w(x + (j-1) dir) * (1 - w(x + j dir))`.
///
/// With `w` equal to the configuration on sites and to the reservoir profile
/// outside, this is simultaneously the closed rate, the entry rate, and the
/// exit rate; which one it is follows from where source and target lie.
pub fn overtaking_rate(
    rates: &OvertakingRates,
    mut w: impl FnMut(Site) -> f64,
    x: Site,
    dir: AxisDir,
    j: i64,
) -> f64 {
    let beta = rates.beta(dir, j);
    if beta == 0.0 {
        return 0.0;
    }
    let step = dir.step();
    let mut rate = beta;
    for k in 0..j {
        rate *= w(site_addk(x, k, step));
        if rate == 0.0 {
            return 0.0;
        }
    }
    rate * (1.0 - w(site_addk(x, j, step)))
}

/// Mean entry rate factor: `bar_b_plus(lambda, n) = E_theta[b(., n)]` under
/// the single-site marginal `theta` with mean `lambda`, given as explicit
/// probabilities. Drives births into a site holding `n` particles.
pub fn bar_b_plus(rates: &MisanthropeRates, theta: &[f64], n: u32) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(m, &p)| p * rates.b(m as u32, n))
        .sum()
}

/// Mean exit rate factor: `bar_b_minus(n, lambda) = E_theta[b(n, .)]`.
/// Drives deaths from a site holding `n` particles.
pub fn bar_b_minus(rates: &MisanthropeRates, n: u32, theta: &[f64]) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(m, &p)| p * rates.b(n, m as u32))
        .sum()
}

/// Instantaneous microscopic flux of a configuration through the origin
/// cell, per unit volume: for misanthrope models
/// `sum_z p(z) b(eta(0), eta(z)) z`, for overtaking
/// `sum_dir sum_j j * rate_j(0, dir) * dir`, evaluated with the supplied
/// occupancy lookup. Used for fixture checks, not in the engine hot path.
pub fn microscopic_flux(spec: &ModelSpec, mut occ: impl FnMut(Site) -> u32) -> Vecf {
    let mut out = [0.0; MAX_D];
    match spec {
        ModelSpec::Misanthrope { kernel, rates } => {
            let n0 = occ([0; MAX_D]);
            for &(z, p) in kernel.support() {
                let r = p * rates.b(n0, occ(z));
                for ax in 0..kernel.d() {
                    out[ax] += r * z[ax] as f64;
                }
            }
        }
        ModelSpec::Overtaking(rates) => {
            for dir in AxisDir::all(rates.d()) {
                for j in 1..=rates.max_j() {
                    let r = overtaking_rate(rates, |s| occ(s) as f64, [0; MAX_D], dir, j);
                    let sign = if dir.neg { -1.0 } else { 1.0 };
                    out[dir.axis] += sign * j as f64 * r;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3() -> ModelSpec {
        ModelSpec::misanthrope_k3(JumpKernel::delta(1, [1, 0, 0]).unwrap())
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(JumpKernel::new(1, &[([0, 0, 0], 1.0)]).is_err());
        assert!(JumpKernel::new(1, &[([1, 0, 0], 0.5)]).is_err());
        assert!(JumpKernel::new(1, &[([1, 0, 0], 0.5), ([1, 0, 0], 0.5)]).is_err());
        assert!(JumpKernel::new(1, &[([0, 1, 0], 1.0)]).is_err());
        let k = JumpKernel::new(
            2,
            &[([1, 0, 0], 0.75), ([0, -2, 0], 0.125), ([0, 1, 0], 0.125)],
        )
        .unwrap();
        assert_eq!(k.range(), 2);
        assert_eq!(k.drift(), [0.75, -0.125, 0.0]);
        assert!(k.irreducible());
        // Without the odd step the second axis only reaches even sites.
        let k = JumpKernel::new(2, &[([1, 0, 0], 0.75), ([0, -2, 0], 0.25)]).unwrap();
        assert!(!k.irreducible());
    }

    #[test]
    fn reducible_kernel_detected() {
        // Steps of +-2 only reach even sites.
        let k = JumpKernel::delta(1, [2, 0, 0]).unwrap();
        assert!(!k.irreducible());
    }

    #[test]
    fn sep_and_k3_validate() {
        let rep = validate_model(&ModelSpec::tasep());
        assert!(rep.pass(), "{:?}", rep.checks);
        let rep = validate_model(&k3());
        assert!(rep.pass(), "{:?}", rep.checks);
        let zr = ModelSpec::zero_range_unit(JumpKernel::delta(1, [1, 0, 0]).unwrap());
        let rep = validate_model(&zr);
        assert!(rep.pass(), "{:?}", rep.checks);
    }

    #[test]
    fn additive_table_fails_target_monotonicity() {
        // b(n, m) = n + m for n >= 1 increases in the target count, which
        // breaks attractiveness; every other b-check holds, so the report
        // isolates the right failure.
        let rates = MisanthropeRates::from_fn(Cap::Unbounded, 3, |n, m| {
            if n == 0 { 0.0 } else { (n + m) as f64 }
        })
        .unwrap();
        let spec = ModelSpec::Misanthrope {
            kernel: JumpKernel::delta(1, [1, 0, 0]).unwrap(),
            rates,
        };
        let rep = validate_model(&spec);
        assert!(!rep.pass());
        let failed: Vec<_> = rep.checks.iter().filter(|c| !c.pass).collect();
        assert!(failed.iter().any(|c| c.name.contains("target occupancy")), "{failed:?}");
    }

    #[test]
    fn compatibility_violation_detected() {
        // b(n, m) = n / (1 + m) is monotone both ways but fails the skew
        // difference condition.
        let rates = MisanthropeRates::from_fn(Cap::Unbounded, 3, |n, m| {
            n as f64 / (1.0 + m as f64)
        })
        .unwrap();
        let spec = ModelSpec::Misanthrope {
            kernel: JumpKernel::delta(1, [1, 0, 0]).unwrap(),
            rates,
        };
        let rep = validate_model(&spec);
        assert!(rep
            .checks
            .iter()
            .any(|c| c.name.contains("difference condition") && !c.pass));
    }

    #[test]
    fn q_values_match_closed_forms() {
        let spec = k3();
        // b(n, m) = n (3 - m): q(n) = 3n / (4 - n).
        assert_eq!(spec.q(1), 1.0);
        assert_eq!(spec.q(2), 3.0);
        assert_eq!(spec.q(3), 9.0);
        let zr = ModelSpec::zero_range_unit(JumpKernel::delta(1, [1, 0, 0]).unwrap());
        assert_eq!(zr.q(1), 1.0);
        assert_eq!(zr.q(5), 1.0);
        assert_eq!(zr.q_sup(), 1.0);
    }

    #[test]
    fn bar_rates_match_sep_closed_forms() {
        // SEP: bar_b_plus(lambda, n) = lambda (1 - n), bar_b_minus(n, lambda)
        // = n (1 - lambda), with theta = Bernoulli(lambda).
        let spec = ModelSpec::tasep();
        let (_, rates) = spec.as_misanthrope().unwrap();
        let lam = 0.3;
        let theta = [1.0 - lam, lam];
        assert!((bar_b_plus(rates, &theta, 0) - lam).abs() < 1e-15);
        assert!((bar_b_plus(rates, &theta, 1) - 0.0).abs() < 1e-15);
        assert!((bar_b_minus(rates, 1, &theta) - (1.0 - lam)).abs() < 1e-15);
        assert!((bar_b_minus(rates, 0, &theta) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn overtaking_rates_and_boundary_products() {
        // Two-speed forward overtaking: beta_1 = 2, beta_2 = 1.
        let spec = ModelSpec::overtaking_1d(&[2.0, 1.0], &[]).unwrap();
        let rates = spec.as_overtaking().unwrap();
        assert!(validate_model(&spec).pass());
        let plus = AxisDir { axis: 0, neg: false };

        // Closed configuration 1 1 0 at sites 0 1 2: the particle at 0 can
        // only overtake (j = 2), the one at 1 steps (j = 1).
        let eta = |s: Site| -> f64 { [1.0, 1.0, 0.0].get(s[0] as usize).copied().unwrap_or(0.0) };
        assert_eq!(overtaking_rate(rates, eta, [0, 0, 0], plus, 1), 0.0);
        assert_eq!(overtaking_rate(rates, eta, [0, 0, 0], plus, 2), 1.0);
        assert_eq!(overtaking_rate(rates, eta, [1, 0, 0], plus, 1), 2.0);

        // Left-boundary entry products: w = lambda outside (sites <= 0),
        // eta inside. Birth at 1 sums over j of beta_j lambda^j (1 - eta(1));
        // birth at 2 needs eta(1) occupied.
        let lam = 0.4;
        let eta_in = [0.0f64, 1.0, 0.0]; // eta(1) = 0 for the first check
        let w = |s: Site| -> f64 {
            if s[0] <= 0 { lam } else { eta_in[(s[0] - 1) as usize] }
        };
        let r1 = overtaking_rate(rates, w, [0, 0, 0], plus, 1);
        let r2 = overtaking_rate(rates, w, [-1, 0, 0], plus, 2);
        // (beta_1 lambda + beta_2 lambda^2) (1 - eta(1)) with eta(1) = 0.
        assert!((r1 + r2 - (2.0 * lam + lam * lam)).abs() < 1e-15);
        // Birth at 2 via overtaking the occupied site 1: here eta(1) = 1.
        let eta_in2 = [1.0f64, 0.0, 0.0];
        let w2 = |s: Site| -> f64 {
            if s[0] <= 0 { lam } else { eta_in2[(s[0] - 1) as usize] }
        };
        let r = overtaking_rate(rates, w2, [0, 0, 0], plus, 2);
        assert!((r - 1.0 * lam * 1.0 * 1.0).abs() < 1e-15);

        // Right-boundary exit: sites > n are reservoir at lambda_r; the
        // particle at n leaves at rate beta_1 (1 - lam) + beta_2 lam (1 - lam).
        let n = 3i64;
        let lam_r = 0.7;
        let eta_edge = |s: Site| -> f64 {
            if s[0] > n { lam_r } else if s[0] == n { 1.0 } else { 0.0 }
        };
        let exit: f64 = (1..=2)
            .map(|j| overtaking_rate(rates, eta_edge, [n, 0, 0], plus, j))
            .sum();
        let expect = 2.0 * (1.0 - lam_r) + 1.0 * lam_r * (1.0 - lam_r);
        assert!((exit - expect).abs() < 1e-15);
    }

    #[test]
    fn nonmonotone_beta_flagged() {
        let spec = ModelSpec::overtaking_1d(&[1.0, 2.0], &[]).unwrap();
        assert!(!validate_model(&spec).pass());
    }

    #[test]
    fn microscopic_flux_examples() {
        // TASEP with eta(0) = 1, eta(1) = 0: flux e_1.
        let spec = ModelSpec::tasep();
        let f = microscopic_flux(&spec, |s| u32::from(s == [0, 0, 0]));
        assert_eq!(f[0], 1.0);

        // Overtaking beta = (2, 1) on 1 1 0: the origin particle hops two
        // cells at rate 1, contributing flux 2 * 1.
        let spec = ModelSpec::overtaking_1d(&[2.0, 1.0], &[]).unwrap();
        let f = microscopic_flux(&spec, |s| u32::from(s[0] == 0 || s[0] == 1));
        assert_eq!(f[0], 2.0);
    }

    #[test]
    fn unbounded_lookups_clamp() {
        let zr = ModelSpec::zero_range_unit(JumpKernel::delta(1, [1, 0, 0]).unwrap());
        let (_, rates) = zr.as_misanthrope().unwrap();
        assert_eq!(rates.b(17, 42), 1.0);
        assert_eq!(rates.b(0, 42), 0.0);
    }
}
