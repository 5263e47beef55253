//! TOML experiment configuration: schema, validation, and construction of
//! the model, lattice, and flux objects every runner shares.
//!
//! A single config file describes one experiment family; the subcommand
//! picks which tables it reads. Unknown keys are rejected so typos fail
//! loudly instead of silently running defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use latgas_core::flux::{FluxTable, DEFAULT_DRHO};
use latgas_core::geometry::{
    DomainShape, LatticeDomain, Perturbation, PerturbedDomain, SlabDomain,
};
use latgas_core::model::{JumpKernel, ModelSpec, OvertakingRates, Site, Vecf, MAX_D};

use crate::{CliError, Result};

/// Fallback density ceiling for unbounded models (flux tabulation and
/// reservoir validation) when the config does not set one.
pub const DEFAULT_RHO_MAX: f64 = 4.0;

fn one_f64() -> f64 {
    1.0
}

fn default_replicas() -> u32 {
    4
}

fn default_t_burn() -> f64 {
    4.0
}

fn default_t_end() -> f64 {
    12.0
}

fn default_cell_width() -> f64 {
    0.02
}

fn default_dx() -> f64 {
    0.0025
}

fn default_cfl() -> f64 {
    0.45
}

fn default_resolution() -> usize {
    32
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_min_events() -> u64 {
    1_000_000
}

fn default_probe_sites() -> usize {
    5
}

/// Full experiment description, deserialized from one TOML file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Particle model.
    pub model: ModelConfig,
    /// Macroscopic domain.
    pub domain: DomainConfig,
    /// Reservoir densities on the two walls.
    pub boundary: BoundaryConfig,
    /// Initial macroscopic profile (defaults to the reservoir
    /// interpolation).
    #[serde(default)]
    pub initial: InitialConfig,
    /// Lattice sizes, replica counts, seeds, and time horizons.
    pub run: RunConfig,
    /// Finite-volume discretization.
    #[serde(default)]
    pub pde: PdeConfig,
    /// Flux-table source (defaults to the model's own flux).
    #[serde(default)]
    pub flux: FluxConfig,
    /// Output location.
    #[serde(default)]
    pub output: OutputConfig,
    /// Optional tolerances; when present the matching runner enforces them
    /// and a breach makes the process exit with code 1.
    #[serde(default)]
    pub check: CheckConfig,
    /// Reservoir pairs for hydrostatic sweeps (defaults to `[boundary]`).
    #[serde(default)]
    pub points: Vec<ReservoirPoint>,
    /// Coupling-audit parameters.
    #[serde(default)]
    pub couple: Option<CoupleConfig>,
    /// Phase-diagram parameters.
    #[serde(default)]
    pub phases: PhasesConfig,
}

/// One jump-kernel entry: displacement `z` (length `d`) with weight `w`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    /// Displacement vector.
    pub z: Vec<i64>,
    /// Probability weight.
    pub w: f64,
}

/// Per-axis overtaking rates: `plus[j - 1]` drives distance-`j` moves along
/// the positive axis, `minus` the negative one.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisBetas {
    /// Forward rates by distance.
    #[serde(default)]
    pub plus: Vec<f64>,
    /// Backward rates by distance.
    #[serde(default)]
    pub minus: Vec<f64>,
}

/// Model selection. Misanthrope-family kinds take either an explicit
/// `kernel` list or, in one dimension, a forward probability `p` (`p = 1`
/// is totally asymmetric, `p = 0.5` symmetric).
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Totally asymmetric simple exclusion (d = 1).
    Tasep,
    /// Simple exclusion with a configurable kernel.
    Sep {
        /// Forward probability for the default 1d kernel.
        #[serde(default = "one_f64")]
        p: f64,
        /// Explicit kernel (overrides `p`).
        #[serde(default)]
        kernel: Vec<KernelEntry>,
    },
    /// Cap-3 misanthrope process `b(n, m) = n (3 - m)`.
    MisanthropeK3 {
        /// Forward probability for the default 1d kernel.
        #[serde(default = "one_f64")]
        p: f64,
        /// Explicit kernel (overrides `p`).
        #[serde(default)]
        kernel: Vec<KernelEntry>,
    },
    /// Zero-range process with unit jump rate.
    ZeroRange {
        /// Forward probability for the default 1d kernel.
        #[serde(default = "one_f64")]
        p: f64,
        /// Explicit kernel (overrides `p`).
        #[serde(default)]
        kernel: Vec<KernelEntry>,
    },
    /// Exclusion with overtaking; one `(plus, minus)` rate table per axis.
    Overtaking {
        /// Per-axis rates; the list length fixes the dimension.
        axes: Vec<AxisBetas>,
    },
}

/// Slab or perturbed-slab domain along a lattice axis.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Spatial dimension (1..=3).
    #[serde(default = "one_usize")]
    pub d: usize,
    /// Slab axis (normal direction), `0..d`.
    #[serde(default)]
    pub axis: usize,
    /// Left wall coordinate.
    pub a: f64,
    /// Right wall coordinate.
    pub b: f64,
    /// Transverse period (d >= 2).
    #[serde(default = "one_f64")]
    pub width: f64,
    /// Recess of the `a`-side wall over a transverse window.
    #[serde(default)]
    pub notch: Option<NotchConfig>,
    /// Bulge of the `b`-side wall over a transverse window.
    #[serde(default)]
    pub bump: Option<BumpConfig>,
    /// Interaction-range override (defaults to the model's range).
    #[serde(default)]
    pub range: Option<i64>,
}

fn one_usize() -> usize {
    1
}

/// Recessed left wall: the domain extends down to `a_outer` for transverse
/// coordinate in `[t_lo, t_hi)`.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotchConfig {
    /// Outer wall coordinate (`< a`).
    pub a_outer: f64,
    /// Window start in the first transverse coordinate.
    pub t_lo: f64,
    /// Window end.
    pub t_hi: f64,
}

/// Bulged right wall up to `b_outer` on `[t_lo, t_hi)`.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    /// Outer wall coordinate (`> b`).
    pub b_outer: f64,
    /// Window start.
    pub t_lo: f64,
    /// Window end.
    pub t_hi: f64,
}

/// Reservoir densities on the two walls.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Density on the `a` side.
    pub lambda_a: f64,
    /// Density on the `b` side.
    pub lambda_b: f64,
}

/// One reservoir pair of a hydrostatic sweep.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirPoint {
    /// Density on the `a` side.
    pub lambda_a: f64,
    /// Density on the `b` side.
    pub lambda_b: f64,
}

/// Initial macroscopic density profile.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Linear interpolation of the reservoir densities across the slab.
    Reservoir,
    /// Uniform density.
    Constant {
        /// Density value.
        value: f64,
    },
    /// Two plateaus joined at slab coordinate `at`.
    Step {
        /// Density left of the step.
        left: f64,
        /// Density right of the step.
        right: f64,
        /// Step location (absolute slab coordinate).
        at: f64,
    },
    /// Linear ramp from `left` at the `a` wall to `right` at the `b` wall.
    Linear {
        /// Density at the `a` wall.
        left: f64,
        /// Density at the `b` wall.
        right: f64,
    },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Reservoir
    }
}

/// Lattice sizes, replicas, master seed, and time horizons.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Lattice scales `N` (each >= 4).
    pub n_list: Vec<u32>,
    /// Independent replicas per parameter point.
    #[serde(default = "default_replicas")]
    pub replicas: u32,
    /// Master seed; the `--seed` flag overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Burn-in end for stationary averaging.
    #[serde(default = "default_t_burn")]
    pub t_burn: f64,
    /// End of the run or averaging window.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Checkpoint times for transient experiments (sorted, positive).
    #[serde(default)]
    pub times: Vec<f64>,
    /// Macroscopic width of density-profile cells.
    #[serde(default = "default_cell_width")]
    pub cell_width: f64,
    /// Subinterval of the slab used for L1 distances (defaults to all).
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

/// Finite-volume discretization parameters.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    /// Target cell width.
    #[serde(default = "default_dx")]
    pub dx: f64,
    /// CFL number in `(0, 0.9]`.
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig { dx: default_dx(), cfl: default_cfl() }
    }
}

/// Where the flux table comes from.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FluxKind {
    /// Tabulate the model's own flux along the slab normal.
    #[default]
    Model,
    /// Synthetic two-maximum flux `r (1 - r) ((r - 1/2)^2 + 1/50)` on
    /// `[0, 1]`, for exercising the phase classifier.
    DoubleHump,
}

/// Flux-table source and tabulation ceiling.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    /// Source of the flux.
    #[serde(default)]
    pub kind: FluxKind,
    /// Density ceiling for unbounded models.
    #[serde(default)]
    pub rho_max: Option<f64>,
}

/// Output location.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Root directory for report bundles; the `--out` flag overrides it.
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir() }
    }
}

/// Optional enforcement thresholds. Absent fields are reported but not
/// enforced.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Hydrodynamic: L1 distance at the largest lattice size must not
    /// exceed this.
    pub l1_max: Option<f64>,
    /// Hydrodynamic: L1 distances must decrease with the lattice size.
    #[serde(default)]
    pub monotone: bool,
    /// Hydrostatic: |simulated bulk - predicted bulk| bound.
    pub bulk_tol: Option<f64>,
    /// Hydrostatic (perturbed): slack around the predicted collar band.
    pub collar_tol: Option<f64>,
    /// Hydrostatic: fail when the stationarity diagnostic trips.
    #[serde(default)]
    pub require_stationary: bool,
    /// Coupling audit: per-site |mean - c| bound in replica standard
    /// errors.
    pub marginal_z: Option<f64>,
    /// Phases: required total region count.
    pub phase_regions: Option<usize>,
    /// Solver: |mass balance error| bound.
    pub mass_tol: Option<f64>,
    /// Solver: fail when the entropy audit fails.
    #[serde(default)]
    pub require_entropic: bool,
}

/// Coupling-audit parameters: the second copy runs under a uniform
/// reservoir at density `c` and must dominate the first.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleConfig {
    /// Uniform reservoir density of the dominating copy.
    pub c: f64,
    /// Initial density of the dominated copy.
    pub rho_lo: f64,
    /// Initial density of the dominating copy (defaults to `c`).
    #[serde(default)]
    pub rho_hi: Option<f64>,
    /// Total applied-event budget the audit must reach.
    #[serde(default = "default_min_events")]
    pub min_events: u64,
    /// Probe sites for the marginal-law test.
    #[serde(default = "default_probe_sites")]
    pub probe_sites: usize,
}

/// Phase-diagram parameters.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasesConfig {
    /// Grid subdivisions per reservoir axis.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl Default for PhasesConfig {
    fn default() -> Self {
        PhasesConfig { resolution: default_resolution() }
    }
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Config(msg.into()))
}

fn site_from(z: &[i64]) -> Site {
    let mut s = [0i64; MAX_D];
    s[..z.len()].copy_from_slice(z);
    s
}

impl ExperimentConfig {
    /// Parses and validates a TOML config file; returns the config together
    /// with the raw bytes (hashed into output names).
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let raw = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw)
            .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
        let cfg = Self::parse(text)?;
        Ok((cfg, raw))
    }

    /// Parses and validates a TOML config string.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let spec = self.model_spec()?;
        let d = self.domain.d;
        if d == 0 || d > MAX_D {
            return cfg_err(format!("domain.d = {d} out of 1..={MAX_D}"));
        }
        if spec.d() != d {
            return cfg_err(format!(
                "model dimension {} does not match domain.d = {d}",
                spec.d()
            ));
        }
        if self.domain.axis >= d {
            return cfg_err(format!("domain.axis = {} out of 0..{d}", self.domain.axis));
        }
        if !(self.domain.a < self.domain.b) {
            return cfg_err(format!(
                "domain needs a < b, got ({}, {})",
                self.domain.a, self.domain.b
            ));
        }
        if d >= 2 && !(self.domain.width > 0.0) {
            return cfg_err("domain.width must be positive for d >= 2");
        }
        if self.domain.notch.is_some() && self.domain.bump.is_some() {
            return cfg_err("at most one wall perturbation (notch or bump)");
        }
        let rho_cap = self.density_cap();
        let mut lambdas = vec![(self.boundary.lambda_a, self.boundary.lambda_b)];
        lambdas.extend(self.points.iter().map(|p| (p.lambda_a, p.lambda_b)));
        for (la, lb) in lambdas {
            for v in [la, lb] {
                if !(0.0 <= v && v <= rho_cap) {
                    return cfg_err(format!("reservoir density {v} outside [0, {rho_cap}]"));
                }
            }
        }
        match self.initial {
            InitialConfig::Reservoir => {}
            InitialConfig::Constant { value } => {
                if !(0.0 <= value && value <= rho_cap) {
                    return cfg_err(format!("initial density {value} outside [0, {rho_cap}]"));
                }
            }
            InitialConfig::Step { left, right, at } => {
                for v in [left, right] {
                    if !(0.0 <= v && v <= rho_cap) {
                        return cfg_err(format!("initial density {v} outside [0, {rho_cap}]"));
                    }
                }
                if !(self.domain.a <= at && at <= self.domain.b) {
                    return cfg_err(format!("step location {at} outside the slab"));
                }
            }
            InitialConfig::Linear { left, right } => {
                for v in [left, right] {
                    if !(0.0 <= v && v <= rho_cap) {
                        return cfg_err(format!("initial density {v} outside [0, {rho_cap}]"));
                    }
                }
            }
        }
        let run = &self.run;
        if run.n_list.is_empty() {
            return cfg_err("run.n_list must be nonempty");
        }
        if let Some(&bad) = run.n_list.iter().find(|&&n| n < 4) {
            return cfg_err(format!("lattice size {bad} below the minimum of 4"));
        }
        if run.replicas == 0 {
            return cfg_err("run.replicas must be positive");
        }
        if !(run.t_end > 0.0) {
            return cfg_err("run.t_end must be positive");
        }
        if !(0.0 <= run.t_burn && run.t_burn < run.t_end) {
            return cfg_err(format!(
                "burn-in window [{}, {}] is empty",
                run.t_burn, run.t_end
            ));
        }
        if run.times.windows(2).any(|w| !(w[0] < w[1])) {
            return cfg_err("run.times must be strictly increasing");
        }
        if let Some(&t) = run.times.first() {
            if !(t > 0.0) {
                return cfg_err("run.times must be positive");
            }
        }
        if !(run.cell_width > 0.0) {
            return cfg_err("run.cell_width must be positive");
        }
        let n_min = *run.n_list.iter().min().unwrap();
        if run.cell_width * (n_min as f64) < 1.0 {
            return cfg_err(format!(
                "cell_width {} resolves below one lattice spacing at N = {n_min}",
                run.cell_width
            ));
        }
        if let Some([w0, w1]) = run.window {
            if !(w0 < w1) {
                return cfg_err(format!("empty L1 window [{w0}, {w1}]"));
            }
        }
        if !(self.pde.dx > 0.0 && self.pde.dx < self.domain.b - self.domain.a) {
            return cfg_err(format!("pde.dx = {} does not fit the slab", self.pde.dx));
        }
        if !(0.0 < self.pde.cfl && self.pde.cfl <= 0.9) {
            return cfg_err(format!("pde.cfl = {} outside (0, 0.9]", self.pde.cfl));
        }
        if let Some(c) = &self.couple {
            if !(0.0 <= c.c && c.c <= rho_cap) {
                return cfg_err(format!("couple.c = {} outside [0, {rho_cap}]", c.c));
            }
            let hi = c.rho_hi.unwrap_or(c.c);
            if !(0.0 <= c.rho_lo && c.rho_lo <= hi && hi <= c.c) {
                return cfg_err(format!(
                    "need 0 <= rho_lo <= rho_hi <= c, got ({}, {hi}, {})",
                    c.rho_lo, c.c
                ));
            }
            let lam_max = self.boundary.lambda_a.max(self.boundary.lambda_b);
            if lam_max > c.c {
                return cfg_err(format!(
                    "couple.c = {} must dominate both reservoirs (max {lam_max})",
                    c.c
                ));
            }
            if c.probe_sites == 0 {
                return cfg_err("couple.probe_sites must be positive");
            }
        }
        if self.phases.resolution < 4 {
            return cfg_err("phases.resolution must be at least 4");
        }
        Ok(())
    }

    /// Builds the particle model.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let d = self.domain.d;
        let core = |e: latgas_core::error::Error| CliError::Config(e.to_string());
        match &self.model {
            ModelConfig::Tasep => {
                if d != 1 {
                    return cfg_err("tasep is one-dimensional; use an explicit kernel");
                }
                Ok(ModelSpec::tasep())
            }
            ModelConfig::Sep { p, kernel } => Ok(ModelSpec::sep(build_kernel(d, *p, kernel)?)),
            ModelConfig::MisanthropeK3 { p, kernel } => {
                Ok(ModelSpec::misanthrope_k3(build_kernel(d, *p, kernel)?))
            }
            ModelConfig::ZeroRange { p, kernel } => {
                Ok(ModelSpec::zero_range_unit(build_kernel(d, *p, kernel)?))
            }
            ModelConfig::Overtaking { axes } => {
                if axes.len() != d {
                    return cfg_err(format!(
                        "overtaking needs one axis table per dimension ({d}), got {}",
                        axes.len()
                    ));
                }
                let per_axis: Vec<(Vec<f64>, Vec<f64>)> =
                    axes.iter().map(|a| (a.plus.clone(), a.minus.clone())).collect();
                Ok(ModelSpec::Overtaking(
                    OvertakingRates::new(d, &per_axis).map_err(core)?,
                ))
            }
        }
    }

    /// Density ceiling used for reservoir validation and flux tabulation:
    /// the model cap when finite, otherwise `flux.rho_max`.
    pub fn density_cap(&self) -> f64 {
        let k = match self.model_spec() {
            Ok(spec) => spec.k_max(),
            Err(_) => f64::INFINITY,
        };
        if k.is_finite() {
            k
        } else {
            self.flux.rho_max.unwrap_or(DEFAULT_RHO_MAX)
        }
    }

    /// Builds the domain shape.
    pub fn shape(&self) -> Result<DomainShape> {
        let core = |e: latgas_core::error::Error| CliError::Config(e.to_string());
        let inner = SlabDomain::axis_aligned(self.domain.d, self.domain.axis, self.domain.a, self.domain.b)
            .map_err(core)?;
        match (&self.domain.notch, &self.domain.bump) {
            (None, None) => Ok(DomainShape::Slab(inner)),
            (Some(n), None) => Ok(DomainShape::Perturbed(
                PerturbedDomain::new(
                    inner,
                    n.a_outer,
                    self.domain.b,
                    Perturbation::NotchA { t_lo: n.t_lo, t_hi: n.t_hi },
                )
                .map_err(core)?,
            )),
            (None, Some(b)) => Ok(DomainShape::Perturbed(
                PerturbedDomain::new(
                    inner,
                    self.domain.a,
                    b.b_outer,
                    Perturbation::BumpB { t_lo: b.t_lo, t_hi: b.t_hi },
                )
                .map_err(core)?,
            )),
            (Some(_), Some(_)) => cfg_err("at most one wall perturbation"),
        }
    }

    /// Discretizes the domain at scale `n` and installs the reservoirs of
    /// `[boundary]`.
    pub fn lattice(&self, spec: &ModelSpec, n: u32) -> Result<LatticeDomain> {
        self.lattice_at(spec, n, self.boundary.lambda_a, self.boundary.lambda_b)
    }

    /// Discretizes the domain at scale `n` with explicit reservoirs.
    pub fn lattice_at(
        &self,
        spec: &ModelSpec,
        n: u32,
        lambda_a: f64,
        lambda_b: f64,
    ) -> Result<LatticeDomain> {
        let core = |e: latgas_core::error::Error| CliError::Config(e.to_string());
        let range = self.domain.range.unwrap_or_else(|| spec.interaction_range());
        let mut lat = LatticeDomain::discretize(self.shape()?, n, self.domain.width, range)
            .map_err(core)?;
        lat.set_reservoirs(self.density_cap(), lambda_a, lambda_b).map_err(core)?;
        Ok(lat)
    }

    /// Unit normal along the slab axis (pointing from wall `a` to wall
    /// `b`).
    pub fn normal(&self) -> Vecf {
        let mut nrm = [0.0; MAX_D];
        nrm[self.domain.axis] = 1.0;
        nrm
    }

    /// Tabulates the flux named by `[flux]`; `Model` projects the model's
    /// flux on the slab normal.
    pub fn flux_table(&self, spec: &ModelSpec) -> Result<FluxTable> {
        let core = |e: latgas_core::error::Error| CliError::Config(e.to_string());
        match self.flux.kind {
            FluxKind::Model => {
                let rho_max = if spec.k_max().is_finite() {
                    None
                } else {
                    Some(self.density_cap())
                };
                FluxTable::from_model(spec, self.normal(), rho_max).map_err(core)
            }
            FluxKind::DoubleHump => FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| {
                r * (1.0 - r) * ((r - 0.5) * (r - 0.5) + 0.02)
            })
            .map_err(core),
        }
    }

    /// Initial macroscopic profile as a function of the macro point.
    pub fn initial_profile(&self) -> impl Fn(Vecf) -> f64 + Send + Sync + Clone {
        let axis = self.domain.axis;
        let (a, b) = (self.domain.a, self.domain.b);
        let init = self.initial;
        let (la, lb) = (self.boundary.lambda_a, self.boundary.lambda_b);
        move |p: Vecf| {
            let frac = ((p[axis] - a) / (b - a)).clamp(0.0, 1.0);
            match init {
                InitialConfig::Reservoir => la + (lb - la) * frac,
                InitialConfig::Constant { value } => value,
                InitialConfig::Step { left, right, at } => {
                    if p[axis] < at {
                        left
                    } else {
                        right
                    }
                }
                InitialConfig::Linear { left, right } => left + (right - left) * frac,
            }
        }
    }

    /// Reservoir pairs for hydrostatic sweeps: `[points]` when given,
    /// otherwise the single `[boundary]` pair.
    pub fn reservoir_points(&self) -> Vec<(f64, f64)> {
        if self.points.is_empty() {
            vec![(self.boundary.lambda_a, self.boundary.lambda_b)]
        } else {
            self.points.iter().map(|p| (p.lambda_a, p.lambda_b)).collect()
        }
    }
}

/// Builds a jump kernel from an explicit entry list, or the 1d
/// nearest-neighbor kernel with forward probability `p`.
fn build_kernel(d: usize, p: f64, entries: &[KernelEntry]) -> Result<JumpKernel> {
    let core = |e: latgas_core::error::Error| CliError::Config(e.to_string());
    if !entries.is_empty() {
        let mut support = Vec::with_capacity(entries.len());
        for e in entries {
            if e.z.len() != d {
                return cfg_err(format!(
                    "kernel displacement {:?} is not {d}-dimensional",
                    e.z
                ));
            }
            support.push((site_from(&e.z), e.w));
        }
        return JumpKernel::new(d, &support).map_err(core);
    }
    if d != 1 {
        return cfg_err("an explicit kernel is required for d >= 2");
    }
    if !(0.0 <= p && p <= 1.0) {
        return cfg_err(format!("forward probability {p} outside [0, 1]"));
    }
    if p == 1.0 {
        JumpKernel::delta(1, [1, 0, 0]).map_err(core)
    } else if p == 0.0 {
        JumpKernel::delta(1, [-1, 0, 0]).map_err(core)
    } else {
        JumpKernel::new(1, &[([1, 0, 0], p), ([-1, 0, 0], 1.0 - p)]).map_err(core)
    }
}
