//! Exact event-driven simulation of open-boundary lattice gases.
//!
//! One trajectory is a continuous-time Markov chain: the engine keeps one
//! aggregate rate per owner site in a Fenwick tree, draws an exponential
//! waiting time from the total rate, picks an owner proportionally, then a
//! move within the owner's menu, applies it, and refreshes the finitely many
//! owners whose menus read a changed site. There is no time discretization;
//! identical seeds give bit-identical event sequences.
//!
//! Reservoirs are frozen equilibria: every boundary event integrates the
//! shell occupancies out against their product marginals, which for
//! misanthrope dynamics yields the averaged entry/exit factors `bar_b_plus`
//! and `bar_b_minus`, and for overtaking dynamics yields products of
//! reservoir densities along the jump path.
//!
//! Two copies evolve jointly under the basic coupling: every geometric
//! channel carries the minimum of the two marginal rates as a joint move
//! plus one-sided excesses. Each marginal alone has the law of its own open
//! process, and when the copies start ordered with dominated reservoirs the
//! order is preserved; the engine re-checks this at every event and reports
//! a violation as an error, since it can only come from a coupling bug.
//!
//! Macroscopic time is Euler-scaled: process time divided by the lattice
//! scale `N`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::fenwick::Fenwick;
use crate::geometry::{CellKind, LatticeDomain, Side};
use crate::marginal::{coupled_marginal, marginal_for_density, CoupledMarginal, SiteMarginal};
use crate::model::{
    bar_b_minus, bar_b_plus, site_addk, AxisDir, Cap, JumpKernel, MisanthropeRates, ModelSpec,
    OvertakingRates, Site, Vecf,
};
use crate::rng::{stream, uniform, uniform_open0};
use crate::Result;

/// Full rate-table refresh cadence, in events; clears floating-point drift
/// from incremental Fenwick updates.
const REBUILD_PERIOD: u32 = 1 << 20;

// ---------------------------------------------------------------------------
// Events and ledgers
// ---------------------------------------------------------------------------

/// What a single applied event did to one copy, in dense site indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    /// A particle moved between two domain sites.
    Jump {
        /// Source site index.
        from: u32,
        /// Target site index.
        to: u32,
    },
    /// A particle entered from a reservoir.
    Birth {
        /// Receiving site index.
        at: u32,
    },
    /// A particle left into a reservoir.
    Death {
        /// Source site index.
        from: u32,
    },
}

/// Event tallies for one copy. `births - deaths` reconciles the particle
/// count exactly: between boundary events the total is conserved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EventLedger {
    /// Events that changed this copy.
    pub events: u64,
    /// Bulk jumps.
    pub jumps: u64,
    /// Reservoir entries.
    pub births: u64,
    /// Reservoir exits.
    pub deaths: u64,
}

impl EventLedger {
    fn tally(&mut self, kind: EventKind) {
        self.events += 1;
        match kind {
            EventKind::Jump { .. } => self.jumps += 1,
            EventKind::Birth { .. } => self.births += 1,
            EventKind::Death { .. } => self.deaths += 1,
        }
    }

    /// Net particle flow into the domain, `births - deaths`.
    pub fn net_inflow(&self) -> i64 {
        self.births as i64 - self.deaths as i64
    }
}

/// Per-copy effects of one applied event (`None`: copy untouched; coupled
/// overtaking admits reservoir-internal moves that touch neither copy).
#[derive(Clone, Copy, Debug)]
struct Applied {
    eta: Option<EventKind>,
    xi: Option<EventKind>,
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// One open-process trajectory state: occupancies, macroscopic time, its own
/// random stream, and the event ledger.
#[derive(Clone, Debug)]
pub struct SimState {
    eta: Vec<u32>,
    t: f64,
    rng: ChaCha8Rng,
    ledger: EventLedger,
}

impl SimState {
    /// Wraps an explicit occupancy vector; values must respect the cap and
    /// the length must match the lattice.
    pub fn new(spec: &ModelSpec, lat: &LatticeDomain, eta: Vec<u32>, rng: ChaCha8Rng) -> Result<Self> {
        if eta.len() != lat.sites().len() {
            return Err(Error::BadDomain(format!(
                "occupancy length {} != site count {}",
                eta.len(),
                lat.sites().len()
            )));
        }
        if let Cap::Finite(k) = spec.cap() {
            for &n in &eta {
                if n > k {
                    return Err(Error::DataOutOfRange { value: n as f64 });
                }
            }
        }
        Ok(SimState { eta, t: 0.0, rng, ledger: EventLedger::default() })
    }

    /// Occupancies in dense site order.
    pub fn eta(&self) -> &[u32] {
        &self.eta
    }

    /// Macroscopic time (process time over `N`).
    pub fn t_macro(&self) -> f64 {
        self.t
    }

    /// Event tallies since construction.
    pub fn ledger(&self) -> EventLedger {
        self.ledger
    }

    /// Total particle count.
    pub fn total_particles(&self) -> u64 {
        self.eta.iter().map(|&n| n as u64).sum()
    }
}

/// The two occupancy arrays of a coupled pair.
#[derive(Clone, Debug)]
struct PairOcc {
    eta: Vec<u32>,
    xi: Vec<u32>,
}

/// A coupled pair of trajectories sharing one clock and one random stream.
#[derive(Clone, Debug)]
pub struct CoupledState {
    occ: PairOcc,
    t: f64,
    rng: ChaCha8Rng,
    led_eta: EventLedger,
    led_xi: EventLedger,
}

impl CoupledState {
    /// Wraps explicit occupancy vectors (same checks as [`SimState::new`]).
    pub fn new(
        spec: &ModelSpec,
        lat: &LatticeDomain,
        eta: Vec<u32>,
        xi: Vec<u32>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let a = SimState::new(spec, lat, eta, rng)?;
        let b = SimState::new(spec, lat, xi, a.rng.clone())?;
        Ok(CoupledState {
            occ: PairOcc { eta: a.eta, xi: b.eta },
            t: 0.0,
            rng: b.rng,
            led_eta: EventLedger::default(),
            led_xi: EventLedger::default(),
        })
    }

    /// First-copy occupancies.
    pub fn eta(&self) -> &[u32] {
        &self.occ.eta
    }

    /// Second-copy occupancies.
    pub fn xi(&self) -> &[u32] {
        &self.occ.xi
    }

    /// Macroscopic time.
    pub fn t_macro(&self) -> f64 {
        self.t
    }

    /// Event tallies per copy.
    pub fn ledgers(&self) -> (EventLedger, EventLedger) {
        (self.led_eta, self.led_xi)
    }

    /// Whether the copies are componentwise ordered, `eta <= xi`.
    pub fn ordered(&self) -> bool {
        self.occ.eta.iter().zip(&self.occ.xi).all(|(&a, &b)| a <= b)
    }
}

// ---------------------------------------------------------------------------
// Initialization from product measures
// ---------------------------------------------------------------------------

fn check_compat(spec: &ModelSpec, lat: &LatticeDomain) -> Result<()> {
    if spec.d() != lat.d() {
        return Err(Error::BadDomain(format!(
            "model dimension {} != lattice dimension {}",
            spec.d(),
            lat.d()
        )));
    }
    if lat.range() < spec.interaction_range() {
        return Err(Error::BadDomain(format!(
            "lattice shell range {} below the model's interaction range {}",
            lat.range(),
            spec.interaction_range()
        )));
    }
    Ok(())
}

/// Samples the product measure with site densities `rho0(x / N)`: every site
/// is drawn independently from the single-site equilibrium marginal at its
/// local density.
pub fn init_from_profile(
    spec: &ModelSpec,
    lat: &LatticeDomain,
    rho0: impl Fn(Vecf) -> f64,
    mut rng: ChaCha8Rng,
) -> Result<SimState> {
    check_compat(spec, lat)?;
    let mut cache: BTreeMap<u64, SiteMarginal> = BTreeMap::new();
    let mut eta = Vec::with_capacity(lat.sites().len());
    for &x in lat.sites() {
        let rho = rho0(lat.macro_point(x));
        let key = rho.to_bits();
        if !cache.contains_key(&key) {
            cache.insert(key, marginal_for_density(rho, spec)?);
        }
        eta.push(cache[&key].sample(uniform(&mut rng)));
    }
    Ok(SimState { eta, t: 0.0, rng, ledger: EventLedger::default() })
}

/// Samples a coupled pair site by site from the monotone coupling of the
/// marginals at `rho_lo(x/N) <= rho_hi(x/N)`; the result is componentwise
/// ordered by construction.
pub fn init_coupled(
    spec: &ModelSpec,
    lat: &LatticeDomain,
    rho_lo: impl Fn(Vecf) -> f64,
    rho_hi: impl Fn(Vecf) -> f64,
    mut rng: ChaCha8Rng,
) -> Result<CoupledState> {
    check_compat(spec, lat)?;
    let mut cache: BTreeMap<(u64, u64), CoupledMarginal> = BTreeMap::new();
    let mut eta = Vec::with_capacity(lat.sites().len());
    let mut xi = Vec::with_capacity(lat.sites().len());
    for &x in lat.sites() {
        let p = lat.macro_point(x);
        let (lo, hi) = (rho_lo(p), rho_hi(p));
        let key = (lo.to_bits(), hi.to_bits());
        if !cache.contains_key(&key) {
            cache.insert(key, coupled_marginal(lo, hi, spec)?);
        }
        let (a, b) = cache[&key].sample_pair(uniform(&mut rng));
        eta.push(a);
        xi.push(b);
    }
    Ok(CoupledState {
        occ: PairOcc { eta, xi },
        t: 0.0,
        rng,
        led_eta: EventLedger::default(),
        led_xi: EventLedger::default(),
    })
}

// ---------------------------------------------------------------------------
// Engine core
// ---------------------------------------------------------------------------

/// Model-specific menus: what each owner site can do, at what total rate,
/// and whose menus a site change invalidates.
trait Dynamics {
    /// Occupancy state the driver evolves.
    type St;
    /// Sum of the rates owned by site `i` (exactly the enumeration order of
    /// [`Dynamics::apply`], so a stored sum always brackets the pick walk).
    fn owner_rate(&self, st: &Self::St, i: u32) -> f64;
    /// Applies the menu entry at cumulative offset `r in [0, owner_rate)`,
    /// pushes every changed site index, and reports per-copy effects.
    fn apply(&self, st: &mut Self::St, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied>;
    /// Owners whose menus read site `y` (must include `y` itself).
    fn dependents(&self, y: u32, out: &mut Vec<u32>);
    /// First-copy occupancy at a site (drives time averaging).
    fn occupancy(&self, st: &Self::St, i: u32) -> u32;
}

/// Exact lazy integrals of per-site occupancy over a time window: each site
/// accumulates `occupancy * elapsed` only when it changes, then flushes at
/// the window end.
struct TimeAverager {
    t0: f64,
    acc: Vec<f64>,
    mark: Vec<f64>,
    last: Vec<f64>,
}

impl TimeAverager {
    fn start(n: usize, t0: f64, occ: impl Fn(u32) -> u32) -> Self {
        TimeAverager {
            t0,
            acc: vec![0.0; n],
            mark: vec![t0; n],
            last: (0..n).map(|i| occ(i as u32) as f64).collect(),
        }
    }

    fn note(&mut self, i: u32, t: f64, new_occ: u32) {
        let i = i as usize;
        self.acc[i] += self.last[i] * (t - self.mark[i]);
        self.mark[i] = t;
        self.last[i] = new_occ as f64;
    }

    fn finish(mut self, t1: f64) -> Vec<f64> {
        let span = t1 - self.t0;
        for i in 0..self.acc.len() {
            self.acc[i] += self.last[i] * (t1 - self.mark[i]);
            self.acc[i] /= span;
        }
        self.acc
    }
}

/// Runs the event loop until `t_end` (macroscopic) or `max_events`.
#[allow(clippy::too_many_arguments)]
fn advance<D: Dynamics>(
    drv: &D,
    st: &mut D::St,
    n_sites: usize,
    n_scale: f64,
    t: &mut f64,
    t_end: f64,
    max_events: u64,
    rng: &mut ChaCha8Rng,
    led_eta: &mut EventLedger,
    led_xi: &mut EventLedger,
    mut avg: Option<&mut TimeAverager>,
    mut obs: impl FnMut(f64, &Applied),
) -> Result<()> {
    let mut sums = vec![0.0f64; n_sites];
    let mut fen = Fenwick::new(n_sites);
    for i in 0..n_sites {
        let w = drv.owner_rate(st, i as u32);
        if !w.is_finite() {
            return Err(Error::RateOverflow);
        }
        sums[i] = w;
        fen.set(i, w);
    }
    let mut changed: Vec<u32> = Vec::with_capacity(8);
    let mut deps: Vec<u32> = Vec::with_capacity(32);
    let mut done = 0u64;
    let mut since_rebuild = 0u32;
    while done < max_events {
        let total = fen.total();
        if !total.is_finite() {
            return Err(Error::RateOverflow);
        }
        if total <= 0.0 {
            // Absorbing configuration: nothing can ever fire again.
            *t = t_end;
            break;
        }
        let t_next = *t - libm::log(uniform_open0(rng)) / (total * n_scale);
        if !(t_next <= t_end) {
            *t = t_end;
            break;
        }
        *t = t_next;
        let owner = fen.find(uniform(rng) * total) as u32;
        let r = uniform(rng) * sums[owner as usize];
        changed.clear();
        let applied = drv.apply(st, owner, r, &mut changed)?;
        if let Some(kind) = applied.eta {
            led_eta.tally(kind);
        }
        if let Some(kind) = applied.xi {
            led_xi.tally(kind);
        }
        if let Some(a) = avg.as_deref_mut() {
            for &s in &changed {
                a.note(s, *t, drv.occupancy(st, s));
            }
        }
        obs(*t, &applied);
        deps.clear();
        for &s in &changed {
            drv.dependents(s, &mut deps);
        }
        deps.sort_unstable();
        deps.dedup();
        for &o in &deps {
            let w = drv.owner_rate(st, o);
            if !w.is_finite() {
                return Err(Error::RateOverflow);
            }
            sums[o as usize] = w;
            fen.set(o as usize, w);
        }
        done += 1;
        since_rebuild += 1;
        if since_rebuild >= REBUILD_PERIOD {
            since_rebuild = 0;
            for (i, s) in sums.iter_mut().enumerate() {
                *s = drv.owner_rate(st, i as u32);
                fen.set(i, *s);
            }
            fen.rebuild();
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Misanthrope drivers
// ---------------------------------------------------------------------------

/// Reservoir-averaged entry/exit factors tabulated per distinct reservoir
/// density (slot) and receiving/donating occupancy.
struct BarTables {
    /// `plus[slot][n] = E_theta[b(., n)]`.
    plus: Vec<Vec<f64>>,
    /// `minus[slot][n] = E_theta[b(n, .)]`.
    minus: Vec<Vec<f64>>,
    /// Largest tabulated occupancy (lookups clamp, matching the rate table).
    n_hi: u32,
}

impl BarTables {
    fn build(spec: &ModelSpec, rates: &MisanthropeRates, lambdas: &[f64]) -> Result<Self> {
        let n_hi = match rates.cap() {
            Cap::Finite(k) => k,
            Cap::Unbounded => rates.n_max(),
        };
        let mut plus = Vec::with_capacity(lambdas.len());
        let mut minus = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            let theta = marginal_for_density(lam, spec)?;
            let probs = theta.probs();
            plus.push((0..=n_hi).map(|n| bar_b_plus(rates, probs, n)).collect());
            minus.push((0..=n_hi).map(|n| bar_b_minus(rates, n, probs)).collect());
        }
        Ok(BarTables { plus, minus, n_hi })
    }

    #[inline]
    fn entry(&self, slot: u32, n: u32) -> f64 {
        self.plus[slot as usize][n.min(self.n_hi) as usize]
    }

    #[inline]
    fn exit(&self, slot: u32, n: u32) -> f64 {
        self.minus[slot as usize][n.min(self.n_hi) as usize]
    }
}

/// Maps every shell cell to its reservoir-density slot; optionally appends
/// one extra slot for a uniform second-copy reservoir.
fn lambda_slots(lat: &LatticeDomain, extra: Option<f64>) -> (Vec<f64>, Vec<u32>, u32) {
    let mut lambdas: Vec<f64> = (0..lat.shell().len() as u32).map(|s| lat.lambda(s)).collect();
    if let Some(c) = extra {
        lambdas.push(c);
    }
    lambdas.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let slot_of = |v: f64| -> u32 {
        lambdas.partition_point(|&w| w < v) as u32
    };
    let shell_slot = (0..lat.shell().len() as u32).map(|s| slot_of(lat.lambda(s))).collect();
    let extra_slot = extra.map(slot_of).unwrap_or(0);
    (lambdas, shell_slot, extra_slot)
}

struct MisDriver<'a> {
    lat: &'a LatticeDomain,
    kernel: &'a JumpKernel,
    rates: &'a MisanthropeRates,
    bars: BarTables,
    shell_slot: Vec<u32>,
}

impl<'a> MisDriver<'a> {
    fn build(spec: &'a ModelSpec, lat: &'a LatticeDomain) -> Result<Self> {
        let (kernel, rates) = spec.as_misanthrope().expect("misanthrope driver");
        let (lambdas, shell_slot, _) = lambda_slots(lat, None);
        let bars = BarTables::build(spec, rates, &lambdas)?;
        Ok(MisDriver { lat, kernel, rates, bars, shell_slot })
    }

    /// Enumerates owner `i`'s menu in a fixed order: per kernel displacement
    /// first the outgoing move (bulk jump or reservoir exit), then the
    /// reservoir entry from the mirrored shell cell. Stops early when the
    /// visitor returns true.
    fn for_menu(&self, eta: &[u32], i: u32, f: &mut impl FnMut(f64, EventKind) -> bool) {
        let x = self.lat.site(i);
        let n_here = eta[i as usize];
        for &(z, p) in self.kernel.support() {
            let rate_out = match self.lat.cell(site_addk(x, 1, z)) {
                CellKind::Interior(j) => {
                    let w = p * self.rates.b(n_here, eta[j as usize]);
                    if w > 0.0 && f(w, EventKind::Jump { from: i, to: j }) {
                        return;
                    }
                    continue;
                }
                CellKind::Shell(s) => p * self.bars.exit(self.shell_slot[s as usize], n_here),
                CellKind::Outside => 0.0,
            };
            if rate_out > 0.0 && f(rate_out, EventKind::Death { from: i }) {
                return;
            }
        }
        for &(z, p) in self.kernel.support() {
            if let CellKind::Shell(s) = self.lat.cell(site_addk(x, -1, z)) {
                let w = p * self.bars.entry(self.shell_slot[s as usize], n_here);
                if w > 0.0 && f(w, EventKind::Birth { at: i }) {
                    return;
                }
            }
        }
    }
}

fn apply_kind(occ: &mut [u32], kind: EventKind, changed: &mut Vec<u32>) {
    match kind {
        EventKind::Jump { from, to } => {
            debug_assert!(occ[from as usize] > 0);
            occ[from as usize] -= 1;
            occ[to as usize] += 1;
            changed.push(from);
            changed.push(to);
        }
        EventKind::Birth { at } => {
            occ[at as usize] += 1;
            changed.push(at);
        }
        EventKind::Death { from } => {
            debug_assert!(occ[from as usize] > 0);
            occ[from as usize] -= 1;
            changed.push(from);
        }
    }
}

fn mis_dependents(lat: &LatticeDomain, kernel: &JumpKernel, y: u32, out: &mut Vec<u32>) {
    out.push(y);
    let x = lat.site(y);
    for &(z, _) in kernel.support() {
        if let Some(j) = lat.site_index(site_addk(x, -1, z)) {
            out.push(j);
        }
    }
}

impl Dynamics for MisDriver<'_> {
    type St = Vec<u32>;

    fn owner_rate(&self, st: &Vec<u32>, i: u32) -> f64 {
        let mut sum = 0.0;
        self.for_menu(st, i, &mut |w, _| {
            sum += w;
            false
        });
        sum
    }

    fn apply(&self, st: &mut Vec<u32>, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied> {
        let mut cum = 0.0;
        let mut picked: Option<EventKind> = None;
        self.for_menu(st, i, &mut |w, kind| {
            cum += w;
            // Remember the last positive entry as a round-off fallback.
            picked = Some(kind);
            r < cum
        });
        let kind = picked.expect("nonempty menu");
        apply_kind(st, kind, changed);
        Ok(Applied { eta: Some(kind), xi: None })
    }

    fn dependents(&self, y: u32, out: &mut Vec<u32>) {
        mis_dependents(self.lat, self.kernel, y, out);
    }

    fn occupancy(&self, st: &Vec<u32>, i: u32) -> u32 {
        st[i as usize]
    }
}

/// Basic coupling of two misanthrope copies: the same geometric channels as
/// the single driver, each carrying both marginal rates. The first copy sees
/// the lattice reservoir field, the second a uniform reservoir at `c`.
struct MisCoupledDriver<'a> {
    lat: &'a LatticeDomain,
    kernel: &'a JumpKernel,
    rates: &'a MisanthropeRates,
    bars: BarTables,
    shell_slot: Vec<u32>,
    c_slot: u32,
    enforce_order: bool,
}

impl<'a> MisCoupledDriver<'a> {
    fn build(spec: &'a ModelSpec, lat: &'a LatticeDomain, c: f64, enforce_order: bool) -> Result<Self> {
        let (kernel, rates) = spec.as_misanthrope().expect("misanthrope driver");
        let (lambdas, shell_slot, c_slot) = lambda_slots(lat, Some(c));
        let bars = BarTables::build(spec, rates, &lambdas)?;
        Ok(MisCoupledDriver { lat, kernel, rates, bars, shell_slot, c_slot, enforce_order })
    }

    /// Channel visitor: `f(rate_eta, rate_xi, kind)`; the owned weight of a
    /// channel is `max(rate_eta, rate_xi)`.
    fn for_channels(&self, st: &PairOcc, i: u32, f: &mut impl FnMut(f64, f64, EventKind) -> bool) {
        let x = self.lat.site(i);
        let (ne, nx) = (st.eta[i as usize], st.xi[i as usize]);
        for &(z, p) in self.kernel.support() {
            match self.lat.cell(site_addk(x, 1, z)) {
                CellKind::Interior(j) => {
                    let re = p * self.rates.b(ne, st.eta[j as usize]);
                    let rx = p * self.rates.b(nx, st.xi[j as usize]);
                    if re.max(rx) > 0.0 && f(re, rx, EventKind::Jump { from: i, to: j }) {
                        return;
                    }
                }
                CellKind::Shell(s) => {
                    let re = p * self.bars.exit(self.shell_slot[s as usize], ne);
                    let rx = p * self.bars.exit(self.c_slot, nx);
                    if re.max(rx) > 0.0 && f(re, rx, EventKind::Death { from: i }) {
                        return;
                    }
                }
                CellKind::Outside => {}
            }
        }
        for &(z, p) in self.kernel.support() {
            if let CellKind::Shell(s) = self.lat.cell(site_addk(x, -1, z)) {
                let re = p * self.bars.entry(self.shell_slot[s as usize], ne);
                let rx = p * self.bars.entry(self.c_slot, nx);
                if re.max(rx) > 0.0 && f(re, rx, EventKind::Birth { at: i }) {
                    return;
                }
            }
        }
    }
}

/// Splits a channel's local offset into the joint branch (`min`), the
/// first-copy excess, and the second-copy excess.
#[inline]
fn coupled_branch(r_local: f64, re: f64, rx: f64) -> (bool, bool) {
    let m = re.min(rx);
    if r_local < m {
        (true, true)
    } else if r_local < re {
        (true, false)
    } else {
        (false, true)
    }
}

fn check_order(occ: &PairOcc, changed: &[u32], enforce: bool) -> Result<()> {
    if enforce {
        for &s in changed {
            if occ.eta[s as usize] > occ.xi[s as usize] {
                return Err(Error::OrderViolation { site: s });
            }
        }
    }
    Ok(())
}

impl Dynamics for MisCoupledDriver<'_> {
    type St = PairOcc;

    fn owner_rate(&self, st: &PairOcc, i: u32) -> f64 {
        let mut sum = 0.0;
        self.for_channels(st, i, &mut |re, rx, _| {
            sum += re.max(rx);
            false
        });
        sum
    }

    fn apply(&self, st: &mut PairOcc, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied> {
        let mut cum = 0.0;
        let mut picked: Option<(f64, f64, f64, EventKind)> = None;
        self.for_channels(st, i, &mut |re, rx, kind| {
            let seg = re.max(rx);
            cum += seg;
            picked = Some((cum - seg, re, rx, kind));
            r < cum
        });
        let (base, re, rx, kind) = picked.expect("nonempty menu");
        let (hit_eta, hit_xi) = coupled_branch((r - base).max(0.0), re, rx);
        let mut applied = Applied { eta: None, xi: None };
        if hit_eta {
            apply_kind(&mut st.eta, kind, changed);
            applied.eta = Some(kind);
        }
        if hit_xi {
            apply_kind(&mut st.xi, kind, changed);
            applied.xi = Some(kind);
        }
        check_order(st, changed, self.enforce_order)?;
        Ok(applied)
    }

    fn dependents(&self, y: u32, out: &mut Vec<u32>) {
        mis_dependents(self.lat, self.kernel, y, out);
    }

    fn occupancy(&self, st: &PairOcc, i: u32) -> u32 {
        st.eta[i as usize]
    }
}

// ---------------------------------------------------------------------------
// Overtaking drivers
// ---------------------------------------------------------------------------

struct OvDriver<'a> {
    lat: &'a LatticeDomain,
    rates: &'a OvertakingRates,
}

impl OvDriver<'_> {
    /// Occupancy field seen by a path product: configuration on sites,
    /// reservoir density on the shell, vacuum outside.
    #[inline]
    fn w(&self, eta: &[u32], s: Site) -> f64 {
        match self.lat.cell(s) {
            CellKind::Interior(j) => eta[j as usize] as f64,
            CellKind::Shell(k) => self.lat.lambda(k),
            CellKind::Outside => 0.0,
        }
    }

    /// Path-product rate of the move `(x, dir, j)` in field `eta`.
    fn move_rate(&self, eta: &[u32], x: Site, dir: AxisDir, j: i64) -> f64 {
        let beta = self.rates.beta(dir, j);
        if beta == 0.0 {
            return 0.0;
        }
        let step = dir.step();
        let mut rate = beta;
        for k in 0..j {
            rate *= self.w(eta, site_addk(x, k, step));
            if rate == 0.0 {
                return 0.0;
            }
        }
        rate * (1.0 - self.w(eta, site_addk(x, j, step)))
    }

    /// Menu of owner `i`: every in-domain-source move (jump or exit), then
    /// every shell-source move landing exactly at `i` (entry). Moves that
    /// never touch the domain belong to no menu; they relocate reservoir
    /// mass only and cannot change the state.
    fn for_menu(&self, eta: &[u32], i: u32, f: &mut impl FnMut(f64, EventKind) -> bool) {
        let x = self.lat.site(i);
        let max_j = self.rates.max_j();
        for dir in AxisDir::all(self.rates.d()) {
            let step = dir.step();
            if eta[i as usize] > 0 {
                for j in 1..=max_j {
                    let w = self.move_rate(eta, x, dir, j);
                    if w > 0.0 {
                        let kind = match self.lat.cell(site_addk(x, j, step)) {
                            CellKind::Interior(t) => EventKind::Jump { from: i, to: t },
                            _ => EventKind::Death { from: i },
                        };
                        if f(w, kind) {
                            return;
                        }
                    }
                }
            }
            // Entries: every shell-sourced move of length m landing exactly
            // here. The path may cross interior cells (overtaking them);
            // interior sources are skipped since they own their own moves.
            for m in 1..=max_j {
                let src = site_addk(x, -m, step);
                if let CellKind::Shell(_) = self.lat.cell(src) {
                    let w = self.move_rate(eta, src, dir, m);
                    if w > 0.0 && f(w, EventKind::Birth { at: i }) {
                        return;
                    }
                }
            }
        }
    }
}

fn ov_dependents(lat: &LatticeDomain, max_j: i64, d: usize, y: u32, out: &mut Vec<u32>) {
    out.push(y);
    let x = lat.site(y);
    for dir in AxisDir::all(d) {
        let step = dir.step();
        for k in 1..=max_j {
            if let Some(j) = lat.site_index(site_addk(x, k, step)) {
                out.push(j);
            }
        }
    }
}

impl Dynamics for OvDriver<'_> {
    type St = Vec<u32>;

    fn owner_rate(&self, st: &Vec<u32>, i: u32) -> f64 {
        let mut sum = 0.0;
        self.for_menu(st, i, &mut |w, _| {
            sum += w;
            false
        });
        sum
    }

    fn apply(&self, st: &mut Vec<u32>, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied> {
        let mut cum = 0.0;
        let mut picked: Option<EventKind> = None;
        self.for_menu(st, i, &mut |w, kind| {
            cum += w;
            picked = Some(kind);
            r < cum
        });
        let kind = picked.expect("nonempty menu");
        apply_kind(st, kind, changed);
        Ok(Applied { eta: Some(kind), xi: None })
    }

    fn dependents(&self, y: u32, out: &mut Vec<u32>) {
        ov_dependents(self.lat, self.rates.max_j(), self.rates.d(), y, out);
    }

    fn occupancy(&self, st: &Vec<u32>, i: u32) -> u32 {
        st[i as usize]
    }
}

/// First-vacancy scan state of one copy along a jump path.
#[derive(Clone, Copy, Debug)]
enum Scan {
    /// Source vacant: this copy has no move on the channel.
    Dead,
    /// Every cell so far occupied, vacancy not yet found.
    Scanning,
    /// First vacancy at this distance: the move length.
    Found(i64),
}

impl Scan {
    #[inline]
    fn step(self, occupied: bool, idx: i64) -> Scan {
        match self {
            Scan::Scanning if occupied => Scan::Scanning,
            Scan::Scanning if idx == 0 => Scan::Dead,
            Scan::Scanning => Scan::Found(idx),
            other => other,
        }
    }

    #[inline]
    fn decided(self) -> bool {
        !matches!(self, Scan::Scanning)
    }

    #[inline]
    fn length(self) -> Option<i64> {
        match self {
            Scan::Found(j) => Some(j),
            _ => None,
        }
    }
}

/// One resolved alternative of a coupled overtaking channel: a joint
/// assignment of the reservoir cells along the path, with the resulting
/// move lengths and marginal rates for both copies.
struct Leaf {
    x: Site,
    dir: AxisDir,
    k: Option<i64>,
    l: Option<i64>,
    weight: f64,
    re: f64,
    rx: f64,
}

/// Basic coupling of two overtaking copies. A channel is a source and
/// direction; both copies jump from the same source to their own first
/// vacancy. Reservoir cells hold virtual occupancies drawn fresh at every
/// event from the monotone coupling of Bernoulli(lambda) and Bernoulli(c),
/// enumerated exactly: the channel rate integrates over all assignments.
struct OvCoupledDriver<'a> {
    lat: &'a LatticeDomain,
    rates: &'a OvertakingRates,
    c: f64,
    enforce_order: bool,
}

impl OvCoupledDriver<'_> {
    /// Depth-first resolution of the path cells from `idx` on, branching at
    /// shell cells over the coupled Bernoulli outcomes. Calls `emit` at each
    /// leaf once both scans are decided (or the path is exhausted); returns
    /// true when the visitor stopped the walk.
    #[allow(clippy::too_many_arguments)]
    fn resolve(
        &self,
        st: &PairOcc,
        x: Site,
        step: Site,
        mut idx: i64,
        weight: f64,
        mut es: Scan,
        mut xs: Scan,
        emit: &mut impl FnMut(f64, Option<i64>, Option<i64>) -> bool,
    ) -> bool {
        loop {
            if (es.decided() && xs.decided()) || idx > self.rates.max_j() {
                return emit(weight, es.length(), xs.length());
            }
            match self.lat.cell(site_addk(x, idx, step)) {
                CellKind::Interior(j) => {
                    es = es.step(st.eta[j as usize] > 0, idx);
                    xs = xs.step(st.xi[j as usize] > 0, idx);
                }
                CellKind::Outside => {
                    es = es.step(false, idx);
                    xs = xs.step(false, idx);
                }
                CellKind::Shell(s) => {
                    let le = self.lat.lambda(s);
                    let lc = self.c;
                    let outcomes = [
                        (true, true, le.min(lc)),
                        (true, false, (le - lc).max(0.0)),
                        (false, true, (lc - le).max(0.0)),
                        (false, false, 1.0 - le.max(lc)),
                    ];
                    for (oe, ox, p) in outcomes {
                        if p > 0.0
                            && self.resolve(
                                st,
                                x,
                                step,
                                idx + 1,
                                weight * p,
                                es.step(oe, idx),
                                xs.step(ox, idx),
                                emit,
                            )
                        {
                            return true;
                        }
                    }
                    return false;
                }
            }
            idx += 1;
        }
    }

    /// Visits every leaf of every channel owned by `i`, in a fixed order.
    /// Owner of a channel is the first in-domain cell on its path, so each
    /// channel that can change the state has exactly one owner.
    fn for_leaves(&self, st: &PairOcc, i: u32, f: &mut impl FnMut(&Leaf) -> bool) {
        let here = self.lat.site(i);
        for dir in AxisDir::all(self.rates.d()) {
            let step = dir.step();
            let mut sources: Vec<Site> = Vec::with_capacity(1 + self.rates.max_j() as usize);
            sources.push(here);
            for m in 1..=self.rates.max_j() {
                let src = site_addk(here, -m, step);
                match self.lat.cell(src) {
                    CellKind::Interior(_) => break,
                    CellKind::Shell(_) => sources.push(src),
                    CellKind::Outside => {}
                }
            }
            for &x in &sources {
                let mut stopped = false;
                let mut emit = |w: f64, k: Option<i64>, l: Option<i64>| -> bool {
                    let re = k.map(|j| self.rates.beta(dir, j)).unwrap_or(0.0);
                    let rx = l.map(|j| self.rates.beta(dir, j)).unwrap_or(0.0);
                    if w * re.max(rx) <= 0.0 {
                        return false;
                    }
                    stopped = f(&Leaf { x, dir, k, l, weight: w, re, rx });
                    stopped
                };
                self.resolve(st, x, step, 0, 1.0, Scan::Scanning, Scan::Scanning, &mut emit);
                if stopped {
                    return;
                }
            }
        }
    }

    /// Applies a length-`j` move from `x` along `dir` to one copy; shell
    /// endpoints leave the copy untouched.
    fn apply_move(
        &self,
        occ: &mut [u32],
        x: Site,
        dir: AxisDir,
        j: i64,
        changed: &mut Vec<u32>,
    ) -> Option<EventKind> {
        let step = dir.step();
        let src = self.lat.site_index(x);
        let tgt = self.lat.site_index(site_addk(x, j, step));
        let kind = match (src, tgt) {
            (Some(a), Some(b)) => EventKind::Jump { from: a, to: b },
            (None, Some(b)) => EventKind::Birth { at: b },
            (Some(a), None) => EventKind::Death { from: a },
            (None, None) => return None,
        };
        apply_kind(occ, kind, changed);
        Some(kind)
    }
}

impl Dynamics for OvCoupledDriver<'_> {
    type St = PairOcc;

    fn owner_rate(&self, st: &PairOcc, i: u32) -> f64 {
        let mut sum = 0.0;
        self.for_leaves(st, i, &mut |leaf| {
            sum += leaf.weight * leaf.re.max(leaf.rx);
            false
        });
        sum
    }

    fn apply(&self, st: &mut PairOcc, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied> {
        let mut cum = 0.0;
        let mut picked: Option<(f64, Site, AxisDir, Option<i64>, Option<i64>, f64, f64, f64)> = None;
        self.for_leaves(st, i, &mut |leaf| {
            let seg = leaf.weight * leaf.re.max(leaf.rx);
            cum += seg;
            picked = Some((cum - seg, leaf.x, leaf.dir, leaf.k, leaf.l, leaf.weight, leaf.re, leaf.rx));
            r < cum
        });
        let (base, x, dir, k, l, weight, re, rx) = picked.expect("nonempty menu");
        let r_local = ((r - base) / weight).max(0.0);
        let (hit_eta, hit_xi) = coupled_branch(r_local, re, rx);
        let mut applied = Applied { eta: None, xi: None };
        if hit_eta {
            if let Some(j) = k {
                applied.eta = self.apply_move(&mut st.eta, x, dir, j, changed);
            }
        }
        if hit_xi {
            if let Some(j) = l {
                applied.xi = self.apply_move(&mut st.xi, x, dir, j, changed);
            }
        }
        check_order(st, changed, self.enforce_order)?;
        Ok(applied)
    }

    fn dependents(&self, y: u32, out: &mut Vec<u32>) {
        ov_dependents(self.lat, self.rates.max_j(), self.rates.d(), y, out);
    }

    fn occupancy(&self, st: &PairOcc, i: u32) -> u32 {
        st.eta[i as usize]
    }
}

// ---------------------------------------------------------------------------
// Dispatch and public run entry points
// ---------------------------------------------------------------------------

enum SingleDyn<'a> {
    Mis(MisDriver<'a>),
    Ov(OvDriver<'a>),
}

impl<'a> SingleDyn<'a> {
    fn build(spec: &'a ModelSpec, lat: &'a LatticeDomain) -> Result<Self> {
        check_compat(spec, lat)?;
        Ok(match spec {
            ModelSpec::Misanthrope { .. } => SingleDyn::Mis(MisDriver::build(spec, lat)?),
            ModelSpec::Overtaking(r) => SingleDyn::Ov(OvDriver { lat, rates: r }),
        })
    }
}

impl Dynamics for SingleDyn<'_> {
    type St = Vec<u32>;

    fn owner_rate(&self, st: &Vec<u32>, i: u32) -> f64 {
        match self {
            SingleDyn::Mis(d) => d.owner_rate(st, i),
            SingleDyn::Ov(d) => d.owner_rate(st, i),
        }
    }

    fn apply(&self, st: &mut Vec<u32>, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied> {
        match self {
            SingleDyn::Mis(d) => d.apply(st, i, r, changed),
            SingleDyn::Ov(d) => d.apply(st, i, r, changed),
        }
    }

    fn dependents(&self, y: u32, out: &mut Vec<u32>) {
        match self {
            SingleDyn::Mis(d) => d.dependents(y, out),
            SingleDyn::Ov(d) => d.dependents(y, out),
        }
    }

    fn occupancy(&self, st: &Vec<u32>, i: u32) -> u32 {
        st[i as usize]
    }
}

enum CoupledDyn<'a> {
    Mis(MisCoupledDriver<'a>),
    Ov(OvCoupledDriver<'a>),
}

impl<'a> CoupledDyn<'a> {
    fn build(spec: &'a ModelSpec, lat: &'a LatticeDomain, c: f64, enforce: bool) -> Result<Self> {
        check_compat(spec, lat)?;
        Ok(match spec {
            ModelSpec::Misanthrope { .. } => {
                CoupledDyn::Mis(MisCoupledDriver::build(spec, lat, c, enforce)?)
            }
            ModelSpec::Overtaking(r) => {
                CoupledDyn::Ov(OvCoupledDriver { lat, rates: r, c, enforce_order: enforce })
            }
        })
    }
}

impl Dynamics for CoupledDyn<'_> {
    type St = PairOcc;

    fn owner_rate(&self, st: &PairOcc, i: u32) -> f64 {
        match self {
            CoupledDyn::Mis(d) => d.owner_rate(st, i),
            CoupledDyn::Ov(d) => d.owner_rate(st, i),
        }
    }

    fn apply(&self, st: &mut PairOcc, i: u32, r: f64, changed: &mut Vec<u32>) -> Result<Applied> {
        match self {
            CoupledDyn::Mis(d) => d.apply(st, i, r, changed),
            CoupledDyn::Ov(d) => d.apply(st, i, r, changed),
        }
    }

    fn dependents(&self, y: u32, out: &mut Vec<u32>) {
        match self {
            CoupledDyn::Mis(d) => d.dependents(y, out),
            CoupledDyn::Ov(d) => d.dependents(y, out),
        }
    }

    fn occupancy(&self, st: &PairOcc, i: u32) -> u32 {
        st.eta[i as usize]
    }
}

/// Advances the trajectory to macroscopic time `t_end`.
pub fn run(st: &mut SimState, spec: &ModelSpec, lat: &LatticeDomain, t_end: f64) -> Result<()> {
    run_with(st, spec, lat, t_end, u64::MAX, |_, _| {})
}

/// Advances the trajectory to `t_end` or `max_events`, whichever first,
/// reporting every applied event to the observer.
pub fn run_with(
    st: &mut SimState,
    spec: &ModelSpec,
    lat: &LatticeDomain,
    t_end: f64,
    max_events: u64,
    mut obs: impl FnMut(f64, EventKind),
) -> Result<()> {
    let drv = SingleDyn::build(spec, lat)?;
    let n_sites = lat.sites().len();
    let n_scale = lat.n_scale() as f64;
    let SimState { eta, t, rng, ledger } = st;
    let mut scratch = EventLedger::default();
    advance(
        &drv,
        eta,
        n_sites,
        n_scale,
        t,
        t_end,
        max_events,
        rng,
        ledger,
        &mut scratch,
        None,
        |time, applied: &Applied| {
            if let Some(kind) = applied.eta {
                obs(time, kind);
            }
        },
    )
}

/// Advances to `t1` while accumulating the exact time average of every
/// site's occupancy over `[current time, t1]`.
pub fn run_time_averaged(
    st: &mut SimState,
    spec: &ModelSpec,
    lat: &LatticeDomain,
    t1: f64,
) -> Result<Vec<f64>> {
    if !(t1 > st.t) {
        return Err(Error::BadDomain(format!("averaging window [{}, {t1}] is empty", st.t)));
    }
    let drv = SingleDyn::build(spec, lat)?;
    let n_sites = lat.sites().len();
    let n_scale = lat.n_scale() as f64;
    let SimState { eta, t, rng, ledger } = st;
    let mut avg = TimeAverager::start(n_sites, *t, |i| eta[i as usize]);
    let mut scratch = EventLedger::default();
    advance(
        &drv,
        eta,
        n_sites,
        n_scale,
        t,
        t1,
        u64::MAX,
        rng,
        ledger,
        &mut scratch,
        Some(&mut avg),
        |_, _| {},
    )?;
    Ok(avg.finish(t1))
}

/// Advances a coupled pair to `t_end` under the basic coupling; the first
/// copy sees the lattice reservoir field, the second a uniform reservoir at
/// density `c`. When the pair starts ordered and the reservoir field is
/// dominated by `c`, order preservation is asserted at every event.
pub fn run_coupled(
    st: &mut CoupledState,
    spec: &ModelSpec,
    lat: &LatticeDomain,
    c: f64,
    t_end: f64,
) -> Result<()> {
    if !(0.0 <= c) || c > spec.k_max() {
        return Err(Error::ReservoirOutOfRange { value: c });
    }
    let dominated = (0..lat.shell().len() as u32).all(|s| lat.lambda(s) <= c);
    let enforce = dominated && st.ordered();
    let drv = CoupledDyn::build(spec, lat, c, enforce)?;
    let n_sites = lat.sites().len();
    let n_scale = lat.n_scale() as f64;
    let CoupledState { occ, t, rng, led_eta, led_xi } = st;
    advance(
        &drv, occ, n_sites, n_scale, t, t_end, u64::MAX, rng, led_eta, led_xi, None, |_, _| {},
    )
}

// ---------------------------------------------------------------------------
// Density profiles and monitors
// ---------------------------------------------------------------------------

/// Block-averaged density along the slab axis: cells of macroscopic width
/// `delta`, each holding the mean occupancy of its sites.
#[derive(Clone, Debug)]
pub struct DensityProfile {
    delta: f64,
    start: f64,
    values: Vec<f64>,
    counts: Vec<u32>,
    stderr: Option<Vec<f64>>,
    norm: f64,
}

impl DensityProfile {
    /// Cell width.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Left edge of the first cell.
    pub fn start(&self) -> f64 {
        self.start
    }

    /// Per-cell mean occupancies.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sites per cell.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Per-cell standard errors, when estimated from replicas.
    pub fn stderr(&self) -> Option<&[f64]> {
        self.stderr.as_deref()
    }

    /// Cell centers along the slab axis.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| self.start + (k as f64 + 0.5) * self.delta).collect()
    }

    /// Total mass `sum_cells value * sites / N^d`: equals the particle count
    /// over `N^d` exactly.
    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.counts)
            .map(|(&v, &c)| v * c as f64 * self.norm)
            .sum()
    }
}

fn bin_site_values(lat: &LatticeDomain, delta: f64, vals: &[f64]) -> Result<DensityProfile> {
    if !(delta > 0.0) || delta * (lat.n_scale() as f64) < 1.0 {
        return Err(Error::BadDomain(format!("cell width {delta} below one lattice spacing")));
    }
    let (a_out, b_out) = lat.shape().outer_bounds();
    let cells = libm::ceil((b_out - a_out) / delta - 1e-12).max(1.0) as usize;
    let mut sums = vec![0.0f64; cells];
    let mut counts = vec![0u32; cells];
    let axis = lat.axis();
    let n = lat.n_scale() as f64;
    for (i, &x) in lat.sites().iter().enumerate() {
        let s = x[axis] as f64 / n;
        let k = (libm::floor((s - a_out) / delta) as usize).min(cells - 1);
        sums[k] += vals[i];
        counts[k] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mut norm = 1.0;
    for _ in 0..lat.d() {
        norm /= n;
    }
    Ok(DensityProfile { delta, start: a_out, values, counts, stderr: None, norm })
}

/// Block-averages an occupancy configuration into cells of width `delta`
/// (which must cover at least one lattice spacing).
pub fn empirical_density(lat: &LatticeDomain, eta: &[u32], delta: f64) -> Result<DensityProfile> {
    let vals: Vec<f64> = eta.iter().map(|&v| v as f64).collect();
    bin_site_values(lat, delta, &vals)
}

/// Weighted discrepancy of a coupled pair: `N^{-d} sum phi(x/N) (eta-xi)^pm`.
/// The positive part of an ordered pair vanishes identically.
pub fn kruzkov_monitor(
    cs: &CoupledState,
    lat: &LatticeDomain,
    phi: impl Fn(Vecf) -> f64,
    plus: bool,
) -> f64 {
    let mut norm = 1.0;
    for _ in 0..lat.d() {
        norm /= lat.n_scale() as f64;
    }
    let mut sum = 0.0;
    for (i, &x) in lat.sites().iter().enumerate() {
        let diff = cs.occ.eta[i] as i64 - cs.occ.xi[i] as i64;
        let part = if plus { diff.max(0) } else { (-diff).max(0) };
        if part != 0 {
            sum += phi(lat.macro_point(x)) * part as f64;
        }
    }
    norm * sum
}

// ---------------------------------------------------------------------------
// Stationary estimation
// ---------------------------------------------------------------------------

/// Per-site mean occupancies of one replica over the two halves of its
/// averaging window.
#[derive(Clone, Debug)]
pub struct ReplicaAverage {
    /// Means over the first half-window.
    pub half1: Vec<f64>,
    /// Means over the second half-window.
    pub half2: Vec<f64>,
}

/// Replica-combined stationary profile estimate.
#[derive(Clone, Debug)]
pub struct StationaryEstimate {
    /// Cell profile with per-cell replica standard errors.
    pub profile: DensityProfile,
    /// Mean density over the central third of the slab.
    pub bulk: f64,
    /// Replica standard error of the bulk estimate.
    pub bulk_se: f64,
    /// Set when the first and second half-window domain means differ by
    /// more than three standard errors: the window is too early or short.
    pub nonstationary: bool,
}

fn reservoir_side_means(lat: &LatticeDomain) -> (f64, f64) {
    let (mut sa, mut na, mut sb, mut nb) = (0.0, 0u32, 0.0, 0u32);
    for s in 0..lat.shell().len() as u32 {
        match lat.shell_side(s) {
            Side::A => {
                sa += lat.lambda(s);
                na += 1;
            }
            Side::B => {
                sb += lat.lambda(s);
                nb += 1;
            }
        }
    }
    (
        if na > 0 { sa / na as f64 } else { 0.0 },
        if nb > 0 { sb / nb as f64 } else { 0.0 },
    )
}

/// One stationary-sampling replica: starts from the product measure that
/// interpolates the reservoir densities, burns in to `t0`, then returns the
/// exact per-site time averages over the two halves of `[t0, t1]`.
pub fn replica_time_average(
    spec: &ModelSpec,
    lat: &LatticeDomain,
    t0: f64,
    t1: f64,
    rng: ChaCha8Rng,
) -> Result<ReplicaAverage> {
    if !(0.0 <= t0 && t0 < t1) {
        return Err(Error::BadDomain(format!("bad averaging window [{t0}, {t1}]")));
    }
    let (la, lb) = reservoir_side_means(lat);
    let inner = lat.shape().inner();
    let (a, b) = (inner.a(), inner.b());
    let axis = lat.axis();
    let rho0 = move |p: Vecf| {
        let frac = ((p[axis] - a) / (b - a)).clamp(0.0, 1.0);
        la + (lb - la) * frac
    };
    let mut st = init_from_profile(spec, lat, rho0, rng)?;
    run(&mut st, spec, lat, t0)?;
    let half1 = run_time_averaged(&mut st, spec, lat, 0.5 * (t0 + t1))?;
    let half2 = run_time_averaged(&mut st, spec, lat, t1)?;
    Ok(ReplicaAverage { half1, half2 })
}

/// Merges replica averages into a cell profile with standard errors, a bulk
/// estimate from the central third of the slab, and the stationarity flag.
pub fn combine_replicas(
    lat: &LatticeDomain,
    delta: f64,
    reps: &[ReplicaAverage],
) -> Result<StationaryEstimate> {
    let n_sites = lat.sites().len();
    if reps.is_empty() || reps.iter().any(|r| r.half1.len() != n_sites || r.half2.len() != n_sites)
    {
        return Err(Error::BadDomain("replica shape mismatch".into()));
    }
    let nr = reps.len();
    // Per-replica cell profiles; the estimate is their pointwise mean.
    let mut cell_profiles = Vec::with_capacity(nr);
    for rep in reps {
        let full: Vec<f64> =
            rep.half1.iter().zip(&rep.half2).map(|(&u, &v)| 0.5 * (u + v)).collect();
        cell_profiles.push(bin_site_values(lat, delta, &full)?);
    }
    let cells = cell_profiles[0].values.len();
    let mut values = vec![0.0f64; cells];
    for p in &cell_profiles {
        for (v, &pv) in values.iter_mut().zip(&p.values) {
            *v += pv;
        }
    }
    for v in values.iter_mut() {
        *v /= nr as f64;
    }
    let stderr = if nr >= 2 {
        let mut se = vec![0.0f64; cells];
        for p in &cell_profiles {
            for (s, (&pv, &m)) in se.iter_mut().zip(p.values.iter().zip(&values)) {
                *s += (pv - m) * (pv - m);
            }
        }
        for s in se.iter_mut() {
            *s = libm::sqrt(*s / ((nr - 1) as f64 * nr as f64));
        }
        Some(se)
    } else {
        None
    };

    // Bulk: central third of the inner slab, replica spread for the error.
    let inner = lat.shape().inner();
    let span = inner.b() - inner.a();
    let (lo, hi) = (inner.a() + span / 3.0, inner.b() - span / 3.0);
    let axis = lat.axis();
    let n = lat.n_scale() as f64;
    let central: Vec<usize> = lat
        .sites()
        .iter()
        .enumerate()
        .filter(|(_, x)| {
            let s = x[axis] as f64 / n;
            lo <= s && s <= hi
        })
        .map(|(i, _)| i)
        .collect();
    let mut bulks = Vec::with_capacity(nr);
    let mut d_means = Vec::with_capacity(nr);
    for rep in reps {
        let mut bulk = 0.0;
        for &i in &central {
            bulk += 0.5 * (rep.half1[i] + rep.half2[i]);
        }
        bulks.push(if central.is_empty() { 0.0 } else { bulk / central.len() as f64 });
        let m1: f64 = rep.half1.iter().sum::<f64>() / n_sites as f64;
        let m2: f64 = rep.half2.iter().sum::<f64>() / n_sites as f64;
        d_means.push(m2 - m1);
    }
    let bulk = bulks.iter().sum::<f64>() / nr as f64;
    let bulk_se = if nr >= 2 {
        let var =
            bulks.iter().map(|&x| (x - bulk) * (x - bulk)).sum::<f64>() / ((nr - 1) as f64);
        libm::sqrt(var / nr as f64)
    } else {
        0.0
    };
    let nonstationary = if nr >= 2 {
        let dm = d_means.iter().sum::<f64>() / nr as f64;
        let dv =
            d_means.iter().map(|&x| (x - dm) * (x - dm)).sum::<f64>() / ((nr - 1) as f64);
        dm.abs() > 3.0 * libm::sqrt(dv / nr as f64)
    } else {
        false
    };

    let counts = cell_profiles[0].counts.clone();
    let profile = DensityProfile {
        delta,
        start: cell_profiles[0].start,
        values,
        counts,
        stderr,
        norm: cell_profiles[0].norm,
    };
    Ok(StationaryEstimate { profile, bulk, bulk_se, nonstationary })
}

/// Stationary-profile estimator: `replicas` independent trajectories, each
/// burning in to `t0` and time-averaging over `[t0, t1]`; streams derive
/// deterministically from `(master, run_id, replica)`.
#[allow(clippy::too_many_arguments)]
pub fn stationary_profile(
    spec: &ModelSpec,
    lat: &LatticeDomain,
    t0: f64,
    t1: f64,
    replicas: u32,
    delta: f64,
    master: u64,
    run_id: u64,
) -> Result<StationaryEstimate> {
    if replicas == 0 {
        return Err(Error::BadDomain("need at least one replica".into()));
    }
    let mut reps = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        reps.push(replica_time_average(spec, lat, t0, t1, stream(master, &[run_id, r as u64]))?);
    }
    combine_replicas(lat, delta, &reps)
}

/// Time average of a local observable `g` read on the window `anchor +
/// offsets`, where the anchor is the interior site nearest to `N * x`. The
/// trajectory starts from the reservoir-interpolating product measure,
/// burns in to `t0`, and `g` is sampled at `samples` evenly spaced times in
/// `(t0, t1]`.
#[allow(clippy::too_many_arguments)]
pub fn local_equilibrium_probe(
    spec: &ModelSpec,
    lat: &LatticeDomain,
    x: Vecf,
    offsets: &[Site],
    g: impl Fn(&[u32]) -> f64,
    t0: f64,
    t1: f64,
    samples: u32,
    rng: ChaCha8Rng,
) -> Result<f64> {
    if samples == 0 || !(0.0 <= t0 && t0 < t1) {
        return Err(Error::BadDomain(format!("bad probe window [{t0}, {t1}]")));
    }
    let n = lat.n_scale() as f64;
    let mut anchor: Option<Site> = None;
    let mut best = f64::INFINITY;
    for &s in lat.sites() {
        let dist = (0..lat.d()).map(|ax| (s[ax] as f64 - x[ax] * n).abs()).fold(0.0, f64::max);
        if dist < best {
            best = dist;
            anchor = Some(s);
        }
    }
    let anchor = anchor.ok_or(Error::EmptyDomain)?;
    let mut window = Vec::with_capacity(offsets.len());
    for &off in offsets {
        let idx = lat.site_index(site_addk(anchor, 1, off)).ok_or_else(|| {
            Error::BadDomain("observable window leaves the domain".into())
        })?;
        window.push(idx as usize);
    }
    let (la, lb) = reservoir_side_means(lat);
    let inner = lat.shape().inner();
    let (a, b) = (inner.a(), inner.b());
    let axis = lat.axis();
    let mut st = init_from_profile(spec, lat, |p: Vecf| {
        let frac = ((p[axis] - a) / (b - a)).clamp(0.0, 1.0);
        la + (lb - la) * frac
    }, rng)?;
    run(&mut st, spec, lat, t0)?;
    let mut occ = vec![0u32; window.len()];
    let mut acc = 0.0;
    for s in 1..=samples {
        let t = t0 + (t1 - t0) * s as f64 / samples as f64;
        run(&mut st, spec, lat, t)?;
        for (slot, &i) in occ.iter_mut().zip(&window) {
            *slot = st.eta[i];
        }
        acc += g(&occ);
    }
    Ok(acc / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainShape, SlabDomain};

    fn unit_lat(n: u32, range: i64) -> LatticeDomain {
        let shape = DomainShape::Slab(SlabDomain::axis_aligned(1, 0, 0.0, 1.0).unwrap());
        LatticeDomain::discretize(shape, n, 0.0, range).unwrap()
    }

    fn k3() -> ModelSpec {
        ModelSpec::misanthrope_k3(JumpKernel::delta(1, [1, 0, 0]).unwrap())
    }

    fn ov() -> ModelSpec {
        ModelSpec::overtaking_1d(&[2.0, 1.0], &[1.0]).unwrap()
    }

    #[test]
    fn identical_seeds_reproduce_runs() {
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(16, 1);
        lat.set_reservoirs(1.0, 0.7, 0.2).unwrap();
        let mk = || init_from_profile(&spec, &lat, |_| 0.4, stream(11, &[3])).unwrap();
        let (mut a, mut b) = (mk(), mk());
        assert_eq!(a.eta, b.eta);
        run(&mut a, &spec, &lat, 1.0).unwrap();
        run(&mut b, &spec, &lat, 1.0).unwrap();
        assert_eq!(a.eta, b.eta);
        assert_eq!(a.ledger(), b.ledger());
        assert_eq!(a.t_macro(), b.t_macro());
        assert_eq!(uniform(&mut a.rng), uniform(&mut b.rng));
    }

    #[test]
    fn ledger_reconciles_particle_count_exactly() {
        for (spec, range) in [(k3(), 1i64), (ov(), 2i64)] {
            let mut lat = unit_lat(24, range);
            lat.set_reservoirs(spec.k_max(), 0.6, 0.2).unwrap();
            let mut st = init_from_profile(&spec, &lat, |_| 0.4, stream(5, &[1])).unwrap();
            let before = st.total_particles() as i64;
            run(&mut st, &spec, &lat, 2.0).unwrap();
            let led = st.ledger();
            assert!(led.events > 100, "only {} events", led.events);
            assert_eq!(led.events, led.jumps + led.births + led.deaths);
            assert_eq!(st.total_particles() as i64 - before, led.net_inflow());
        }
    }

    #[test]
    fn single_site_matches_two_state_law() {
        // One site, entry rate la (1 - eta), exit rate eta (1 - lb):
        // stationary P(eta = 1) = la / (la + 1 - lb).
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(2, 1);
        assert_eq!(lat.sites().len(), 1);
        lat.set_reservoirs(1.0, 0.3, 0.4).unwrap();
        let mut st = init_from_profile(&spec, &lat, |_| 0.0, stream(2, &[0])).unwrap();
        run(&mut st, &spec, &lat, 20.0).unwrap();
        let means = run_time_averaged(&mut st, &spec, &lat, 20.0 + 12800.0).unwrap();
        let exact = 0.3 / (0.3 + 1.0 - 0.4);
        assert!(
            (means[0] - exact).abs() < 0.025,
            "time average {} vs exact {exact}",
            means[0]
        );
    }

    #[test]
    fn time_average_matches_event_integration() {
        // The lazy averager must agree exactly with integrating the same
        // event sequence by hand (the rng draws are identical).
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(8, 1);
        lat.set_reservoirs(1.0, 0.8, 0.3).unwrap();
        let st0 = init_from_profile(&spec, &lat, |_| 0.5, stream(9, &[7])).unwrap();
        let mut a = st0.clone();
        let means = run_time_averaged(&mut a, &spec, &lat, 5.0).unwrap();

        let mut b = st0.clone();
        let mut shadow: Vec<u32> = st0.eta().to_vec();
        let mut acc = vec![0.0f64; shadow.len()];
        let mut mark = vec![0.0f64; shadow.len()];
        run_with(&mut b, &spec, &lat, 5.0, u64::MAX, |t, kind| {
            let mut touch = |i: u32, delta: i32| {
                let i = i as usize;
                acc[i] += shadow[i] as f64 * (t - mark[i]);
                mark[i] = t;
                shadow[i] = (shadow[i] as i32 + delta) as u32;
            };
            match kind {
                EventKind::Jump { from, to } => {
                    touch(from, -1);
                    touch(to, 1);
                }
                EventKind::Birth { at } => touch(at, 1),
                EventKind::Death { from } => touch(from, -1),
            }
        })
        .unwrap();
        assert_eq!(shadow, b.eta);
        for i in 0..shadow.len() {
            let manual = (acc[i] + shadow[i] as f64 * (5.0 - mark[i])) / 5.0;
            assert!((manual - means[i]).abs() < 1e-12, "site {i}: {manual} vs {}", means[i]);
        }
    }

    /// Reference conditional event law for 3-site TASEP, straight from the
    /// generator: entry at rate la (1 - eta_0), exit at eta_2 (1 - lb),
    /// bulk jumps at eta_i (1 - eta_{i+1}).
    fn tasep3_rates(cfg: [u32; 3], la: f64, lb: f64) -> Vec<(EventKind, f64)> {
        let mut out = Vec::new();
        let push = |v: &mut Vec<(EventKind, f64)>, k, w: f64| {
            if w > 0.0 {
                v.push((k, w));
            }
        };
        push(&mut out, EventKind::Birth { at: 0 }, la * (1.0 - cfg[0] as f64));
        push(
            &mut out,
            EventKind::Jump { from: 0, to: 1 },
            cfg[0] as f64 * (1.0 - cfg[1] as f64),
        );
        push(
            &mut out,
            EventKind::Jump { from: 1, to: 2 },
            cfg[1] as f64 * (1.0 - cfg[2] as f64),
        );
        push(&mut out, EventKind::Death { from: 2 }, cfg[2] as f64 * (1.0 - lb));
        out
    }

    fn frequency_check(
        visits: &BTreeMap<u8, u64>,
        counts: &BTreeMap<(u8, EventKind), u64>,
        rates_of: impl Fn(u8) -> Vec<(EventKind, f64)>,
    ) {
        let mut tested = 0;
        for (&cfg, &n) in visits {
            if n < 400 {
                continue;
            }
            let rates = rates_of(cfg);
            let total: f64 = rates.iter().map(|r| r.1).sum();
            let mut listed = 0u64;
            for &(kind, w) in &rates {
                let p = w / total;
                let got = counts.get(&(cfg, kind)).copied().unwrap_or(0);
                listed += got;
                let freq = got as f64 / n as f64;
                let bound = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
                assert!(
                    (freq - p).abs() <= bound,
                    "cfg {cfg:03b} kind {kind:?}: freq {freq} vs p {p} (n = {n})"
                );
                tested += 1;
            }
            // No event may occur that the generator does not list.
            let all: u64 = counts
                .iter()
                .filter(|((c, _), _)| *c == cfg)
                .map(|(_, &v)| v)
                .sum();
            assert_eq!(all, listed, "unlisted event from cfg {cfg:03b}");
        }
        assert!(tested >= 8, "too few configurations visited");
    }

    #[test]
    fn small_sep_transition_frequencies_match_generator() {
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(4, 1);
        lat.set_reservoirs(1.0, 0.6, 0.3).unwrap();
        let mut st = init_from_profile(&spec, &lat, |_| 0.5, stream(21, &[0])).unwrap();
        let mut shadow = [st.eta[0], st.eta[1], st.eta[2]];
        let mut visits: BTreeMap<u8, u64> = BTreeMap::new();
        let mut counts: BTreeMap<(u8, EventKind), u64> = BTreeMap::new();
        let encode = |c: &[u32; 3]| (c[0] | c[1] << 1 | c[2] << 2) as u8;
        run_with(&mut st, &spec, &lat, f64::INFINITY, 100_000, |_, kind| {
            let cfg = encode(&shadow);
            *visits.entry(cfg).or_default() += 1;
            *counts.entry((cfg, kind)).or_default() += 1;
            match kind {
                EventKind::Jump { from, to } => {
                    shadow[from as usize] -= 1;
                    shadow[to as usize] += 1;
                }
                EventKind::Birth { at } => shadow[at as usize] += 1,
                EventKind::Death { from } => shadow[from as usize] -= 1,
            }
        })
        .unwrap();
        assert_eq!(&shadow[..], st.eta());
        frequency_check(&visits, &counts, |cfg| {
            tasep3_rates([cfg as u32 & 1, (cfg as u32 >> 1) & 1, (cfg as u32 >> 2) & 1], 0.6, 0.3)
        });
    }

    /// Independent overtaking generator: enumerate every move from every
    /// cell by the path-product formula and keep those that change the
    /// domain, aggregated by effect.
    fn ov_rates(lat: &LatticeDomain, rates: &OvertakingRates, cfg: &[u32]) -> Vec<(EventKind, f64)> {
        let w = |s: Site| -> f64 {
            match lat.cell(s) {
                CellKind::Interior(j) => cfg[j as usize] as f64,
                CellKind::Shell(k) => lat.lambda(k),
                CellKind::Outside => 0.0,
            }
        };
        let mut agg: BTreeMap<EventKind, f64> = BTreeMap::new();
        let cells: Vec<Site> = lat.sites().iter().chain(lat.shell()).copied().collect();
        for &x in &cells {
            for dir in AxisDir::all(1) {
                let step = dir.step();
                for j in 1..=rates.max_j() {
                    let beta = rates.beta(dir, j);
                    if beta == 0.0 {
                        continue;
                    }
                    let mut rate = beta;
                    for k in 0..j {
                        rate *= w(site_addk(x, k, step));
                    }
                    rate *= 1.0 - w(site_addk(x, j, step));
                    if rate <= 0.0 {
                        continue;
                    }
                    let kind = match (lat.site_index(x), lat.site_index(site_addk(x, j, step))) {
                        (Some(a), Some(b)) => EventKind::Jump { from: a, to: b },
                        (None, Some(b)) => EventKind::Birth { at: b },
                        (Some(a), None) => EventKind::Death { from: a },
                        (None, None) => continue,
                    };
                    *agg.entry(kind).or_default() += rate;
                }
            }
        }
        agg.into_iter().collect()
    }

    #[test]
    fn small_overtaking_frequencies_match_generator() {
        let spec = ov();
        let rates = spec.as_overtaking().unwrap();
        let mut lat = unit_lat(4, 2);
        lat.set_reservoirs(1.0, 0.5, 0.25).unwrap();
        let mut st = init_from_profile(&spec, &lat, |_| 0.5, stream(23, &[0])).unwrap();
        let mut shadow: Vec<u32> = st.eta().to_vec();
        let mut visits: BTreeMap<u8, u64> = BTreeMap::new();
        let mut counts: BTreeMap<(u8, EventKind), u64> = BTreeMap::new();
        let encode = |c: &[u32]| (c[0] | c[1] << 1 | c[2] << 2) as u8;
        run_with(&mut st, &spec, &lat, f64::INFINITY, 100_000, |_, kind| {
            let cfg = encode(&shadow);
            *visits.entry(cfg).or_default() += 1;
            *counts.entry((cfg, kind)).or_default() += 1;
            match kind {
                EventKind::Jump { from, to } => {
                    shadow[from as usize] -= 1;
                    shadow[to as usize] += 1;
                }
                EventKind::Birth { at } => shadow[at as usize] += 1,
                EventKind::Death { from } => shadow[from as usize] -= 1,
            }
        })
        .unwrap();
        assert_eq!(shadow, st.eta);
        frequency_check(&visits, &counts, |cfg| {
            let c = [cfg as u32 & 1, (cfg as u32 >> 1) & 1, (cfg as u32 >> 2) & 1];
            ov_rates(&lat, rates, &c)
        });
    }

    #[test]
    fn equal_coupling_stays_identical() {
        for (spec, range) in [(ModelSpec::tasep(), 1i64), (ov(), 2i64)] {
            let mut lat = unit_lat(16, range);
            lat.set_reservoirs(1.0, 0.5, 0.5).unwrap();
            let mut cs =
                init_coupled(&spec, &lat, |_| 0.4, |_| 0.4, stream(31, &[2])).unwrap();
            assert_eq!(cs.eta(), cs.xi());
            run_coupled(&mut cs, &spec, &lat, 0.5, 3.0).unwrap();
            assert_eq!(cs.eta(), cs.xi());
            let (le, lx) = cs.ledgers();
            assert_eq!(le, lx);
            assert!(le.events > 50);
        }
    }

    #[test]
    fn coupling_preserves_order_and_dominates() {
        // Ordered start, dominated reservoirs: the engine asserts order at
        // every event, and the positive Kruzkov part stays zero.
        let cases: [(ModelSpec, i64, f64, f64, f64, f64, f64); 2] = [
            (k3(), 1, 0.8, 1.4, 2.0, 0.5, 2.0),
            (ov(), 2, 0.3, 0.6, 0.8, 0.2, 0.8),
        ];
        for (spec, range, la, lb, c, lo, hi) in cases {
            let mut lat = unit_lat(24, range);
            lat.set_reservoirs(spec.k_max(), la, lb).unwrap();
            let mut cs = init_coupled(&spec, &lat, |_| lo, |_| hi, stream(37, &[4])).unwrap();
            assert!(cs.ordered());
            for step in 1..=4 {
                run_coupled(&mut cs, &spec, &lat, c, 0.5 * step as f64).unwrap();
                assert!(cs.ordered());
                assert_eq!(kruzkov_monitor(&cs, &lat, |_| 1.0, true), 0.0);
            }
            let (le, lx) = cs.ledgers();
            assert!(le.events > 100 && lx.events > 100);
        }
    }

    #[test]
    fn xi_marginal_is_the_uniform_reservoir_process() {
        // The second coupled copy starts from the product measure at c with
        // a uniform reservoir at c, so its law is stationary: every site
        // keeps mean occupancy c at all times.
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(8, 1);
        lat.set_reservoirs(1.0, 0.9, 0.1).unwrap();
        let c = 0.5;
        let reps: u64 = 800;
        let mut mean_xi = 0.0;
        for r in 0..reps {
            let mut cs =
                init_coupled(&spec, &lat, |_| 0.3, |_| c, stream(101, &[r])).unwrap();
            run_coupled(&mut cs, &spec, &lat, c, 1.5).unwrap();
            mean_xi += cs.xi().iter().map(|&v| v as f64).sum::<f64>() / cs.xi().len() as f64;
        }
        mean_xi /= reps as f64;
        assert!((mean_xi - c).abs() < 0.04, "xi mean {mean_xi} vs c {c}");

        // Cross-check against the plain single-copy process at reservoir c.
        let mut lat_c = unit_lat(8, 1);
        lat_c.set_reservoirs(1.0, c, c).unwrap();
        let mut mean_single = 0.0;
        for r in 0..reps {
            let mut st = init_from_profile(&spec, &lat_c, |_| c, stream(102, &[r])).unwrap();
            run(&mut st, &spec, &lat_c, 1.5).unwrap();
            mean_single +=
                st.eta().iter().map(|&v| v as f64).sum::<f64>() / st.eta().len() as f64;
        }
        mean_single /= reps as f64;
        assert!(
            (mean_xi - mean_single).abs() < 0.05,
            "coupled xi {mean_xi} vs single {mean_single}"
        );
    }

    #[test]
    fn init_concentration_and_step_profile() {
        let spec = ModelSpec::tasep();
        let lat = unit_lat(1000, 1);
        let st = init_from_profile(&spec, &lat, |_| 0.5, stream(55, &[0])).unwrap();
        let total = st.total_particles() as f64;
        // Binomial(999, 1/2): four standard deviations.
        assert!((total - 499.5).abs() < 4.0 * (999.0f64 * 0.25).sqrt());

        let step = |p: Vecf| if p[0] < 0.5 { 0.9 } else { 0.2 };
        let st = init_from_profile(&spec, &lat, step, stream(55, &[1])).unwrap();
        let prof = empirical_density(&lat, st.eta(), 0.5).unwrap();
        assert_eq!(prof.values().len(), 2);
        assert!((prof.values()[0] - 0.9).abs() < 0.06);
        assert!((prof.values()[1] - 0.2).abs() < 0.06);
        // Mass identity is exact.
        assert!((prof.mass() - total_mass(&lat, st.eta())).abs() < 1e-12);
    }

    fn total_mass(lat: &LatticeDomain, eta: &[u32]) -> f64 {
        let mut norm = 1.0;
        for _ in 0..lat.d() {
            norm /= lat.n_scale() as f64;
        }
        eta.iter().map(|&v| v as f64 * norm).sum()
    }

    #[test]
    fn empirical_density_bounds_and_errors() {
        let spec = ModelSpec::tasep();
        let lat = unit_lat(40, 1);
        let st = init_from_profile(&spec, &lat, |_| 1.0, stream(1, &[0])).unwrap();
        let prof = empirical_density(&lat, st.eta(), 0.25).unwrap();
        assert!(prof.values().iter().all(|&v| v == 1.0));
        assert_eq!(prof.counts().iter().sum::<u32>() as usize, lat.sites().len());
        assert!(empirical_density(&lat, st.eta(), 0.01).is_err());
    }

    #[test]
    fn kruzkov_monitor_counts_discrepancies() {
        let spec = ModelSpec::tasep();
        let lat = unit_lat(10, 1);
        let n_sites = lat.sites().len();
        let eta = vec![1u32; n_sites];
        let mut xi = vec![1u32; n_sites];
        let cs = CoupledState::new(&spec, &lat, eta.clone(), xi.clone(), stream(0, &[])).unwrap();
        assert_eq!(kruzkov_monitor(&cs, &lat, |_| 1.0, true), 0.0);
        assert_eq!(kruzkov_monitor(&cs, &lat, |_| 1.0, false), 0.0);
        // One extra particle in xi at site 3: minus part phi / N.
        xi[3] = 1;
        let mut eta2 = eta;
        eta2[3] = 0;
        let cs = CoupledState::new(&spec, &lat, eta2, xi, stream(0, &[])).unwrap();
        let phi = |p: Vecf| p[0];
        let expect = lat.macro_point(lat.site(3))[0] / 10.0;
        assert!((kruzkov_monitor(&cs, &lat, phi, false) - expect).abs() < 1e-15);
        assert_eq!(kruzkov_monitor(&cs, &lat, phi, true), 0.0);
    }

    #[test]
    fn stationary_bulk_matches_boundary_extremum() {
        let spec = ModelSpec::tasep();
        // Low-density phase: bulk at the left reservoir density.
        let mut lat = unit_lat(128, 1);
        lat.set_reservoirs(1.0, 0.2, 0.6).unwrap();
        let est = stationary_profile(&spec, &lat, 6.0, 18.0, 4, 0.125, 77, 0).unwrap();
        assert!(!est.nonstationary);
        assert!((est.bulk - 0.2).abs() < 0.03, "LD bulk {}", est.bulk);
        assert!(est.profile.stderr().is_some());

        // Maximal-current phase: bulk at the flux maximizer 1/2.
        lat.set_reservoirs(1.0, 0.8, 0.2).unwrap();
        let est = stationary_profile(&spec, &lat, 6.0, 18.0, 4, 0.125, 77, 1).unwrap();
        assert!((est.bulk - 0.5).abs() < 0.05, "MC bulk {}", est.bulk);
    }

    #[test]
    fn equal_reservoirs_give_flat_profile() {
        // With both reservoirs at the same density the product measure is
        // invariant, so the profile is flat at that density.
        let spec = k3();
        let mut lat = unit_lat(96, 1);
        lat.set_reservoirs(3.0, 0.7, 0.7).unwrap();
        let est = stationary_profile(&spec, &lat, 2.0, 26.0, 4, 0.25, 13, 0).unwrap();
        assert!(!est.nonstationary);
        for (k, &v) in est.profile.values().iter().enumerate() {
            assert!((v - 0.7).abs() < 0.05, "cell {k} at {v}");
        }
    }

    #[test]
    fn transient_window_raises_flag() {
        // Low-density reservoirs drain the interpolating start (mean 0.4)
        // towards the flat 0.2 profile; an early window catches the drift.
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(128, 1);
        lat.set_reservoirs(1.0, 0.2, 0.6).unwrap();
        let est = stationary_profile(&spec, &lat, 0.0, 0.6, 8, 0.125, 99, 0).unwrap();
        assert!(est.nonstationary);
    }

    #[test]
    fn local_probe_reads_stationary_statistics() {
        let spec = ModelSpec::tasep();
        let mut lat = unit_lat(64, 1);
        lat.set_reservoirs(1.0, 0.2, 0.6).unwrap();
        let x = [0.5, 0.0, 0.0];
        let density = local_equilibrium_probe(
            &spec,
            &lat,
            x,
            &[[0, 0, 0]],
            |w| w[0] as f64,
            8.0,
            108.0,
            2000,
            stream(301, &[0]),
        )
        .unwrap();
        assert!((density - 0.2).abs() < 0.05, "probe density {density}");
        let pair = local_equilibrium_probe(
            &spec,
            &lat,
            x,
            &[[0, 0, 0], [1, 0, 0]],
            |w| (w[0] * w[1]) as f64,
            8.0,
            108.0,
            2000,
            stream(301, &[1]),
        )
        .unwrap();
        assert!((pair - 0.04).abs() < 0.05, "pair probe {pair}");
        // Window escaping the domain is rejected.
        assert!(local_equilibrium_probe(
            &spec,
            &lat,
            [0.99, 0.0, 0.0],
            &[[0, 0, 0], [5, 0, 0]],
            |w| w[0] as f64,
            1.0,
            2.0,
            10,
            stream(301, &[2]),
        )
        .is_err());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let spec = ModelSpec::tasep();
        let lat = unit_lat(10, 1);
        assert!(matches!(
            init_from_profile(&spec, &lat, |_| 1.5, stream(0, &[])),
            Err(Error::DensityOutOfRange { .. })
        ));
        assert!(init_coupled(&spec, &lat, |_| 0.7, |_| 0.3, stream(0, &[])).is_err());
        // Overtaking with range 2 on a shell built for range 1.
        let mut st = init_from_profile(&ov(), &unit_lat(10, 2), |_| 0.3, stream(0, &[])).unwrap();
        assert!(matches!(run(&mut st, &ov(), &lat, 1.0), Err(Error::BadDomain(_))));
        // Out-of-range uniform reservoir for the coupled copy.
        let mut cs = init_coupled(&spec, &lat, |_| 0.3, |_| 0.5, stream(0, &[])).unwrap();
        assert!(run_coupled(&mut cs, &spec, &lat, 1.5, 1.0).is_err());
    }
}
