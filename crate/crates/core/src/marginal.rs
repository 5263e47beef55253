//! Single-site equilibrium marginals and their monotone coupling.
//!
//! For a misanthrope table with ratio `q(n) = b(n, 0) / b(1, n - 1)` the
//! product equilibria have single-site weights `theta_beta(n) proportional to
//! beta^n / (q(1) ... q(n))` over the admissible occupancies, with fugacity
//! `beta` in `[0, q_sup)`. The mean `R(beta)` is smooth and strictly
//! increasing, so densities parameterize the family; `rho = K` under a finite
//! cap is the degenerate limit `delta_K`.
//!
//! Two marginals with densities `rho <= c` are coupled monotonically by the
//! shared-uniform construction `(F_rho^{-1}(U), F_c^{-1}(U))`, which is what
//! the coupled reservoirs of the two-copy processes sample from.

use alloc::vec::Vec;

use crate::model::{Cap, ModelSpec};
use crate::{Error, Result};

/// Relative tail mass at which the unbounded series is truncated.
const TAIL_REL: f64 = 1e-14;
/// Hard ceiling on stored occupancies for unbounded models.
const TERM_CAP: usize = 100_000;

/// Single-site equilibrium marginal: probabilities over `0..=k_eff`.
#[derive(Clone, Debug)]
pub struct SiteMarginal {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
    beta: f64,
}

impl SiteMarginal {
    fn from_weights(mut weights: Vec<f64>, beta: f64) -> Self {
        let sum: f64 = weights.iter().sum();
        debug_assert!(sum > 0.0 && sum.is_finite());
        for w in &mut weights {
            *w /= sum;
        }
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        let mut mean = 0.0;
        for (n, &p) in weights.iter().enumerate() {
            acc += p;
            cdf.push(acc);
            mean += n as f64 * p;
        }
        // The running sum ends within rounding of 1; pin it so inverse-CDF
        // sampling with u close to 1 cannot fall off the support.
        let drift = (acc - 1.0).abs();
        debug_assert!(drift < 1e-12, "cdf drift {drift}");
        *cdf.last_mut().unwrap() = 1.0;
        Self { probs: weights, cdf, mean, beta }
    }

    /// Probabilities `P(n)` for `n = 0..=k_eff`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `P(n)`, zero beyond the stored support.
    pub fn prob(&self, n: u32) -> f64 {
        self.probs.get(n as usize).copied().unwrap_or(0.0)
    }

    /// Cumulative distribution `F(n)`; final entry is exactly 1.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Mean occupancy.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Fugacity that produced this marginal (`+inf` for the degenerate cap
    /// marginal).
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Largest stored occupancy.
    pub fn k_eff(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    /// Inverse-CDF sample: smallest `n` with `F(n) >= u`, for `u` in `[0, 1]`.
    pub fn sample(&self, u: f64) -> u32 {
        // Support is tiny for capped models; partition_point keeps the
        // unbounded case cheap too.
        self.cdf.partition_point(|&f| f < u) as u32
    }
}

/// Marginal at fugacity `beta` for the model's occupancy structure.
///
/// Requires `beta >= 0`; for unbounded models also `beta < q_sup` (otherwise
/// the series diverges) and truncates once the remaining tail is below
/// `1e-14` of the accumulated mass, using the geometric bound
/// `tail <= t_n * r / (1 - r)` with `r = beta / q(n + 1)`.
pub fn marginal_from_beta(beta: f64, spec: &ModelSpec) -> Result<SiteMarginal> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::BetaOutOfRange { beta });
    }
    match spec.cap() {
        Cap::Finite(k) => {
            let mut weights = Vec::with_capacity((k + 1) as usize);
            let mut t = 1.0f64;
            weights.push(t);
            for n in 1..=k {
                let q = spec.q(n);
                debug_assert!(q > 0.0, "q({n}) = {q} under a finite cap");
                t *= beta / q;
                weights.push(t);
            }
            // Rescale against overflow for large beta before normalizing.
            let m = weights.iter().cloned().fold(0.0, f64::max);
            if !m.is_finite() {
                return Err(Error::BetaOutOfRange { beta });
            }
            for w in &mut weights {
                *w /= m;
            }
            Ok(SiteMarginal::from_weights(weights, beta))
        }
        Cap::Unbounded => {
            let q_sup = spec.q_sup();
            if beta >= q_sup {
                return Err(Error::DivergentNormalizer { beta });
            }
            let mut weights = Vec::new();
            let mut t = 1.0f64;
            let mut sum = 0.0f64;
            weights.push(t);
            sum += t;
            for n in 1..=TERM_CAP as u32 {
                t *= beta / spec.q(n);
                weights.push(t);
                sum += t;
                let r = beta / spec.q(n + 1);
                if r < 1.0 {
                    let tail = t * r / (1.0 - r);
                    if tail < TAIL_REL * sum {
                        return Ok(SiteMarginal::from_weights(weights, beta));
                    }
                }
            }
            Err(Error::DivergentNormalizer { beta })
        }
    }
}

/// Mean occupancy at fugacity `beta`.
pub fn density_of_beta(beta: f64, spec: &ModelSpec) -> Result<f64> {
    Ok(marginal_from_beta(beta, spec)?.mean())
}

/// Inverts the density map: finds `beta` with `|R(beta) - rho| < 1e-10` by
/// bisection, growing the bracket geometrically (toward `q_sup` for
/// unbounded models).
///
/// `rho` must lie in `[0, K)` for a finite cap, `[0, +inf)` otherwise (the
/// degenerate density `rho = K` has no finite fugacity; see
/// [`marginal_for_density`]).
pub fn density_to_beta(rho: f64, spec: &ModelSpec) -> Result<f64> {
    const TOL: f64 = 1e-10;
    if !(rho >= 0.0) || !rho.is_finite() || rho >= spec.k_max() {
        return Err(Error::DensityOutOfRange { rho });
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let q_sup = spec.q_sup();
    let mut lo = 0.0f64;
    let mut hi = if q_sup.is_finite() { 0.5 * q_sup } else { 1.0 };
    let mut grow = 0;
    while density_of_beta(hi, spec)? < rho {
        lo = hi;
        hi = if q_sup.is_finite() { 0.5 * (hi + q_sup) } else { hi * 2.0 };
        grow += 1;
        if grow > 200 {
            return Err(Error::DensityOutOfRange { rho });
        }
    }
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let r = density_of_beta(mid, spec)?;
        if (r - rho).abs() < TOL {
            return Ok(mid);
        }
        if r < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The mean is strictly increasing and smooth, so 500 halvings exhaust
    // f64 resolution; landing here means the tolerance itself is
    // unattainable at this density.
    Err(Error::DensityOutOfRange { rho })
}

/// Marginal with mean `rho`. For a finite cap, `rho = K` yields the
/// degenerate point mass at `K` (fugacity `+inf`).
pub fn marginal_for_density(rho: f64, spec: &ModelSpec) -> Result<SiteMarginal> {
    if let Cap::Finite(k) = spec.cap() {
        if rho == k as f64 {
            let mut probs = alloc::vec![0.0; (k + 1) as usize];
            probs[k as usize] = 1.0;
            return Ok(SiteMarginal::from_weights(probs, f64::INFINITY));
        }
    }
    let beta = density_to_beta(rho, spec)?;
    marginal_from_beta(beta, spec)
}

/// Monotone coupling of two marginals of the same model.
#[derive(Clone, Debug)]
pub struct CoupledMarginal {
    joint: Vec<f64>,
    ncols: usize,
    lower: SiteMarginal,
    upper: SiteMarginal,
}

impl CoupledMarginal {
    /// Joint probability `P(n, m)`; `n` indexes the lower-density marginal.
    pub fn joint(&self, n: u32, m: u32) -> f64 {
        let (rows, cols) = (self.joint.len() / self.ncols, self.ncols);
        if (n as usize) < rows && (m as usize) < cols {
            self.joint[n as usize * cols + m as usize]
        } else {
            0.0
        }
    }

    /// Marginal of the lower-density component.
    pub fn lower(&self) -> &SiteMarginal {
        &self.lower
    }

    /// Marginal of the higher-density component.
    pub fn upper(&self) -> &SiteMarginal {
        &self.upper
    }

    /// Shared-uniform sample `(F_lo^{-1}(u), F_hi^{-1}(u))`; always ordered.
    pub fn sample_pair(&self, u: f64) -> (u32, u32) {
        (self.lower.sample(u), self.upper.sample(u))
    }
}

/// Builds the monotone coupling of the marginals at densities
/// `rho_lo <= rho_hi`.
///
/// The joint table is the distribution of `(F_lo^{-1}(U), F_hi^{-1}(U))` for
/// uniform `U`, assembled exactly by sweeping the merged CDF breakpoints; it
/// has both prescribed marginals and is supported on `{n <= m}`.
pub fn coupled_marginal(rho_lo: f64, rho_hi: f64, spec: &ModelSpec) -> Result<CoupledMarginal> {
    if !(rho_lo <= rho_hi) {
        return Err(Error::DensityOutOfRange { rho: rho_lo });
    }
    let lower = marginal_for_density(rho_lo, spec)?;
    let upper = marginal_for_density(rho_hi, spec)?;
    let rows = lower.probs().len();
    let cols = upper.probs().len();
    let mut joint = alloc::vec![0.0; rows * cols];
    let mut cuts: Vec<f64> = lower.cdf().iter().chain(upper.cdf()).cloned().collect();
    cuts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut prev = 0.0f64;
    for &v in &cuts {
        let mass = v - prev;
        if mass > 0.0 {
            // On (prev, v] both inverse CDFs are constant; evaluate at v.
            let n = lower.sample(v) as usize;
            let m = upper.sample(v) as usize;
            joint[n * cols + m] += mass;
        }
        prev = v;
    }
    Ok(CoupledMarginal { joint, ncols: cols, lower, upper })
}
