//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

/// Errors reported by construction and solver entry points.
///
/// Statistical diagnostics (stationarity flags, entropy residuals, order
/// violations) are not errors; they are carried in the respective reports.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Chemical potential outside the admissible range of the model.
    BetaOutOfRange {
        /// Requested value.
        beta: f64,
    },
    /// The grand-canonical normalizer diverges at the requested parameter.
    DivergentNormalizer {
        /// Requested value.
        beta: f64,
    },
    /// Density outside the achievable range `[0, K]` (or `[0, sup R)`).
    DensityOutOfRange {
        /// Requested value.
        rho: f64,
    },
    /// A reservoir field value is outside `[0, K]`.
    ReservoirOutOfRange {
        /// Offending value.
        value: f64,
    },
    /// Model failed structural validation; the report lists the findings.
    InvalidModel(String),
    /// Lattice discretization produced no interior sites.
    EmptyDomain,
    /// Domain or lattice parameters are inconsistent.
    BadDomain(String),
    /// CFL number outside `(0, 0.9]`, or the derived time step is invalid.
    CflViolation {
        /// Requested CFL number.
        cfl: f64,
    },
    /// Initial or boundary datum outside `[0, K]`.
    DataOutOfRange {
        /// Offending value.
        value: f64,
    },
    /// Initial datum for a slab solve varies on hyperplanes `{n.x = const}`.
    NonSlabDatum,
    /// A stationary-profile value does not belong to the extremizer set.
    ProfileValueNotExtremal {
        /// Offending value.
        value: f64,
    },
    /// Stationary-profile values violate the required monotone order.
    ProfileOrderViolation {
        /// Earlier piece value.
        lo: f64,
        /// Later piece value.
        hi: f64,
    },
    /// The coupled engine produced `eta > xi` at a site: a coupling bug,
    /// since the basic coupling preserves the componentwise order.
    OrderViolation {
        /// Dense site index where the order broke.
        site: u32,
    },
    /// Truncation tail exceeds the tolerated fraction of a flux sum.
    TruncationTail,
    /// Total event rate overflowed (misconfigured unbounded rate table).
    RateOverflow,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::BetaOutOfRange { beta } => write!(f, "beta {beta} out of admissible range"),
            Error::DivergentNormalizer { beta } => {
                write!(f, "normalizer series diverges at beta {beta}")
            }
            Error::DensityOutOfRange { rho } => write!(f, "density {rho} out of range"),
            Error::ReservoirOutOfRange { value } => {
                write!(f, "reservoir density {value} out of range")
            }
            Error::InvalidModel(what) => write!(f, "invalid model: {what}"),
            Error::EmptyDomain => write!(f, "lattice domain has no interior sites"),
            Error::BadDomain(what) => write!(f, "bad domain: {what}"),
            Error::CflViolation { cfl } => write!(f, "CFL number {cfl} not in (0, 0.9]"),
            Error::DataOutOfRange { value } => write!(f, "datum value {value} out of range"),
            Error::NonSlabDatum => write!(f, "initial datum not constant on slab hyperplanes"),
            Error::ProfileValueNotExtremal { value } => {
                write!(f, "profile value {value} not in the extremizer set")
            }
            Error::ProfileOrderViolation { lo, hi } => {
                write!(f, "profile pieces {lo} then {hi} violate the monotone order")
            }
            Error::OrderViolation { site } => {
                write!(f, "coupled order violated at site index {site}")
            }
            Error::TruncationTail => write!(f, "truncation tail exceeds tolerance"),
            Error::RateOverflow => write!(f, "total event rate overflow"),
        }
    }
}
