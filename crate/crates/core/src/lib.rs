//! Open-boundary attractive lattice gases and their conservation-law limits.
//!
//! This crate implements both sides of a micro/macro correspondence for
//! attractive lattice gases driven by boundary reservoirs, plus the tooling
//! needed to cross-validate them numerically:
//!
//! * **Microscopic side**: misanthrope-type dynamics (a particle jumps from
//!   `x` to `y` at rate `p(y-x) b(eta(x), eta(y))`) and exclusion with
//!   overtaking (a particle jumps over a block of `j-1` occupied sites at
//!   rate `beta_j`), on lattice slabs with frozen-equilibrium reservoirs
//!   outside the domain. An exact event-driven CTMC engine simulates single
//!   or coupled copies; the basic coupling preserves the componentwise order
//!   of configurations, which is asserted per event.
//! * **Macroscopic side**: the hydrodynamic limit under Euler scaling is a
//!   scalar conservation law `rho_t + div h(rho) = 0` with Bardos-LeRoux-
//!   Nedelec boundary data, solved here by a Godunov finite-volume scheme
//!   and audited a posteriori against the Kruzkov entropy inequality.
//! * **Hydrostatics**: the stationary bulk density is the extremum of the
//!   flux over the (flat-segment adjusted) interval of boundary densities;
//!   this crate classifies phases (LD/HD/MC/mC/coexistence), counts phase
//!   regions, builds stationary profiles, and predicts density bands on
//!   perturbed slab domains.
//!
//! The crate is `no_std + alloc`; everything that needs files, threads or a
//! CLI lives in the companion crate `latgas-cli`.

#![cfg_attr(not(test), no_std)]
#![warn(missing_docs)]

extern crate alloc;

pub mod error;
pub mod fenwick;
pub mod flux;
pub mod geometry;
pub mod hydrostatics;
pub mod marginal;
pub mod model;
pub mod pde;
pub mod rng;
pub mod sim;

pub use error::Error;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
