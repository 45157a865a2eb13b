//! Numerical toolkit for expanding circle maps with an indifferent fixed point.
//!
//! The crate is organised bottom-up:
//!
//! - [`map`]: the maps `T(x) = x(1 + V(x)) mod 1`, their inverse branches,
//!   paired pre-orbits and the non-uniform expansion estimates.
//! - [`moduli`]: moduli of continuity, orderly vanishing, the sufficient
//!   condition for dynamical compatibility and empirical compatibility
//!   certificates.
//! - [`transfer`]: the transfer operator on a grid, its leading eigendata and
//!   the normalized potential.
//! - [`spectral`]: the `θ(n)`/`τ(n)` sequences, the pointwise
//!   Doeblin-Fortet-Lasota-Yorke check and spectral gap estimates.
//! - [`stats`]: decay of correlations, exponential fits, the empirical central
//!   limit theorem and the strong mixing check.

pub mod error;
pub mod fit;
pub mod map;
pub mod moduli;
pub mod observable;
pub mod spectral;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
pub use map::{circle_dist, CircleMap, PairedPreorbit, ProfileFamily, VelocityProfile};
pub use moduli::{CompatibilityCertificate, Modulus, ModulusFamily};
pub use observable::{Grid, Observable};
pub use transfer::{Potential, PotentialSpec, RpfData, TransferOperator};
