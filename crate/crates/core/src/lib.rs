//! Discretized normal approximation for sums of locally dependent
//! non-negative integer random variables.
//!
//! The law of `W = sum X_i` is bridged to a discretized normal through one of
//! three intermediate families whose first three factorial cumulants are
//! matched to those of `W`:
//!
//! * `M1 = B(n, p) * P(lambda)` when `Gamma_2 << 0`,
//! * `M2 = NB(r, p) * P(lambda)` when `Gamma_2 >> 0`,
//! * `M3 = P(lambda) * 2P(omega/2) * 3P(eta/3)` when `Gamma_2 ~ 0`.
//!
//! Modules:
//! * [`distributions`]: truncated PMFs, convolution, closed-form cumulants.
//! * [`cumulants`]: moment/cumulant conversion, matching solvers, family choice.
//! * [`metrics`]: total variation, local distance, second differences, empirical laws.
//! * [`stein`]: Stein operators, the Stein equation solver and solution bounds.
//! * [`localdep`]: dependency neighbourhoods, exact enumeration, `gamma`, `S(W)`, `G1`, `G2`.
//! * [`models`]: hypercube sinks, birthday problem, monochromatic edges, triangles.
//! * [`experiments`]: bound brackets, distance measurements, the triangle table.

pub mod cumulants;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod localdep;
pub mod metrics;
pub mod models;
pub mod par;
pub mod rng;
pub mod stein;

pub use cumulants::{CumulantTriple, Family, FamilyChoice, MomentTriple};
pub use distributions::{FamilyParams, IntegerPmf, NormalParams};
pub use error::{Error, Result};
