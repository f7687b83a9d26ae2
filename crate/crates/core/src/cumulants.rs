//! Factorial cumulants, the three parameter-matching systems and the family
//! selection rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{
    theta1, BinPoisParams, FamilyParams, NegBinPoisParams, TriplePoisParams,
};
use crate::error::{Error, Result};

/// First three raw moments `E W, E W^2, E W^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentTriple {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

/// First three factorial cumulants `(Gamma_1, Gamma_2, Gamma_3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantTriple {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl CumulantTriple {
    pub const fn new(g1: f64, g2: f64, g3: f64) -> Self {
        CumulantTriple { g1, g2, g3 }
    }

    pub fn mean(&self) -> f64 {
        self.g1
    }

    /// `sigma^2 = Gamma_1 + Gamma_2`.
    pub fn variance(&self) -> f64 {
        self.g1 + self.g2
    }

    pub fn scaled(&self, c: f64) -> Self {
        CumulantTriple::new(self.g1 * c, self.g2 * c, self.g3 * c)
    }

    pub fn max_abs_diff(&self, other: &CumulantTriple) -> f64 {
        (self.g1 - other.g1)
            .abs()
            .max((self.g2 - other.g2).abs())
            .max((self.g3 - other.g3).abs())
    }
}

impl fmt::Display for CumulantTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.g1, self.g2, self.g3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// `B(n, p) * P(lambda)`
    M1,
    /// `NB(r, p) * P(lambda)`
    M2,
    /// `P(lambda) * 2P(omega/2) * 3P(eta/3)`
    M3,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::M1 => "M1",
            Family::M2 => "M2",
            Family::M3 => "M3",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Family::M1),
            "M2" => Ok(Family::M2),
            "M3" => Ok(Family::M3),
            other => Err(Error::input(format!("unknown family {other:?}"))),
        }
    }
}

/// Default `|Gamma_2 / Gamma_1|` threshold below which M3 is preferred.
pub const DEFAULT_RHO0: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FamilyChoice {
    pub family: Family,
    pub ratio: f64,
    pub threshold: f64,
}

pub fn cumulants_from_moments(m: &MomentTriple) -> Result<CumulantTriple> {
    let MomentTriple { m1, m2, m3 } = *m;
    let var = m2 - m1 * m1;
    // Rounding on exactly computed moments can leave a tiny negative variance.
    if var < -1e-12 * m2.abs().max(1.0) {
        return Err(Error::input(format!(
            "moments ({m1}, {m2}, {m3}) imply negative variance {var}"
        )));
    }
    Ok(CumulantTriple::new(
        m1,
        m2 - m1 * m1 - m1,
        m3 - 3.0 * m1 * m2 - 3.0 * m2 + 2.0 * m1.powi(3) + 3.0 * m1 * m1 + 2.0 * m1,
    ))
}

/// Relative slack used when flooring a matched `n` that should be integral.
const FLOOR_SLACK: f64 = 1e-9;

/// Matches `B(n, p) * P(lambda)` to `(Gamma_1, Gamma_2, Gamma_3)` with mean `mu`.
///
/// Inverting `Gamma_2 = -n p^2`, `Gamma_3 = 2 n p^3` gives `p = -Gamma_3 / (2 Gamma_2)`
/// and `n = -4 Gamma_2^3 / Gamma_3^2`; `n` is floored and the remainder kept in `delta`.
pub fn solve_binpois(g: &CumulantTriple, mu: f64) -> Result<BinPoisParams> {
    let diag = |p: f64, n: f64, l: f64| vec![("g2", g.g2), ("g3", g.g3), ("p", p), ("n_real", n), ("lambda", l)];
    if !(g.g2 < 0.0 && g.g3 > 0.0) {
        return Err(Error::infeasible(
            Family::M1,
            "requires Gamma_2 < 0 and Gamma_3 > 0",
            diag(f64::NAN, f64::NAN, f64::NAN),
        ));
    }
    let p = -g.g3 / (2.0 * g.g2);
    let n_real = -4.0 * g.g2.powi(3) / (g.g3 * g.g3);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::infeasible(
            Family::M1,
            format!("p = {p} is outside (0,1)"),
            diag(p, n_real, f64::NAN),
        ));
    }
    let n = (n_real * (1.0 + FLOOR_SLACK)).floor().max(0.0);
    let delta = (n_real - n).max(0.0);
    let mut lambda = mu - n * p;
    if lambda < 0.0 && lambda > -1e-9 * mu.abs().max(1.0) {
        lambda = 0.0;
    }
    if lambda < 0.0 {
        return Err(Error::infeasible(
            Family::M1,
            format!("lambda = mu - n p = {lambda} is negative"),
            diag(p, n_real, lambda),
        ));
    }
    log::debug!(
        "M1 match: theta1 with floor(n + lambda/p) = {}, floor(n + lambda/q) = {}, floor(n + p/q) = {}",
        theta1(n as u64, p, lambda),
        theta_variant(n, lambda, (n + lambda / (1.0 - p)).floor(), 1.0 - p),
        theta_variant(n, lambda, (n + p / (1.0 - p)).floor(), 1.0 - p),
    );
    BinPoisParams::new(n as u64, p, lambda, delta)
}

fn theta_variant(_n: f64, lambda: f64, trials: f64, q: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda / (trials * q)
    }
}

/// The three printed readings of the M1 validity condition, as `theta` values
/// (`lambda / (floor(n + x) q)` for `x` in `lambda/p`, `lambda/q`, `p/q`).
pub fn theta1_variants(params: &BinPoisParams) -> [(&'static str, f64); 3] {
    let n = params.n as f64;
    let (p, q, l) = (params.p, params.q, params.lambda);
    [
        ("floor(n + lambda/p)", params.theta1),
        ("floor(n + lambda/q)", theta_variant(n, l, (n + l / q).floor(), q)),
        ("floor(n + p/q)", theta_variant(n, l, (n + p / q).floor(), q)),
    ]
}

/// Matches `NB(r, p) * P(lambda)`. Uses `r = 4 Gamma_2^3 / Gamma_3^2`, the
/// solution consistent with the closed-form cumulants of M2.
pub fn solve_negbinpois(g: &CumulantTriple, mu: f64) -> Result<NegBinPoisParams> {
    if !(g.g2 > 0.0 && g.g3 > 0.0) {
        return Err(Error::infeasible(
            Family::M2,
            "requires Gamma_2 > 0 and Gamma_3 > 0",
            vec![("g2", g.g2), ("g3", g.g3)],
        ));
    }
    let r = 4.0 * g.g2.powi(3) / (g.g3 * g.g3);
    let p = 2.0 * g.g2 / (2.0 * g.g2 + g.g3);
    let q = 1.0 - p;
    let short_form = 4.0 * g.g2 / g.g3;
    if (short_form - r).abs() > 1e-12 * r.abs().max(1.0) {
        log::debug!("M2 match: r = 4 G2^3/G3^2 = {r}; the form 4 G2/G3 would give {short_form}");
    }
    let mut lambda = mu - r * q / p;
    if lambda < 0.0 && lambda > -1e-9 * mu.abs().max(1.0) {
        lambda = 0.0;
    }
    if lambda < 0.0 {
        return Err(Error::infeasible(
            Family::M2,
            format!("lambda = mu - r q / p = {lambda} is negative"),
            vec![("r", r), ("p", p), ("lambda", lambda)],
        ));
    }
    NegBinPoisParams::new(r, p, lambda)
}

/// Matches `P(lambda) * 2P(omega/2) * 3P(eta/3)`.
pub fn solve_triplepois(g: &CumulantTriple) -> Result<TriplePoisParams> {
    let lambda = g.g1 - g.g2 + g.g3 / 2.0;
    let omega = g.g2 - g.g3;
    let eta = g.g3 / 2.0;
    let negative: Vec<&str> = [("lambda", lambda), ("omega", omega), ("eta", eta)]
        .iter()
        .filter(|(_, v)| *v < 0.0)
        .map(|(n, _)| *n)
        .collect();
    if !negative.is_empty() {
        return Err(Error::infeasible(
            Family::M3,
            format!("negative parameter(s): {}", negative.join(", ")),
            vec![("lambda", lambda), ("omega", omega), ("eta", eta)],
        ));
    }
    TriplePoisParams::new(lambda, omega, eta)
}

/// Solves the matching system of `family` with mean `mu`.
pub fn solve_family(family: Family, g: &CumulantTriple, mu: f64) -> Result<FamilyParams> {
    Ok(match family {
        Family::M1 => FamilyParams::M1(solve_binpois(g, mu)?),
        Family::M2 => FamilyParams::M2(solve_negbinpois(g, mu)?),
        Family::M3 => FamilyParams::M3(solve_triplepois(g)?),
    })
}

/// Result of a projected solve: parameters plus what had to be clamped.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedParams {
    pub params: FamilyParams,
    /// Human-readable notes of each clamped quantity. Empty when the exact solve succeeded.
    pub adjustments: Vec<String>,
}

impl ProjectedParams {
    pub fn is_exact(&self) -> bool {
        self.adjustments.is_empty()
    }
}

/// Like [`solve_family`], but clamps negative rates to zero instead of failing.
/// The result no longer matches all three cumulants; every clamp is reported.
pub fn solve_family_projected(family: Family, g: &CumulantTriple, mu: f64) -> Result<ProjectedParams> {
    match solve_family(family, g, mu) {
        Ok(params) => Ok(ProjectedParams {
            params,
            adjustments: Vec::new(),
        }),
        Err(err) if err.is_infeasible() => project(family, g, mu, err),
        Err(err) => Err(err),
    }
}

fn project(family: Family, g: &CumulantTriple, mu: f64, original: Error) -> Result<ProjectedParams> {
    let mut adjustments = Vec::new();
    let params = match family {
        Family::M3 => {
            let mut vals = [
                ("lambda", g.g1 - g.g2 + g.g3 / 2.0),
                ("omega", g.g2 - g.g3),
                ("eta", g.g3 / 2.0),
            ];
            for (name, v) in vals.iter_mut() {
                if *v < 0.0 {
                    adjustments.push(format!("{name} = {v} clamped to 0"));
                    *v = 0.0;
                }
            }
            FamilyParams::M3(TriplePoisParams::new(vals[0].1, vals[1].1, vals[2].1)?)
        }
        Family::M1 => {
            if !(g.g2 < 0.0 && g.g3 > 0.0) {
                return Err(original);
            }
            let p = -g.g3 / (2.0 * g.g2);
            if !(p > 0.0 && p < 1.0) {
                return Err(original);
            }
            let n_real = -4.0 * g.g2.powi(3) / (g.g3 * g.g3);
            let n = n_real.floor().max(0.0);
            let lambda = mu - n * p;
            adjustments.push(format!("lambda = {lambda} clamped to 0"));
            FamilyParams::M1(BinPoisParams::new(n as u64, p, 0.0, n_real - n)?)
        }
        Family::M2 => {
            if !(g.g2 > 0.0 && g.g3 > 0.0) {
                return Err(original);
            }
            let r = 4.0 * g.g2.powi(3) / (g.g3 * g.g3);
            let p = 2.0 * g.g2 / (2.0 * g.g2 + g.g3);
            let lambda = mu - r * (1.0 - p) / p;
            adjustments.push(format!("lambda = {lambda} clamped to 0"));
            FamilyParams::M2(NegBinPoisParams::new(r, p, 0.0)?)
        }
    };
    Ok(ProjectedParams { params, adjustments })
}

/// Picks M3 when `|Gamma_2 / Gamma_1| <= rho0`, M1 when the ratio is below
/// `-rho0` and M2 when it is above `rho0`.
pub fn select_family(g: &CumulantTriple, rho0: f64) -> Result<FamilyChoice> {
    if !(g.g1 > 0.0) {
        return Err(Error::input(format!("Gamma_1 = {} must be positive", g.g1)));
    }
    if !(rho0 >= 0.0) {
        return Err(Error::param(format!("threshold {rho0} must be >= 0")));
    }
    let ratio = g.g2 / g.g1;
    let family = if ratio.abs() <= rho0 {
        Family::M3
    } else if ratio < 0.0 {
        Family::M1
    } else {
        Family::M2
    };
    Ok(FamilyChoice {
        family,
        ratio,
        threshold: rho0,
    })
}
