//! Truncated integer laws: Poisson, binomial, negative binomial, the three
//! intermediate families and the discretized normal.
//!
//! Every PMF is evaluated in log space and stored on a finite window together
//! with the probability mass that fell outside it.

use std::f64::consts::SQRT_2;

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::cumulants::{CumulantTriple, Family, MomentTriple};
use crate::error::{Error, Result};
use crate::par::kahan_sum;

/// Default truncation tolerance for built PMFs.
pub const DEFAULT_EPS: f64 = 1e-12;

/// Allowed deviation of `sum(probs) + tail_mass` from one.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Windows wider than this are refused rather than tabulated.
const MAX_WINDOW: i64 = 20_000_000;

/// Probability mass function on the contiguous window `lo..lo + probs.len()`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntegerPmf {
    lo: i64,
    probs: Vec<f64>,
    tail_mass: f64,
    meta: String,
}

impl IntegerPmf {
    pub fn new(lo: i64, probs: Vec<f64>, tail_mass: f64, meta: impl Into<String>) -> Result<Self> {
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::input(format!("probability at {} is {p}", lo + i as i64)));
        }
        if !(tail_mass.is_finite() && tail_mass >= 0.0) {
            return Err(Error::input(format!("tail mass {tail_mass} must be non-negative")));
        }
        let total = kahan_sum(probs.iter().copied()) + tail_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::input(format!(
                "probabilities plus tail mass sum to {total}, not 1"
            )));
        }
        Ok(IntegerPmf {
            lo,
            probs,
            tail_mass,
            meta: meta.into(),
        })
    }

    /// Builds a PMF from non-negative weights, normalizing them to total mass one.
    pub fn from_weights(lo: i64, weights: Vec<f64>, meta: impl Into<String>) -> Result<Self> {
        let total = kahan_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::input("weights must have positive finite total"));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        IntegerPmf::new(lo, probs, 0.0, meta)
    }

    pub fn point_mass(at: i64) -> Self {
        IntegerPmf {
            lo: at,
            probs: vec![1.0],
            tail_mass: 0.0,
            meta: format!("delta({at})"),
        }
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("Bernoulli p={p} must lie in [0,1]")));
        }
        IntegerPmf::new(0, vec![1.0 - p, p], 0.0, format!("Bernoulli({p})"))
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    /// Largest represented point.
    pub fn hi(&self) -> i64 {
        self.lo + self.probs.len() as i64 - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn meta(&self) -> &str {
        &self.meta
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    /// `P(X = k)` for represented points, zero elsewhere.
    pub fn prob(&self, k: i64) -> f64 {
        if k < self.lo {
            return 0.0;
        }
        self.probs.get((k - self.lo) as usize).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.lo + i as i64, p))
    }

    pub fn represented_mass(&self) -> f64 {
        kahan_sum(self.probs.iter().copied())
    }

    /// Mean, variance and third central moment of the represented mass,
    /// renormalized to one.
    pub fn central_moments(&self) -> (f64, f64, f64) {
        let total = self.represented_mass();
        let mean = kahan_sum(self.iter().map(|(k, p)| k as f64 * p)) / total;
        let var = kahan_sum(self.iter().map(|(k, p)| {
            let d = k as f64 - mean;
            d * d * p
        })) / total;
        let third = kahan_sum(self.iter().map(|(k, p)| {
            let d = k as f64 - mean;
            d * d * d * p
        })) / total;
        (mean, var, third)
    }

    /// First three raw moments of the represented mass.
    pub fn raw_moments(&self) -> MomentTriple {
        let total = self.represented_mass();
        let m = |r: i32| kahan_sum(self.iter().map(|(k, p)| (k as f64).powi(r) * p)) / total;
        MomentTriple {
            m1: m(1),
            m2: m(2),
            m3: m(3),
        }
    }

    /// Puts the mass of point `k` at `factor * k` (the law of `factor * X`).
    pub fn dilate(&self, factor: usize) -> IntegerPmf {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let mut probs = vec![0.0; (self.probs.len() - 1) * factor + 1];
        for (i, &p) in self.probs.iter().enumerate() {
            probs[i * factor] = p;
        }
        IntegerPmf {
            lo: self.lo * factor as i64,
            probs,
            tail_mass: self.tail_mass,
            meta: format!("{factor}*{}", self.meta),
        }
    }

    /// Drops edge points while the dropped mass stays within `budget`.
    fn trimmed(mut self, budget: f64) -> Self {
        // Each dropped point is charged `p (1 + |k - mean|)^3`, so the dropped
        // tail moves the first three central moments by at most `budget` too.
        let total: f64 = self.probs.iter().sum();
        let mean = if total > 0.0 {
            self.probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / total
        } else {
            0.0
        };
        let cost = |i: usize, p: f64| p * (1.0 + (i as f64 - mean).abs()).powi(3);
        let mut removed = 0.0;
        let mut charged = 0.0;
        let mut start = 0;
        let mut end = self.probs.len();
        while end - start > 1 {
            let (left, right) = (cost(start, self.probs[start]), cost(end - 1, self.probs[end - 1]));
            let take_left = left <= right;
            let c = left.min(right);
            if charged + c > budget {
                break;
            }
            charged += c;
            if take_left {
                removed += self.probs[start];
                start += 1;
            } else {
                removed += self.probs[end - 1];
                end -= 1;
            }
        }
        self.lo += start as i64;
        self.probs.truncate(end);
        self.probs.drain(..start);
        self.tail_mass += removed;
        self
    }
}

/// `P(Poisson(lambda) = k)`, evaluated in log space.
pub fn pmf_poisson(lambda: f64, k: i64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("Poisson rate {lambda} must be finite and >= 0")));
    }
    Ok(poisson_unchecked(lambda, k))
}

fn poisson_unchecked(lambda: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    loader::dpois(k as f64, lambda)
}

/// `P(NB(r, p) = k)` for the failure-counting negative binomial with real `r`:
/// `Gamma(k + r) / (Gamma(r) k!) p^r q^k`.
pub fn pmf_negbinomial(r: f64, p: f64, k: i64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::param(format!("negative binomial r={r} must be > 0")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param(format!("negative binomial p={p} must lie in (0,1)")));
    }
    Ok(negbin_unchecked(r, p, k))
}

fn negbin_unchecked(r: f64, p: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    loader::dnbinom(k as f64, r, p)
}

/// `P(B(n, p) = k)`.
pub fn pmf_binomial(n: u64, p: f64, k: i64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("binomial p={p} must lie in [0,1]")));
    }
    Ok(binomial_unchecked(n, p, k))
}

fn binomial_unchecked(n: u64, p: f64, k: i64) -> f64 {
    if k < 0 || k as u64 > n {
        return 0.0;
    }
    loader::dbinom(k as f64, n as f64, p, 1.0 - p)
}

/// Saddle-point evaluation of the Poisson, binomial and negative binomial
/// masses (Loader's deviance form). Every mass is `exp` of a log-scale
/// expression whose large terms cancel analytically, so the relative error
/// stays near machine precision even for means in the millions.
mod loader {
    use std::f64::consts::PI;

    use statrs::function::gamma::ln_gamma;

    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

    /// `stirlerr(k / 2)` for `k = 0..=30`.
    const HALVES: [f64; 31] = [
        0.0,
        0.15342640972002734529,
        0.08106146679532725822,
        0.054814121051917653896,
        0.041340695955409294094,
        0.033162873519936287485,
        0.027677925684998339149,
        0.023746163656297495971,
        0.020790672103765093112,
        0.018488450532673185231,
        0.016644691189821192163,
        0.015134973221917378874,
        0.013876128823070747999,
        0.012810465242920226924,
        0.011896709945891770095,
        0.011104559758206917327,
        0.010411265261972096497,
        0.0097994161261588032984,
        0.0092554621827127329177,
        0.008768700134139385463,
        0.0083305634333628712565,
        0.0079341145643140205472,
        0.007573675487951840795,
        0.0072445543013203831795,
        0.0069428401072095298657,
        0.0066652470327076824424,
        0.0064089941880042070684,
        0.0061717122630394576475,
        0.0059513701127588477356,
        0.005746216513010115682,
        0.005554733551962801371,
    ];

    /// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]`.
    pub(super) fn stirlerr(n: f64) -> f64 {
        const S0: f64 = 1.0 / 12.0;
        const S1: f64 = 1.0 / 360.0;
        const S2: f64 = 1.0 / 1260.0;
        const S3: f64 = 1.0 / 1680.0;
        const S4: f64 = 1.0 / 1188.0;
        if n <= 15.0 {
            let twice = 2.0 * n;
            if twice == twice.trunc() {
                return HALVES[twice as usize];
            }
            return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
        }
        let nn = n * n;
        if n > 500.0 {
            (S0 - S1 / nn) / n
        } else if n > 80.0 {
            (S0 - (S1 - S2 / nn) / nn) / n
        } else if n > 35.0 {
            (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
        } else {
            (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
        }
    }

    /// Deviance term `x ln(x / np) + np - x`, with a series near `x = np`.
    pub(super) fn bd0(x: f64, np: f64) -> f64 {
        if (x - np).abs() < 0.1 * (x + np) {
            let v = (x - np) / (x + np);
            let mut s = (x - np) * v;
            let mut ej = 2.0 * x * v;
            let v2 = v * v;
            for j in 1..1000 {
                ej *= v2;
                let s1 = s + ej / (2 * j + 1) as f64;
                if s1 == s {
                    return s1;
                }
                s = s1;
            }
            s
        } else {
            x * (x / np).ln() + np - x
        }
    }

    pub(super) fn dpois(x: f64, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return if x == 0.0 { 1.0 } else { 0.0 };
        }
        if x == 0.0 {
            return (-lambda).exp();
        }
        (-stirlerr(x) - bd0(x, lambda)).exp() / (2.0 * PI * x).sqrt()
    }

    /// Binomial mass for real `n >= x >= 0`.
    pub(super) fn dbinom(x: f64, n: f64, p: f64, q: f64) -> f64 {
        if p == 0.0 {
            return if x == 0.0 { 1.0 } else { 0.0 };
        }
        if q == 0.0 {
            return if x == n { 1.0 } else { 0.0 };
        }
        if x == 0.0 {
            if n == 0.0 {
                return 1.0;
            }
            let lc = if p < 0.1 { -bd0(n, n * q) - n * p } else { n * q.ln() };
            return lc.exp();
        }
        if x == n {
            let lc = if q < 0.1 { -bd0(n, n * p) - n * q } else { n * p.ln() };
            return lc.exp();
        }
        let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(x, n * p) - bd0(n - x, n * q);
        let lf = (2.0 * PI).ln() + x.ln() + (-x / n).ln_1p();
        (lc - 0.5 * lf).exp()
    }

    /// `Gamma(x + r) / (Gamma(r) x!) p^r q^x`, through `r/(r + x) * dbinom(r; r + x, p)`.
    pub(super) fn dnbinom(x: f64, r: f64, p: f64) -> f64 {
        if x == 0.0 {
            return (r * p.ln()).exp();
        }
        r / (r + x) * dbinom(r, r + x, p, 1.0 - p)
    }
}

/// Tabulates `f` on a window around `mean` that is widened until at most
/// `eps / 2` of the mass lies outside it, then trims the edges within the rest
/// of the budget. The outside mass is summed term by term, not taken as
/// `1 - sum`, so it stays accurate far below the rounding level of the window sum.
fn tabulate_window(
    mean: f64,
    sd: f64,
    support: (i64, i64),
    eps: f64,
    f: impl Fn(i64) -> f64,
    meta: String,
) -> Result<IntegerPmf> {
    let mut half = (12.0 * sd).max(40.0);
    loop {
        let lo = ((mean - half).floor() as i64).max(support.0);
        let hi = ((mean + half).ceil() as i64).min(support.1);
        if hi - lo > MAX_WINDOW {
            return Err(Error::param(format!(
                "{meta}: truncation window of {} points exceeds the limit",
                hi - lo
            )));
        }
        let (outside, charged) = outer_mass(&f, lo, hi, support, mean);
        if charged <= eps / 2.0 {
            let probs: Vec<f64> = (lo..=hi).map(&f).collect();
            let pmf = IntegerPmf {
                lo,
                probs,
                tail_mass: outside,
                meta,
            };
            return Ok(pmf.trimmed(eps / 2.0));
        }
        half *= 2.0;
    }
}

/// Mass of a unimodal law outside `lo..=hi`, summed outward until the terms
/// stop contributing, together with the same sum weighted by
/// `(1 + |k - mean|)^3`.
fn outer_mass(f: &impl Fn(i64) -> f64, lo: i64, hi: i64, support: (i64, i64), mean: f64) -> (f64, f64) {
    let walk = |start: i64, step: i64, stop: i64| {
        let (mut acc, mut charged) = (0.0, 0.0);
        let mut k = start;
        let mut n = 0i64;
        while (step < 0 && k >= stop) || (step > 0 && k <= stop) {
            let p = f(k);
            let c = p * (1.0 + (k as f64 - mean).abs()).powi(3);
            acc += p;
            charged += c;
            if p == 0.0 || c < charged * 1e-17 || n > MAX_WINDOW {
                break;
            }
            k += step;
            n += 1;
        }
        (acc, charged)
    };
    let (l, lc) = if lo > support.0 { walk(lo - 1, -1, support.0) } else { (0.0, 0.0) };
    let (r, rc) = if hi < support.1 { walk(hi + 1, 1, support.1) } else { (0.0, 0.0) };
    (l + r, lc + rc)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("truncation tolerance {eps} must lie in (0,1)")))
    }
}

pub fn poisson_pmf(lambda: f64, eps: f64) -> Result<IntegerPmf> {
    pmf_poisson(lambda, 0)?;
    check_eps(eps)?;
    if lambda == 0.0 {
        return Ok(IntegerPmf::point_mass(0).with_meta("Poisson(0)"));
    }
    tabulate_window(
        lambda,
        lambda.sqrt(),
        (0, i64::MAX),
        eps,
        |k| poisson_unchecked(lambda, k),
        format!("Poisson({lambda})"),
    )
}

pub fn binomial_pmf(n: u64, p: f64, eps: f64) -> Result<IntegerPmf> {
    pmf_binomial(n, p, 0)?;
    check_eps(eps)?;
    let nf = n as f64;
    tabulate_window(
        nf * p,
        (nf * p * (1.0 - p)).sqrt(),
        (0, n as i64),
        eps,
        |k| binomial_unchecked(n, p, k),
        format!("B({n},{p})"),
    )
}

pub fn negbinomial_pmf(r: f64, p: f64, eps: f64) -> Result<IntegerPmf> {
    pmf_negbinomial(r, p, 0)?;
    check_eps(eps)?;
    let q = 1.0 - p;
    tabulate_window(
        r * q / p,
        (r * q).sqrt() / p,
        (0, i64::MAX),
        eps,
        |k| negbin_unchecked(r, p, k),
        format!("NB({r},{p})"),
    )
}

/// Pointwise convolution. The result keeps every input tail and may trim
/// at most `eps` more.
pub fn convolve(a: &IntegerPmf, b: &IntegerPmf, eps: f64) -> IntegerPmf {
    let mut probs = vec![0.0; a.probs.len() + b.probs.len() - 1];
    for (i, &x) in a.probs.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.probs.iter().enumerate() {
            probs[i + j] += x * y;
        }
    }
    let tail = a.tail_mass + b.tail_mass - a.tail_mass * b.tail_mass;
    IntegerPmf {
        lo: a.lo + b.lo,
        probs,
        tail_mass: tail,
        meta: format!("{} * {}", a.meta, b.meta),
    }
    .trimmed(eps)
}

/// Parameters of `M1 = B(n, p) * P(lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BinPoisParams {
    pub n: u64,
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    /// Fractional part dropped when the matched `n` was floored.
    pub delta: f64,
    pub theta1: f64,
}

impl BinPoisParams {
    pub fn new(n: u64, p: f64, lambda: f64, delta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::param(format!("M1 requires p in (0,1), got {p}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("M1 requires lambda >= 0, got {lambda}")));
        }
        let q = 1.0 - p;
        Ok(BinPoisParams {
            n,
            p,
            q,
            lambda,
            delta,
            theta1: theta1(n, p, lambda),
        })
    }

    /// `floor(n + lambda / p)`, the effective number of trials.
    pub fn effective_trials(&self) -> f64 {
        (self.n as f64 + self.lambda / self.p).floor()
    }

    pub fn is_valid(&self) -> bool {
        self.theta1 < 0.5
    }
}

/// `lambda / (floor(n + lambda/p) q)`; zero when `lambda = 0`.
pub fn theta1(n: u64, p: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let trials = (n as f64 + lambda / p).floor();
    if trials <= 0.0 {
        f64::INFINITY
    } else {
        lambda / (trials * (1.0 - p))
    }
}

/// Parameters of `M2 = NB(r, p) * P(lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NegBinPoisParams {
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub theta2: f64,
}

impl NegBinPoisParams {
    pub fn new(r: f64, p: f64, lambda: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::param(format!("M2 requires r > 0, got {r}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::param(format!("M2 requires p in (0,1), got {p}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("M2 requires lambda >= 0, got {lambda}")));
        }
        let q = 1.0 - p;
        Ok(NegBinPoisParams {
            r,
            p,
            q,
            lambda,
            theta2: lambda * q / (r * q + lambda * p),
        })
    }

    pub fn is_valid(&self) -> bool {
        self.theta2 < 0.5
    }
}

/// Parameters of `M3 = P(lambda) * 2P(omega/2) * 3P(eta/3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TriplePoisParams {
    pub lambda: f64,
    pub omega: f64,
    pub eta: f64,
    pub theta3: f64,
}

impl TriplePoisParams {
    pub fn new(lambda: f64, omega: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("omega", omega), ("eta", eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("M3 requires {name} >= 0, got {v}")));
            }
        }
        let total = lambda + omega + eta;
        if total <= 0.0 {
            return Err(Error::param("M3 requires lambda + omega + eta > 0"));
        }
        Ok(TriplePoisParams {
            lambda,
            omega,
            eta,
            theta3: (omega + 2.0 * eta) / total,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.theta3 < 0.5
    }
}

/// Mean and variance of the discretized normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl NormalParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite() && mu.is_finite()) {
            return Err(Error::param(format!("normal requires sigma2 > 0, got {sigma2}")));
        }
        Ok(NormalParams { mu, sigma2 })
    }
}

/// Parameters of one of the three intermediate families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "family")]
pub enum FamilyParams {
    M1(BinPoisParams),
    M2(NegBinPoisParams),
    M3(TriplePoisParams),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::M1(_) => Family::M1,
            FamilyParams::M2(_) => Family::M2,
            FamilyParams::M3(_) => Family::M3,
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            FamilyParams::M1(p) => p.theta1,
            FamilyParams::M2(p) => p.theta2,
            FamilyParams::M3(p) => p.theta3,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.theta() < 0.5
    }

    /// Builds the truncated PMF of the family.
    pub fn pmf(&self, eps: f64) -> Result<IntegerPmf> {
        match self {
            FamilyParams::M1(p) => build_m1(p, eps),
            FamilyParams::M2(p) => build_m2(p, eps),
            FamilyParams::M3(p) => build_m3(p, eps),
        }
    }
}

pub fn build_m1(params: &BinPoisParams, eps: f64) -> Result<IntegerPmf> {
    let checked = BinPoisParams::new(params.n, params.p, params.lambda, params.delta)?;
    check_eps(eps)?;
    let bin = binomial_pmf(checked.n, checked.p, eps / 4.0)?;
    let poi = poisson_pmf(checked.lambda, eps / 4.0)?;
    Ok(convolve(&bin, &poi, eps / 2.0).with_meta(format!(
        "M1: B({},{}) * P({})",
        checked.n, checked.p, checked.lambda
    )))
}

pub fn build_m2(params: &NegBinPoisParams, eps: f64) -> Result<IntegerPmf> {
    let checked = NegBinPoisParams::new(params.r, params.p, params.lambda)?;
    check_eps(eps)?;
    let nb = negbinomial_pmf(checked.r, checked.p, eps / 4.0)?;
    let poi = poisson_pmf(checked.lambda, eps / 4.0)?;
    Ok(convolve(&nb, &poi, eps / 2.0).with_meta(format!(
        "M2: NB({},{}) * P({})",
        checked.r, checked.p, checked.lambda
    )))
}

pub fn build_m3(params: &TriplePoisParams, eps: f64) -> Result<IntegerPmf> {
    let checked = TriplePoisParams::new(params.lambda, params.omega, params.eta)?;
    check_eps(eps)?;
    let single = poisson_pmf(checked.lambda, eps / 6.0)?;
    let double = poisson_pmf(checked.omega / 2.0, eps / 6.0)?.dilate(2);
    let triple = poisson_pmf(checked.eta / 3.0, eps / 6.0)?.dilate(3);
    let partial = convolve(&single, &double, eps / 4.0);
    Ok(convolve(&partial, &triple, eps / 4.0).with_meta(format!(
        "M3: P({}) * 2P({}) * 3P({})",
        checked.lambda,
        checked.omega / 2.0,
        checked.eta / 3.0
    )))
}

/// Standard normal lower tail `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail `1 - Phi(x)`, accurate for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Normal mass of `[a, b]` in standardized units, computed on the side that
/// avoids cancellation.
fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// Discretized normal on all of Z: point `k` carries the normal mass of
/// `[k - 1/2, k + 1/2]`.
pub fn build_discretized_normal(params: &NormalParams, eps: f64) -> Result<IntegerPmf> {
    let NormalParams { mu, sigma2 } = NormalParams::new(params.mu, params.sigma2)?;
    check_eps(eps)?;
    let sd = sigma2.sqrt();
    let z = |x: f64| (x - mu) / sd;
    let mut half = (12.0 * sd).max(40.0);
    let (lo, hi) = loop {
        let lo = (mu - half).floor() as i64;
        let hi = (mu + half).ceil() as i64;
        let outside = normal_cdf(z(lo as f64 - 0.5)) + normal_sf(z(hi as f64 + 0.5));
        if outside <= eps / 2.0 {
            break (lo, hi);
        }
        half *= 2.0;
    };
    let probs: Vec<f64> = (lo..=hi)
        .map(|k| normal_interval(z(k as f64 - 0.5), z(k as f64 + 0.5)))
        .collect();
    let below_zero = normal_cdf(z(-0.5));
    let outside = normal_cdf(z(lo as f64 - 0.5)) + normal_sf(z(hi as f64 + 0.5));
    let pmf = IntegerPmf {
        lo,
        probs,
        tail_mass: outside,
        meta: format!(
            "Yd({mu},{sigma2}) on Z; mass below 0 = {below_zero:e} (the k>=0-only reading would drop it)"
        ),
    };
    Ok(pmf.trimmed(eps / 2.0))
}

/// Mass the discretized normal puts on negative integers.
pub fn discretized_normal_negative_mass(params: &NormalParams) -> f64 {
    normal_cdf((-0.5 - params.mu) / params.sigma2.sqrt())
}

/// Closed-form factorial cumulants of the intermediate families.
pub fn closed_form_cumulants(params: &FamilyParams) -> CumulantTriple {
    match *params {
        FamilyParams::M1(BinPoisParams { n, p, lambda, .. }) => {
            let n = n as f64;
            CumulantTriple::new(n * p + lambda, -n * p * p, 2.0 * n * p.powi(3))
        }
        FamilyParams::M2(NegBinPoisParams { r, p, q, lambda, .. }) => {
            let ratio = q / p;
            CumulantTriple::new(
                r * ratio + lambda,
                r * ratio * ratio,
                2.0 * r * ratio.powi(3),
            )
        }
        FamilyParams::M3(TriplePoisParams {
            lambda, omega, eta, ..
        }) => CumulantTriple::new(lambda + omega + eta, omega + 2.0 * eta, 2.0 * eta),
    }
}

/// Largest tail mass [`numeric_cumulants`] accepts.
pub const CUMULANT_TAIL_LIMIT: f64 = 1e-8;

/// Factorial cumulants of a tabulated law, from its central moments
/// (algebraically the raw-moment formulas, without their cancellation).
pub fn numeric_cumulants(pmf: &IntegerPmf) -> Result<CumulantTriple> {
    if pmf.tail_mass() > CUMULANT_TAIL_LIMIT {
        let reach = pmf.lo().unsigned_abs().max(pmf.hi().unsigned_abs()) as f64 + 1.0;
        return Err(Error::Accuracy {
            tail_mass: pmf.tail_mass(),
            limit: CUMULANT_TAIL_LIMIT,
            moment_error_bound: pmf.tail_mass() * reach.powi(3),
        });
    }
    let (mean, var, third) = pmf.central_moments();
    Ok(CumulantTriple::new(
        mean,
        var - mean,
        third - 3.0 * var + 2.0 * mean,
    ))
}
