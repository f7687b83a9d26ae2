//! Stein operators of the three intermediate families, a solver for the
//! Stein equation on a truncated window, and randomized checks of the
//! sup-norm bounds on `Delta g_A`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::distributions::{FamilyParams, IntegerPmf};
use crate::error::{Error, Result};
use crate::par::{kahan_sum, map_indexed};
use crate::rng::{derive_seed, stream_rng};

/// Maximum tolerated residual of a solved Stein equation.
pub const RESIDUAL_LIMIT: f64 = 1e-8;

/// Largest family tail mass allowed beyond the solver window.
pub const WINDOW_TAIL_LIMIT: f64 = 1e-10;

const LITERAL_TOLERANCE: f64 = 1e-13;
const TEST_FUNCTION_TAG: u64 = 0x7E57_F00C;
const RANDOM_SET_TAG: u64 = 0x5E75_A11D;

/// A bounded function on the non-negative integers with `g(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestFunction {
    values: Vec<f64>,
    description: String,
}

impl TestFunction {
    pub fn new(values: Vec<f64>, description: impl Into<String>) -> Result<Self> {
        match values.first() {
            None => return Err(Error::input("test function needs at least g(0)")),
            Some(&g0) if g0 != 0.0 => {
                return Err(Error::input(format!("test function must have g(0) = 0, got {g0}")))
            }
            _ => {}
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("test function is not finite at {k}")));
        }
        Ok(TestFunction {
            values,
            description: description.into(),
        })
    }

    /// `g(k) = 1` for `1 <= k <= len`, `g(0) = 0`.
    pub fn step(len: usize) -> Self {
        let mut values = vec![1.0; len + 1];
        values[0] = 0.0;
        TestFunction {
            values,
            description: format!("1{{k>=1}} on 0..={len}"),
        }
    }

    /// iid uniform[-1, 1] values on `1..=len`, addressed by `(seed, index)`.
    pub fn random(len: usize, seed: u64, index: u64) -> Self {
        let mut rng = stream_rng(derive_seed(seed, TEST_FUNCTION_TAG), index);
        let mut values: Vec<f64> = (0..=len).map(|_| rng.random_range(-1.0..=1.0)).collect();
        values[0] = 0.0;
        TestFunction {
            values,
            description: format!("uniform[-1,1] seed={seed} index={index}"),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Largest argument at which `g` is defined.
    pub fn max_index(&self) -> i64 {
        self.values.len() as i64 - 1
    }

    pub fn get(&self, k: i64) -> Result<f64> {
        if k < 0 || k > self.max_index() {
            return Err(Error::OutOfRange {
                index: k,
                limit: self.max_index(),
            });
        }
        Ok(self.values[k as usize])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_k |g(k+1) - g(k)|` over `0 <= k < upto`.
    pub fn delta_sup(&self, upto: usize) -> f64 {
        self.values
            .windows(2)
            .take(upto)
            .fold(0.0, |m, w| m.max((w[1] - w[0]).abs()))
    }

    /// `alpha * self + beta * other` on the common domain.
    pub fn combine(&self, alpha: f64, other: &TestFunction, beta: f64) -> TestFunction {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        TestFunction {
            values,
            description: "linear combination".into(),
        }
    }
}

/// Shift coefficients of an operator in the form
/// `(c0 + c1 k) g(k+1) + c2 g(k+2) + c3 g(k+3) - k g(k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Shifts {
    c0: f64,
    c1: f64,
    c2: f64,
    c3: f64,
}

/// The Stein operator characterizing one of the intermediate families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SteinOperator {
    params: FamilyParams,
}

impl SteinOperator {
    pub fn new(params: FamilyParams) -> Result<Self> {
        let ok = match params {
            FamilyParams::M1(p) => p.p > 0.0 && p.p < 1.0 && p.lambda >= 0.0,
            FamilyParams::M2(p) => p.r > 0.0 && p.p > 0.0 && p.p < 1.0 && p.lambda >= 0.0,
            FamilyParams::M3(p) => p.lambda >= 0.0 && p.omega >= 0.0 && p.eta >= 0.0,
        };
        if !ok {
            return Err(Error::param(format!("invalid operator parameters {params:?}")));
        }
        Ok(SteinOperator { params })
    }

    pub fn params(&self) -> &FamilyParams {
        &self.params
    }

    fn shifts(&self) -> Shifts {
        match self.params {
            FamilyParams::M1(m) => {
                let n = m.n as f64;
                Shifts {
                    c0: n * m.p / m.q + m.lambda,
                    c1: -m.p / m.q,
                    c2: m.lambda * m.p / m.q,
                    c3: 0.0,
                }
            }
            FamilyParams::M2(m) => Shifts {
                c0: m.q * m.r + m.lambda,
                c1: m.q,
                c2: -m.lambda * m.q,
                c3: 0.0,
            },
            FamilyParams::M3(m) => Shifts {
                c0: m.lambda,
                c1: 0.0,
                c2: m.omega,
                c3: m.eta,
            },
        }
    }

    /// The operator exactly as displayed for each family, with
    /// `Delta g(k) = g(k+1) - g(k)`.
    fn literal(&self, g: &TestFunction, k: i64) -> Result<f64> {
        let kf = k as f64;
        let d = |j: i64| -> Result<f64> { Ok(g.get(j + 1)? - g.get(j)?) };
        Ok(match self.params {
            FamilyParams::M1(m) => {
                let n = m.n as f64;
                (n * m.p / m.q + m.lambda / m.q - m.p / m.q * kf) * g.get(k + 1)? - kf * g.get(k)?
                    + m.lambda * m.p / m.q * d(k + 1)?
            }
            FamilyParams::M2(m) => {
                m.q * (m.r + m.lambda * m.p / m.q + kf) * g.get(k + 1)? - kf * g.get(k)?
                    - m.lambda * m.q * d(k + 1)?
            }
            FamilyParams::M3(m) => {
                (m.lambda + m.omega + m.eta) * g.get(k + 1)? - kf * g.get(k)?
                    + m.omega * d(k + 1)?
                    + m.eta * (d(k + 1)? + d(k + 2)?)
            }
        })
    }

    fn shifted(&self, g: &TestFunction, k: i64) -> Result<f64> {
        let s = self.shifts();
        let kf = k as f64;
        let mut v = (s.c0 + s.c1 * kf) * g.get(k + 1)? - kf * g.get(k)?;
        if s.c2 != 0.0 {
            v += s.c2 * g.get(k + 2)?;
        }
        if s.c3 != 0.0 {
            v += s.c3 * g.get(k + 3)?;
        }
        Ok(v)
    }

    /// Largest possible `|Delta g_A|` for this family, or `None` when the
    /// validity condition fails.
    pub fn delta_bound(&self) -> Option<f64> {
        let denom = match self.params {
            FamilyParams::M1(m) => (m.effective_trials() * m.p * m.q - 2.0 * m.lambda * m.p) / m.q,
            FamilyParams::M2(m) => m.r * m.q + m.lambda * m.p - 2.0 * m.lambda * m.q,
            FamilyParams::M3(m) => m.lambda + m.omega + m.eta - 2.0 * (m.omega + 2.0 * m.eta),
        };
        (denom > 0.0).then(|| 1.0 / denom)
    }
}

/// `A g(k)` for the operator of `op`'s family.
///
/// For `M3` the displayed form is cross-checked against the equivalent
/// `lambda g(k+1) + omega g(k+2) + eta g(k+3) - k g(k)`.
pub fn apply_operator(op: &SteinOperator, g: &TestFunction, k: i64) -> Result<f64> {
    if k < 0 {
        return Err(Error::OutOfRange {
            index: k,
            limit: g.max_index(),
        });
    }
    let literal = op.literal(g, k)?;
    if let FamilyParams::M3(_) = op.params {
        let simple = op.shifted(g, k)?;
        let scale = 1.0 + literal.abs().max(simple.abs());
        if (literal - simple).abs() > LITERAL_TOLERANCE * scale {
            return Err(Error::Numerical {
                message: format!("M3 operator forms disagree at k={k}"),
                residual: (literal - simple).abs(),
            });
        }
    }
    Ok(literal)
}

/// `E A g(M)` under `pmf`, summed over the represented window.
pub fn expectation_of_operator(op: &SteinOperator, g: &TestFunction, pmf: &IntegerPmf) -> Result<f64> {
    let hi = pmf.hi().min(g.max_index() - 3);
    let lo = pmf.lo().max(0);
    let mut terms = Vec::with_capacity((hi - lo + 1).max(0) as usize);
    for k in lo..=hi {
        terms.push(pmf.prob(k) * apply_operator(op, g, k)?);
    }
    Ok(kahan_sum(terms))
}

/// Admissible size of `|E A g(M)|` due to mass the window leaves out: the
/// operator is at most `(1 + |c0| + |c2| + |c3| + (1 + |c1|) k) max|g|` at `k`.
pub fn operator_tail_tolerance(op: &SteinOperator, g: &TestFunction, pmf: &IntegerPmf) -> f64 {
    let s = op.shifts();
    let reach = (pmf.hi().max(g.max_index()) + 1) as f64;
    let coef = 1.0 + s.c0.abs() + s.c2.abs() + s.c3.abs() + (1.0 + s.c1.abs()) * reach;
    let skipped = kahan_sum(pmf.iter().filter(|(k, _)| *k > g.max_index() - 3).map(|(_, p)| p));
    let uncovered = pmf.tail_mass() + skipped;
    10.0 * coef * g.sup_norm() * uncovered
}

/// Smallest window `K` whose family tail beyond `K` is at most [`WINDOW_TAIL_LIMIT`],
/// padded so the boundary rows sit far from the mass.
pub fn default_window(op: &SteinOperator) -> Result<usize> {
    let pmf = op.params.pmf(WINDOW_TAIL_LIMIT / 10.0)?;
    let (mean, var, _) = pmf.central_moments();
    let pad = 20.0 + 4.0 * var.sqrt();
    Ok((pmf.hi().max(mean.ceil() as i64) as f64 + pad).ceil() as usize)
}

/// Solution of the Stein equation for `f = 1_A` on `0..=K`.
#[derive(Clone, Debug, Serialize)]
pub struct SteinSolution {
    pub g: TestFunction,
    pub window: usize,
    /// `P(M in A)`.
    pub prob_a: f64,
    /// Max residual of the equation over `k in 0..=K-3`.
    pub residual: f64,
}

/// Solves `A g(k) = 1_A(k) - P(M in A)` for `g(1..=K)` with `g(0) = 0`.
///
/// The equations at `k = 0..=K`, with references past `K` replaced by `g(K)`,
/// form an overdetermined banded system that is solved by least squares. A
/// square solve from `k = 0` upward is a disguised forward recursion, which
/// amplifies rounding like `1 / P(M = k)`; the extra boundary row pins the
/// bounded solution instead. The result is accepted only if the residual on
/// `0..=K-3` is within [`RESIDUAL_LIMIT`].
pub fn solve_stein_equation(op: &SteinOperator, a: &BTreeSet<i64>, window: usize) -> Result<SteinSolution> {
    if window < 8 {
        return Err(Error::param(format!("Stein window {window} is too small")));
    }
    let pmf = op.params.pmf(WINDOW_TAIL_LIMIT / 10.0)?;
    let beyond = pmf.tail_mass() + kahan_sum(pmf.iter().filter(|(k, _)| *k > window as i64).map(|(_, p)| p));
    if beyond > WINDOW_TAIL_LIMIT {
        return Err(Error::param(format!(
            "Stein window {window} leaves {beyond:e} of the family mass outside"
        )));
    }
    let prob_a = kahan_sum(a.iter().map(|&k| pmf.prob(k)));
    let rhs: Vec<f64> = (0..=window as i64)
        .map(|k| if a.contains(&k) { 1.0 } else { 0.0 } - prob_a)
        .collect();

    let s = op.shifts();
    let n = window;
    // Column u holds g(u + 1). Row k (0..=K) couples g(k)..g(k+3), with
    // arguments past K folded onto g(K).
    let mut band = BandLsq::new(n + 1, n);
    for k in 0..=n {
        let kf = k as f64;
        let mut put = |arg: usize, coef: f64| {
            if arg == 0 || coef == 0.0 {
                return;
            }
            band.add(k, arg.min(n) - 1, coef);
        };
        put(k, -kf);
        put(k + 1, s.c0 + s.c1 * kf);
        put(k + 2, s.c2);
        put(k + 3, s.c3);
    }
    let (x, _) = band.solve(rhs.clone())?;
    let mut values = Vec::with_capacity(n + 4);
    values.push(0.0);
    values.extend_from_slice(&x);
    let last = values[n];
    values.extend_from_slice(&[last; 3]);
    let g = TestFunction {
        values,
        description: format!("Stein solution, |A|={}, K={window}", a.len()),
    };

    let mut residual = 0.0f64;
    for k in 0..=(n - 3) {
        let lhs = op.shifted(&g, k as i64)?;
        residual = residual.max((lhs - rhs[k]).abs());
    }
    if !(residual <= RESIDUAL_LIMIT) {
        return Err(Error::Numerical {
            message: format!("Stein equation solve on window {window}"),
            residual,
        });
    }
    Ok(SteinSolution {
        g,
        window,
        prob_a,
        residual,
    })
}

/// Outcome of one random set that broke the bound.
#[derive(Clone, Debug, Serialize)]
pub struct BoundViolation {
    pub trial: usize,
    pub set: Vec<i64>,
    pub window: usize,
    pub delta_sup: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaBoundReport {
    pub params: FamilyParams,
    pub bound: f64,
    pub trials: usize,
    pub seed: u64,
    pub window: usize,
    pub max_delta: f64,
    pub max_ratio: f64,
    pub max_residual: f64,
    pub violations: Vec<BoundViolation>,
}

impl DeltaBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws `trials` random sets `A` (one fair coin per point of the window),
/// solves the Stein equation for each and compares `max |Delta g_A|` with the
/// family's bound.
pub fn verify_delta_bound(op: &SteinOperator, trials: usize, seed: u64) -> Result<DeltaBoundReport> {
    let bound = match op.delta_bound() {
        Some(b) if op.params.is_valid() => b,
        _ => {
            return Err(Error::infeasible(
                op.params.family(),
                "solution bound needs theta < 1/2",
                vec![("theta", op.params.theta())],
            ))
        }
    };
    let window = default_window(op)?;
    let base = derive_seed(seed, RANDOM_SET_TAG);
    let outcomes = map_indexed(trials, |t| -> Result<(Vec<i64>, f64, f64)> {
        let mut rng = stream_rng(base, t as u64);
        let set: BTreeSet<i64> = (0..=window as i64).filter(|_| rng.random_bool(0.5)).collect();
        let sol = solve_stein_equation(op, &set, window)?;
        let delta = sol.g.delta_sup(window - 3);
        Ok((set.into_iter().collect(), delta, sol.residual))
    });
    let mut report = DeltaBoundReport {
        params: op.params,
        bound,
        trials,
        seed,
        window,
        max_delta: 0.0,
        max_ratio: 0.0,
        max_residual: 0.0,
        violations: Vec::new(),
    };
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        let (set, delta, residual) = outcome?;
        let ratio = delta / bound;
        report.max_delta = report.max_delta.max(delta);
        report.max_ratio = report.max_ratio.max(ratio);
        report.max_residual = report.max_residual.max(residual);
        if ratio > 1.0 + 1e-9 {
            log::warn!("Delta g_A bound exceeded: trial {trial}, ratio {ratio}");
            report.violations.push(BoundViolation {
                trial,
                set,
                window,
                delta_sup: delta,
                ratio,
            });
        }
    }
    Ok(report)
}

/// Overdetermined banded system (one sub-diagonal, three super-diagonals)
/// solved in the least-squares sense by Givens rotations. Rows are stored on
/// the absolute columns `r-1..r+5`, which covers the fill-in of the rotations.
struct BandLsq {
    cols: usize,
    rows: Vec<[f64; 7]>,
}

impl BandLsq {
    fn new(rows: usize, cols: usize) -> Self {
        BandLsq {
            cols,
            rows: vec![[0.0; 7]; rows],
        }
    }

    fn slot(row: usize, col: usize) -> usize {
        let j = col + 1 - row;
        assert!(j < 7, "entry ({row},{col}) outside the band");
        j
    }

    fn get(&self, row: usize, col: usize) -> f64 {
        if col + 1 < row || col + 1 - row >= 7 || col >= self.cols {
            0.0
        } else {
            self.rows[row][col + 1 - row]
        }
    }

    fn add(&mut self, row: usize, col: usize, v: f64) {
        self.rows[row][Self::slot(row, col)] += v;
    }

    fn solve(mut self, mut b: Vec<f64>) -> Result<(Vec<f64>, f64)> {
        let n = self.cols;
        let m = self.rows.len();
        for c in 0..n {
            let r = c + 1;
            if r >= m {
                break;
            }
            let (x, y) = (self.get(c, c), self.get(r, c));
            if y == 0.0 {
                continue;
            }
            let h = x.hypot(y);
            let (cs, sn) = (x / h, y / h);
            for col in c..(c + 6).min(n) {
                let (u, v) = (self.get(c, col), self.get(r, col));
                let (nu, nv) = (cs * u + sn * v, -sn * u + cs * v);
                if col + 1 >= c && col + 1 - c < 7 {
                    self.rows[c][col + 1 - c] = nu;
                }
                if col >= r {
                    self.rows[r][Self::slot(r, col)] = nv;
                } else {
                    self.rows[r][Self::slot(r, col)] = 0.0;
                }
            }
            let (u, v) = (b[c], b[r]);
            b[c] = cs * u + sn * v;
            b[r] = -sn * u + cs * v;
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut acc = b[r];
            for col in r + 1..(r + 6).min(n) {
                acc -= self.get(r, col) * x[col];
            }
            let d = self.get(r, r);
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Numerical {
                    message: format!("rank-deficient Stein system at column {r}"),
                    residual: f64::INFINITY,
                });
            }
            x[r] = acc / d;
        }
        let lsq_residual = b[n..].iter().fold(0.0f64, |acc, v| acc.hypot(*v));
        Ok((x, lsq_residual))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{poisson_pmf, BinPoisParams, NegBinPoisParams, TriplePoisParams};

    fn m3(l: f64, w: f64, e: f64) -> SteinOperator {
        SteinOperator::new(FamilyParams::M3(TriplePoisParams::new(l, w, e).unwrap())).unwrap()
    }

    #[test]
    fn operator_examples() {
        let op = m3(1.0, 0.5, 0.25);
        let g = TestFunction::step(10);
        assert!((apply_operator(&op, &g, 0).unwrap() - 1.75).abs() < 1e-15);
        let zero = TestFunction::new(vec![0.0; 10], "zero").unwrap();
        assert_eq!(apply_operator(&op, &zero, 3).unwrap(), 0.0);
        let g = TestFunction::random(20, 3, 0);
        let poi = m3(2.0, 0.0, 0.0);
        for k in 0..15 {
            let want = 2.0 * g.get(k + 1).unwrap() - k as f64 * g.get(k).unwrap();
            assert!((apply_operator(&poi, &g, k).unwrap() - want).abs() < 1e-14);
        }
        assert!(matches!(apply_operator(&op, &g, 18), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn test_function_requires_zero_at_origin() {
        assert!(TestFunction::new(vec![1.0, 2.0], "bad").is_err());
    }

    #[test]
    fn identity_and_mismatch() {
        let op = m3(1.0, 0.5, 0.25);
        let pmf = op.params().pmf(1e-14).unwrap();
        let g = TestFunction::step(pmf.hi() as usize + 5);
        assert!(expectation_of_operator(&op, &g, &pmf).unwrap().abs() < 1e-10);

        let wrong = m3(2.0, 0.0, 0.0);
        let p1 = poisson_pmf(1.0, 1e-14).unwrap();
        let g = TestFunction::random(p1.hi() as usize + 5, 11, 0);
        let e_shift = kahan_sum(p1.iter().map(|(k, p)| p * g.get(k + 1).unwrap()));
        let got = expectation_of_operator(&wrong, &g, &p1).unwrap();
        assert!((got - e_shift).abs() < 1e-12 && got.abs() > 1e-3);
    }

    #[test]
    fn poisson_singleton_solution() {
        let op = m3(1.0, 0.0, 0.0);
        let set: BTreeSet<i64> = [0].into_iter().collect();
        let sol = solve_stein_equation(&op, &set, 40).unwrap();
        assert!((sol.g.get(1).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((sol.g.get(1).unwrap() - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn full_support_gives_zero() {
        let op = m3(1.0, 0.5, 0.25);
        let k = default_window(&op).unwrap();
        let set: BTreeSet<i64> = (0..=k as i64).collect();
        let sol = solve_stein_equation(&op, &set, k).unwrap();
        assert!(sol.g.sup_norm() < 1e-8);
    }

    #[test]
    fn m3_pair_residual() {
        let op = m3(1.0, 0.5, 0.25);
        let set: BTreeSet<i64> = [0, 1].into_iter().collect();
        let sol = solve_stein_equation(&op, &set, default_window(&op).unwrap()).unwrap();
        assert!(sol.residual <= RESIDUAL_LIMIT);
    }

    #[test]
    fn bounds_hold_for_examples() {
        let r = verify_delta_bound(&m3(4.0, 0.0, 0.0), 50, 1).unwrap();
        assert!(r.holds() && r.max_ratio <= 1.0, "{r:?}");
        let op = SteinOperator::new(FamilyParams::M2(NegBinPoisParams::new(10.0, 0.5, 1.0).unwrap())).unwrap();
        let r = verify_delta_bound(&op, 50, 2).unwrap();
        assert!(r.holds(), "{r:?}");
        let op = SteinOperator::new(FamilyParams::M1(BinPoisParams::new(30, 0.4, 1.0, 0.0).unwrap())).unwrap();
        let r = verify_delta_bound(&op, 50, 3).unwrap();
        assert!(r.holds(), "{r:?}");
        let err = verify_delta_bound(&m3(1.0, 1.0, 0.5), 5, 1).unwrap_err();
        assert!(err.is_infeasible());
    }
}
