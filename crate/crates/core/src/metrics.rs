//! Distances between integer laws, the second-difference smoothness
//! functional, and empirical laws from Monte Carlo samples.

use std::collections::BTreeMap;

use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::distributions::IntegerPmf;
use crate::error::{Error, Result};
use crate::par::{kahan_sum, map_indexed};
use crate::rng::{derive_seed, stream_rng};

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOTSTRAP_REPS: usize = 100;

const BOOTSTRAP_TAG: u64 = 0xB007_5742;

/// Half the l1 distance of the represented masses over Z.
pub fn total_variation(p: &IntegerPmf, q: &IntegerPmf) -> f64 {
    let lo = p.lo().min(q.lo());
    let hi = p.hi().max(q.hi());
    let half_l1 = 0.5 * kahan_sum((lo..=hi).map(|k| (p.prob(k) - q.prob(k)).abs()));
    half_l1.clamp(0.0, 1.0)
}

/// Worst-case change of [`total_variation`] caused by the unrepresented tails.
pub fn tail_band(p: &IntegerPmf, q: &IntegerPmf) -> f64 {
    0.5 * (p.tail_mass() + q.tail_mass())
}

/// `sup_a |P(a) - Q(a)|`.
pub fn local_distance(p: &IntegerPmf, q: &IntegerPmf) -> f64 {
    let lo = p.lo().min(q.lo());
    let hi = p.hi().max(q.hi());
    (lo..=hi)
        .map(|k| (p.prob(k) - q.prob(k)).abs())
        .fold(0.0, f64::max)
}

/// `sum_k |p_k - 2 p_{k-1} + p_{k-2}|` over all of Z (points outside the
/// window count as zero).
pub fn second_difference_norm(p: &IntegerPmf) -> f64 {
    kahan_sum((p.lo()..=p.hi() + 2).map(|k| {
        (p.prob(k) - 2.0 * p.prob(k - 1) + p.prob(k - 2)).abs()
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMethod {
    Exact,
    Plugin,
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceReport {
    pub dtv: f64,
    pub dloc: f64,
    pub s2_left: f64,
    pub s2_right: f64,
    /// Bootstrap standard error plus the tail band; only the tail band for exact inputs.
    pub std_error: f64,
    pub tail_bound: f64,
    pub method: DistanceMethod,
}

/// Full report between two tabulated laws.
pub fn compare_exact(p: &IntegerPmf, q: &IntegerPmf) -> DistanceReport {
    let band = tail_band(p, q);
    DistanceReport {
        dtv: total_variation(p, q),
        dloc: local_distance(p, q),
        s2_left: second_difference_norm(p),
        s2_right: second_difference_norm(q),
        std_error: band,
        tail_bound: band,
        method: DistanceMethod::Exact,
    }
}

/// Histogram of Monte Carlo draws of `W`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    pub counts: BTreeMap<i64, u64>,
    pub n_samples: u64,
    pub seed: u64,
    pub model_id: String,
}

impl EmpiricalDistribution {
    pub fn from_counts(counts: BTreeMap<i64, u64>, seed: u64, model_id: impl Into<String>) -> Result<Self> {
        let n_samples: u64 = counts.values().sum();
        if n_samples == 0 {
            return Err(Error::input("empirical distribution needs at least one sample"));
        }
        Ok(EmpiricalDistribution {
            counts,
            n_samples,
            seed,
            model_id: model_id.into(),
        })
    }

    pub fn to_pmf(&self) -> IntegerPmf {
        let lo = *self.counts.keys().next().expect("non-empty");
        let hi = *self.counts.keys().next_back().expect("non-empty");
        let mut probs = vec![0.0; (hi - lo + 1) as usize];
        for (&k, &c) in &self.counts {
            probs[(k - lo) as usize] = c as f64 / self.n_samples as f64;
        }
        IntegerPmf::new(lo, probs, 0.0, format!("empirical[{}; n={}]", self.model_id, self.n_samples))
            .expect("normalized counts")
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|(&k, &c)| k as f64 * c as f64).sum::<f64>() / self.n_samples as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.counts
            .iter()
            .map(|(&k, &c)| (k as f64 - m).powi(2) * c as f64)
            .sum::<f64>()
            / (self.n_samples as f64 - 1.0).max(1.0)
    }
}

pub fn empirical_pmf(samples: &[i64], seed: u64, model_id: &str) -> Result<EmpiricalDistribution> {
    if samples.is_empty() {
        return Err(Error::input("empirical distribution needs at least one sample"));
    }
    let mut counts = BTreeMap::new();
    for &s in samples {
        *counts.entry(s).or_insert(0u64) += 1;
    }
    EmpiricalDistribution::from_counts(counts, seed, model_id)
}

/// Half l1 distance between normalized counts and `q`.
fn plugin_dtv(points: &[i64], counts: &[u64], n: u64, q: &IntegerPmf) -> f64 {
    let nf = n as f64;
    let mut acc = Vec::with_capacity(points.len() + q.probs().len());
    let mut covered_q = 0.0;
    for (&k, &c) in points.iter().zip(counts) {
        let qk = q.prob(k);
        covered_q += qk;
        acc.push((c as f64 / nf - qk).abs());
    }
    // q mass at points with no samples
    acc.push((q.represented_mass() - covered_q).max(0.0));
    (0.5 * kahan_sum(acc)).clamp(0.0, 1.0)
}

/// Plug-in `d_TV(empirical, q)`, with a multinomial bootstrap standard error
/// when `bootstrap_reps > 0`.
pub fn dtv_empirical(e: &EmpiricalDistribution, q: &IntegerPmf, bootstrap_reps: usize) -> DistanceReport {
    let points: Vec<i64> = e.counts.keys().copied().collect();
    let counts: Vec<u64> = e.counts.values().copied().collect();
    let dtv = plugin_dtv(&points, &counts, e.n_samples, q);
    let p_hat = e.to_pmf();
    let band = 0.5 * q.tail_mass();
    let mut report = DistanceReport {
        dtv,
        dloc: local_distance(&p_hat, q),
        s2_left: second_difference_norm(&p_hat),
        s2_right: second_difference_norm(q),
        std_error: band,
        tail_bound: band,
        method: DistanceMethod::Plugin,
    };
    if bootstrap_reps > 0 {
        let seed = derive_seed(e.seed, BOOTSTRAP_TAG);
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / e.n_samples as f64).collect();
        let reps = map_indexed(bootstrap_reps, |b| {
            let resampled = multinomial(e.n_samples, &weights, seed, b as u64);
            plugin_dtv(&points, &resampled, e.n_samples, q)
        });
        let mean = kahan_sum(reps.iter().copied()) / reps.len() as f64;
        let var = kahan_sum(reps.iter().map(|x| (x - mean).powi(2))) / (reps.len().max(2) - 1) as f64;
        report.std_error = var.sqrt() + band;
        report.method = DistanceMethod::Bootstrap;
    }
    report
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial(n: u64, weights: &[f64], seed: u64, rep: u64) -> Vec<u64> {
    let mut rng = stream_rng(seed, rep);
    let mut remaining_n = n;
    let mut remaining_w = 1.0;
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        if remaining_n == 0 || remaining_w <= 0.0 {
            out.push(0);
            continue;
        }
        let p = (w / remaining_w).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining_n, p).expect("valid binomial").sample(&mut rng);
        out.push(draw);
        remaining_n -= draw;
        remaining_w -= w;
    }
    if let Some(last) = out.last_mut() {
        *last += remaining_n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{pmf_poisson, poisson_pmf};
    use rand::Rng;

    fn bern(p: f64) -> IntegerPmf {
        IntegerPmf::bernoulli(p).unwrap()
    }

    #[test]
    fn total_variation_examples() {
        let p = poisson_pmf(3.0, 1e-12).unwrap();
        assert_eq!(total_variation(&p, &p), 0.0);
        assert_eq!(total_variation(&IntegerPmf::point_mass(0), &IntegerPmf::point_mass(5)), 1.0);
        assert!((total_variation(&bern(0.5), &bern(0.75)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn local_distance_examples() {
        assert_eq!(local_distance(&IntegerPmf::point_mass(0), &IntegerPmf::point_mass(1)), 1.0);
        let p = poisson_pmf(3.0, 1e-12).unwrap();
        assert_eq!(local_distance(&p, &p), 0.0);
        assert!((local_distance(&bern(0.5), &bern(0.75)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn second_difference_examples() {
        assert_eq!(second_difference_norm(&IntegerPmf::point_mass(3)), 4.0);
        assert_eq!(second_difference_norm(&IntegerPmf::point_mass(-2)), 4.0);
        let cube = IntegerPmf::new(0, vec![0.125, 0.75, 0.125], 0.0, "").unwrap();
        assert!((second_difference_norm(&cube) - 2.5).abs() < 1e-15);
        let norms: Vec<f64> = [2.0, 8.0, 32.0, 128.0]
            .iter()
            .map(|&l| second_difference_norm(&poisson_pmf(l, 1e-14).unwrap()))
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        // O(1/lambda): lambda * S2 stays bounded along the sweep
        assert!(norms[3] * 128.0 < 2.0 * norms[1] * 8.0);
    }

    #[test]
    fn empirical_examples() {
        let e = empirical_pmf(&[3, 3, 3], 1, "const").unwrap();
        assert_eq!(e.to_pmf(), IntegerPmf::point_mass(3).with_meta(e.to_pmf().meta()));
        assert_eq!(e.n_samples, 3);
        let e = empirical_pmf(&vec![7; 11], 1, "const").unwrap();
        assert_eq!(e.n_samples, 11);
        assert!(empirical_pmf(&[], 1, "none").is_err());
    }

    #[test]
    fn plugin_contracts() {
        let q = IntegerPmf::new(0, vec![0.25, 0.5, 0.25], 0.0, "").unwrap();
        let e = EmpiricalDistribution::from_counts([(0, 1), (1, 2), (2, 1)].into_iter().collect(), 9, "exact").unwrap();
        let r = dtv_empirical(&e, &q, 0);
        assert_eq!(r.dtv, 0.0);
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.method, DistanceMethod::Plugin);
        let r = dtv_empirical(&e, &q, 50);
        assert_eq!(r.method, DistanceMethod::Bootstrap);
        assert!(r.std_error > 0.0);
    }

    fn poisson_draw(rng: &mut impl Rng, lambda: f64) -> i64 {
        let u: f64 = rng.random();
        let mut k = 0;
        let mut cdf = 0.0;
        loop {
            cdf += pmf_poisson(lambda, k).unwrap();
            if u <= cdf || k > 200 {
                return k;
            }
            k += 1;
        }
    }

    #[test]
    fn million_poisson_draws_are_close() {
        let mut rng = stream_rng(42, 0);
        let samples: Vec<i64> = (0..1_000_000).map(|_| poisson_draw(&mut rng, 5.0)).collect();
        let e = empirical_pmf(&samples, 42, "poisson5").unwrap();
        let q = poisson_pmf(5.0, 1e-12).unwrap();
        assert!(dtv_empirical(&e, &q, 0).dtv <= 0.01);
    }

    #[test]
    fn plugin_estimate_shrinks_with_samples() {
        let q = poisson_pmf(5.0, 1e-12).unwrap();
        let mut rng = stream_rng(3, 0);
        let mean_dtv = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            (0..5)
                .map(|_| {
                    let s: Vec<i64> = (0..n).map(|_| poisson_draw(rng, 5.0)).collect();
                    dtv_empirical(&empirical_pmf(&s, 0, "p").unwrap(), &q, 0).dtv
                })
                .sum::<f64>()
                / 5.0
        };
        let d: Vec<f64> = [1_000, 10_000, 100_000].iter().map(|&n| mean_dtv(n, &mut rng)).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        assert!(d.iter().all(|&x| x >= 0.0));
    }
}
