//! Locally dependent integer variables built from independent sources.
//!
//! An instance is a finite family of independent discrete *sources* and a
//! list of variables `X_i`, each a deterministic function of a few sources
//! (its footprint). Two variables whose footprints are disjoint are
//! independent, so the neighbourhoods
//!
//! * `A_i`: variables whose footprint meets the footprint of `i`,
//! * `A_ij = A_i ∪ A_j`, `A_ijk = A_i ∪ A_j ∪ A_k`,
//!
//! satisfy the nesting and independence requirements by construction, with
//! `A_ii = A_i`. Small instances are enumerated exactly: the structural
//! quantities `gamma`, `S(W)`, `G1`, `G2` and the law of `W = sum X_i` are all
//! computed from one or more passes over the product space of the sources.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cumulants::{cumulants_from_moments, CumulantTriple, MomentTriple};
use crate::distributions::IntegerPmf;
use crate::error::{Error, Result};
use crate::metrics::second_difference_norm;
use crate::par::{map_indexed, tree_reduce, KahanSum};
use crate::rng::{derive_seed, stream_rng};

/// Default cap on the number of enumerated configurations.
pub const DEFAULT_BUDGET: u64 = 1 << 25;

/// Number of fixed partitions of the configuration space. Fixed, so that the
/// reduction tree and hence every floating-point result does not depend on
/// the number of workers.
const CHUNKS: u64 = 256;

const MC_TAG: u64 = 0x3C_5A3B_1E;

/// Law of one independent source, supported on `0..size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLaw {
    Uniform { size: u32 },
    Weighted { weights: Vec<f64> },
}

impl SourceLaw {
    pub fn uniform(size: u32) -> Result<Self> {
        if size == 0 {
            return Err(Error::param("uniform source needs at least one value"));
        }
        Ok(SourceLaw::Uniform { size })
    }

    /// Bernoulli source; `p = 1/2` is stored as a uniform law so that
    /// enumeration stays in exact integer arithmetic.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("Bernoulli p={p} must lie in [0,1]")));
        }
        if p == 0.5 {
            return Ok(SourceLaw::Uniform { size: 2 });
        }
        SourceLaw::weighted(vec![1.0 - p, p])
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("source weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("source weights sum to {total}, not 1")));
        }
        Ok(SourceLaw::Weighted { weights })
    }

    pub fn size(&self) -> u32 {
        match self {
            SourceLaw::Uniform { size } => *size,
            SourceLaw::Weighted { weights } => weights.len() as u32,
        }
    }

    pub fn prob(&self, v: usize) -> f64 {
        match self {
            SourceLaw::Uniform { size } => 1.0 / *size as f64,
            SourceLaw::Weighted { weights } => weights[v],
        }
    }

    fn is_uniform(&self) -> bool {
        matches!(self, SourceLaw::Uniform { .. })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> i64 {
        match self {
            SourceLaw::Uniform { size } => rng.random_range(0..*size) as i64,
            SourceLaw::Weighted { weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return v as i64;
                    }
                }
                (weights.len() - 1) as i64
            }
        }
    }
}

/// How a variable is computed from the values of its sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// 1 when all sources take the same value.
    AllEqual,
    Product,
    Sum,
    /// 1 when source `t` equals `targets[t]` for every `t`.
    Match { targets: Vec<i64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub sources: Vec<usize>,
    pub rule: Rule,
}

impl Variable {
    pub fn new(sources: Vec<usize>, rule: Rule) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::param("a variable needs at least one source"));
        }
        if let Rule::Match { targets } = &rule {
            if targets.len() != sources.len() {
                return Err(Error::param("match rule needs one target per source"));
            }
        }
        Ok(Variable { sources, rule })
    }

    fn eval(&self, src: &[i64]) -> i64 {
        let vals = self.sources.iter().map(|&s| src[s]);
        match &self.rule {
            Rule::AllEqual => {
                let first = src[self.sources[0]];
                i64::from(vals.into_iter().all(|v| v == first))
            }
            Rule::Product => vals.product(),
            Rule::Sum => vals.sum(),
            Rule::Match { targets } => i64::from(vals.zip(targets).all(|(v, t)| v == *t)),
        }
    }

    fn max_value(&self, sources: &[SourceLaw]) -> i64 {
        let top = |s: usize| sources[s].size() as i64 - 1;
        match &self.rule {
            Rule::AllEqual | Rule::Match { .. } => 1,
            Rule::Product => self.sources.iter().map(|&s| top(s)).product(),
            Rule::Sum => self.sources.iter().map(|&s| top(s)).sum(),
        }
    }
}

/// Sources, variables and the first-order neighbourhoods `A_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceInstance {
    name: String,
    sources: Vec<SourceLaw>,
    variables: Vec<Variable>,
    neighborhoods: Vec<Vec<usize>>,
    budget: u64,
}

impl DependenceInstance {
    /// Builds an instance with footprint-overlap neighbourhoods.
    pub fn new(name: impl Into<String>, sources: Vec<SourceLaw>, variables: Vec<Variable>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::param("an instance needs at least one variable"));
        }
        for (i, v) in variables.iter().enumerate() {
            if let Some(&s) = v.sources.iter().find(|&&s| s >= sources.len()) {
                return Err(Error::param(format!("variable {i} refers to missing source {s}")));
            }
        }
        let neighborhoods = footprint_neighborhoods(sources.len(), &variables);
        Ok(DependenceInstance {
            name: name.into(),
            sources,
            variables,
            neighborhoods,
            budget: DEFAULT_BUDGET,
        })
    }

    /// Replaces the neighbourhoods by larger, user-chosen ones.
    ///
    /// Every `A_i` must contain `i` and the footprint neighbourhood of `i`,
    /// otherwise the independence requirement could fail.
    pub fn with_neighborhoods(mut self, a: Vec<Vec<usize>>) -> Result<Self> {
        if a.len() != self.variables.len() {
            return Err(Error::param(format!(
                "{} neighbourhoods given for {} variables",
                a.len(),
                self.variables.len()
            )));
        }
        let mut sets = Vec::with_capacity(a.len());
        for (i, list) in a.into_iter().enumerate() {
            let set: BTreeSet<usize> = list.into_iter().collect();
            if let Some(&j) = set.iter().find(|&&j| j >= self.variables.len()) {
                return Err(Error::param(format!("A_{i} refers to missing variable {j}")));
            }
            if let Some(&j) = self.neighborhoods[i].iter().find(|j| !set.contains(j)) {
                return Err(Error::param(format!(
                    "A_{i} must contain {j}: their footprints overlap"
                )));
            }
            sets.push(set.into_iter().collect());
        }
        self.neighborhoods = sets;
        Ok(self)
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sources(&self) -> &[SourceLaw] {
        &self.sources
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// `A_i`, sorted.
    pub fn a_i(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    /// `A_ij = A_i ∪ A_j`, sorted; `A_ii = A_i`.
    pub fn a_ij(&self, i: usize, j: usize) -> Vec<usize> {
        union(&[self.a_i(i), self.a_i(j)])
    }

    /// `A_ijk = A_i ∪ A_j ∪ A_k`, sorted.
    pub fn a_ijk(&self, i: usize, j: usize, k: usize) -> Vec<usize> {
        union(&[self.a_i(i), self.a_i(j), self.a_i(k)])
    }

    /// Size of the product space of the sources.
    pub fn num_configurations(&self) -> u128 {
        self.sources
            .iter()
            .try_fold(1u128, |acc, s| acc.checked_mul(s.size() as u128))
            .unwrap_or(u128::MAX)
    }

    fn is_uniform(&self) -> bool {
        self.sources.iter().all(SourceLaw::is_uniform)
    }

    fn max_w(&self) -> i64 {
        self.variables.iter().map(|v| v.max_value(&self.sources)).sum()
    }

    fn eval_into(&self, src: &[i64], x: &mut [i64]) {
        for (xi, v) in x.iter_mut().zip(&self.variables) {
            *xi = v.eval(src);
        }
    }

    /// One draw of the source values.
    pub fn sample_sources(&self, rng: &mut ChaCha8Rng) -> Vec<i64> {
        self.sources.iter().map(|s| s.sample(rng)).collect()
    }

    /// Variable values for given source values.
    pub fn evaluate(&self, src: &[i64]) -> Vec<i64> {
        let mut x = vec![0; self.variables.len()];
        self.eval_into(src, &mut x);
        x
    }

    /// Draw number `index` of `W` for `seed`.
    pub fn sample_w(&self, seed: u64, index: u64) -> i64 {
        let mut rng = stream_rng(seed, index);
        let src = self.sample_sources(&mut rng);
        self.evaluate(&src).iter().sum()
    }

    fn check_budget(&self) -> Result<u64> {
        let needed = self.num_configurations();
        if needed > self.budget as u128 {
            return Err(Error::Budget {
                needed,
                budget: self.budget,
            });
        }
        Ok(needed as u64)
    }

    /// Runs `observe(acc, x, w)` over every configuration, with `w` the
    /// configuration weight, and returns the merged accumulator together with
    /// the total weight. For all-uniform sources every weight is 1, so sums of
    /// integer-valued functionals are exact.
    pub fn fold_configurations<A, M, O, R>(&self, make: M, observe: O, merge: R) -> Result<(A, f64)>
    where
        A: Send,
        M: Fn() -> A + Sync + Send,
        O: Fn(&mut A, &[i64], f64) + Sync + Send,
        R: Fn(A, A) -> A,
    {
        let total = self.check_budget()?;
        let uniform = self.is_uniform();
        let chunks = CHUNKS.min(total);
        let parts = map_indexed(chunks as usize, |c| {
            let start = total * c as u64 / chunks;
            let end = total * (c as u64 + 1) / chunks;
            let mut acc = make();
            self.fold_range(start, end, uniform, &mut acc, &observe);
            acc
        });
        let acc = tree_reduce(parts, merge).expect("at least one chunk");
        let weight = if uniform { total as f64 } else { 1.0 };
        Ok((acc, weight))
    }

    fn fold_range<A>(&self, start: u64, end: u64, uniform: bool, acc: &mut A, observe: &impl Fn(&mut A, &[i64], f64)) {
        if start >= end {
            return;
        }
        let sizes: Vec<i64> = self.sources.iter().map(|s| s.size() as i64).collect();
        let mut src = vec![0i64; sizes.len()];
        let mut rest = start;
        for (v, &m) in src.iter_mut().zip(&sizes) {
            *v = (rest % m as u64) as i64;
            rest /= m as u64;
        }
        let mut x = vec![0i64; self.variables.len()];
        for _ in start..end {
            self.eval_into(&src, &mut x);
            let w = if uniform {
                1.0
            } else {
                src.iter()
                    .zip(&self.sources)
                    .map(|(&v, s)| s.prob(v as usize))
                    .product()
            };
            if w > 0.0 {
                observe(acc, &x, w);
            }
            for (v, &m) in src.iter_mut().zip(&sizes) {
                *v += 1;
                if *v < m {
                    break;
                }
                *v = 0;
            }
        }
    }

    /// Like [`Self::fold_configurations`] over `samples` random configurations
    /// (weight 1 each), addressed by `(seed, index)`.
    pub fn fold_samples<A, M, O, R>(&self, samples: u64, seed: u64, make: M, observe: O, merge: R) -> (A, f64)
    where
        A: Send,
        M: Fn() -> A + Sync + Send,
        O: Fn(&mut A, &[i64], f64) + Sync + Send,
        R: Fn(A, A) -> A,
    {
        let chunks = CHUNKS.min(samples.max(1));
        let parts = map_indexed(chunks as usize, |c| {
            let start = samples * c as u64 / chunks;
            let end = samples * (c as u64 + 1) / chunks;
            let mut acc = make();
            let mut x = vec![0i64; self.variables.len()];
            for index in start..end {
                let mut rng = stream_rng(seed, index);
                let src = self.sample_sources(&mut rng);
                self.eval_into(&src, &mut x);
                observe(&mut acc, &x, 1.0);
            }
            acc
        });
        (tree_reduce(parts, merge).expect("at least one chunk"), samples as f64)
    }
}

fn union(sets: &[&[usize]]) -> Vec<usize> {
    let mut out: Vec<usize> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn footprint_neighborhoods(num_sources: usize, variables: &[Variable]) -> Vec<Vec<usize>> {
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); num_sources];
    for (i, v) in variables.iter().enumerate() {
        for &s in &v.sources {
            users[s].push(i);
        }
    }
    variables
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut set: Vec<usize> = v.sources.iter().flat_map(|&s| users[s].iter().copied()).collect();
            set.push(i);
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect()
}

fn merge_vec(mut a: Vec<KahanSum>, b: Vec<KahanSum>) -> Vec<KahanSum> {
    for (x, y) in a.iter_mut().zip(b) {
        *x = x.merge(y);
    }
    a
}

/// Weighted counts of `W = 0..=max_w` and the total weight.
fn w_counts(inst: &DependenceInstance) -> Result<(Vec<f64>, f64)> {
    let len = inst.max_w() as usize + 1;
    let (acc, total) = inst.fold_configurations(
        || vec![KahanSum::default(); len],
        |acc, x, w| acc[x.iter().sum::<i64>() as usize].add(w),
        merge_vec,
    )?;
    Ok((acc.iter().map(KahanSum::value).collect(), total))
}

/// Exact law of `W = sum X_i` by enumeration of every source configuration.
pub fn enumerate_exact_distribution(inst: &DependenceInstance) -> Result<IntegerPmf> {
    let (counts, total) = w_counts(inst)?;
    let lo = counts.iter().position(|&c| c > 0.0).unwrap_or(0);
    let hi = counts.iter().rposition(|&c| c > 0.0).unwrap_or(0);
    let weights: Vec<f64> = counts[lo..=hi].iter().map(|c| c / total).collect();
    IntegerPmf::new(lo as i64, weights, 0.0, format!("exact law of W for {}", inst.name))
}

/// Factorial cumulants of the enumerated law. For uniform source laws the
/// counts are integers and the cumulants are formed from exact integer
/// power sums, with a single rounding at the end.
pub fn exact_cumulants(inst: &DependenceInstance) -> Result<CumulantTriple> {
    let (counts, total) = w_counts(inst)?;
    if inst.is_uniform() {
        if let Some(g) = integer_cumulants(&counts) {
            return Ok(g);
        }
    }
    let m = |r: i32| -> f64 {
        let mut s = KahanSum::default();
        for (w, c) in counts.iter().enumerate() {
            s.add(c * (w as f64).powi(r));
        }
        s.value() / total
    };
    cumulants_from_moments(&MomentTriple {
        m1: m(1),
        m2: m(2),
        m3: m(3),
    })
}

fn integer_cumulants(counts: &[f64]) -> Option<CumulantTriple> {
    let mut s = [0i128; 4];
    for (w, &c) in counts.iter().enumerate() {
        let c = c as i128;
        let w = w as i128;
        s[0] = s[0].checked_add(c)?;
        s[1] = s[1].checked_add(c.checked_mul(w)?)?;
        s[2] = s[2].checked_add(c.checked_mul(w.checked_mul(w)?)?)?;
        s[3] = s[3].checked_add(c.checked_mul(w.checked_pow(3)?)?)?;
    }
    let [n, s1, s2, s3] = s;
    // Gamma_2 N^2 = (N S2 - S1^2) - N S1
    let k2 = n.checked_mul(s2)?.checked_sub(s1.checked_mul(s1)?)?;
    let g2 = k2.checked_sub(n.checked_mul(s1)?)?;
    // Gamma_3 N^3 = (N^2 S3 - 3 N S1 S2 + 2 S1^3) - 3 N k2 + 2 N^2 S1
    let nn = n.checked_mul(n)?;
    let k3 = nn
        .checked_mul(s3)?
        .checked_sub(3i128.checked_mul(n)?.checked_mul(s1)?.checked_mul(s2)?)?
        .checked_add(2i128.checked_mul(s1.checked_pow(3)?)?)?;
    let g3 = k3
        .checked_sub(3i128.checked_mul(n)?.checked_mul(k2)?)?
        .checked_add(2i128.checked_mul(nn)?.checked_mul(s1)?)?;
    let nf = n as f64;
    Some(CumulantTriple::new(
        s1 as f64 / nf,
        g2 as f64 / (nf * nf),
        g3 as f64 / (nf * nf * nf),
    ))
}

/// Pair index over `(i, j)` with `j` in `A_i`, plus the sets `A_j \ A_i`.
struct PairTable {
    offset: Vec<usize>,
    /// `A_j \ A_i` for each pair, i.e. the indices summed in `T_ij`.
    outside: Vec<Vec<usize>>,
}

impl PairTable {
    fn new(inst: &DependenceInstance) -> Self {
        let mut offset = Vec::with_capacity(inst.len() + 1);
        let mut outside = Vec::new();
        offset.push(0);
        for i in 0..inst.len() {
            let ai = inst.a_i(i);
            for &j in ai {
                outside.push(inst.a_i(j).iter().copied().filter(|k| ai.binary_search(k).is_err()).collect());
            }
            offset.push(outside.len());
        }
        PairTable { offset, outside }
    }
}

#[derive(Clone)]
struct GAcc {
    ex: Vec<KahanSum>,
    /// `E X_i X_j` per pair.
    exx: Vec<KahanSum>,
    /// `E X_j T_ij` per pair.
    ext: Vec<KahanSum>,
    /// `E S_i (S_i - 1)`.
    ess: Vec<KahanSum>,
    /// `sum_i E X_i (S_i - 1)`.
    a1: KahanSum,
    /// `sum_i E X_i sum_{j in A_i} X_j T_ij`.
    a2: KahanSum,
    /// `sum_i E X_i (S_i - 1)(S_i - 2)`.
    a3: KahanSum,
}

impl GAcc {
    fn new(n: usize, pairs: usize) -> Self {
        GAcc {
            ex: vec![KahanSum::default(); n],
            exx: vec![KahanSum::default(); pairs],
            ext: vec![KahanSum::default(); pairs],
            ess: vec![KahanSum::default(); n],
            a1: KahanSum::default(),
            a2: KahanSum::default(),
            a3: KahanSum::default(),
        }
    }

    fn merge(self, o: GAcc) -> GAcc {
        GAcc {
            ex: merge_vec(self.ex, o.ex),
            exx: merge_vec(self.exx, o.exx),
            ext: merge_vec(self.ext, o.ext),
            ess: merge_vec(self.ess, o.ess),
            a1: self.a1.merge(o.a1),
            a2: self.a2.merge(o.a2),
            a3: self.a3.merge(o.a3),
        }
    }
}

/// `(G1, G2)` evaluated from their definitions, summed over `i in J`:
///
/// * `G1 = sum_i [E X_i E S_i - E X_i (S_i - 1)]`,
/// * `G2 = sum_i { sum_{j in A_i} E X_i E[X_j T_ij] - E[X_i sum_{j in A_i} X_j T_ij]
///   - sum_{j in A_i} E X_i E X_j E U_ij + sum_{j in A_i} E[X_i X_j] E U_ij - E X_i E U_ii
///   + E X_i E[S_i (S_i - 1)] / 2 - E[X_i (S_i - 1)(S_i - 2)] / 2 }`,
///
/// where `S_i = sum_{A_i} X`, `T_ij = sum_{A_ij \ A_i} X` and `U_ij = sum_{A_ij} X`.
/// The `-1` that accompanies `X_j` in the definition only acts at `j = i`,
/// where `A_ii = A_i` makes `T_ii = 0` and `U_ii = S_i`.
pub fn compute_g1_g2(inst: &DependenceInstance) -> Result<(f64, f64)> {
    let n = inst.len();
    let pairs = PairTable::new(inst);
    let npairs = pairs.outside.len();
    let (acc, total) = inst.fold_configurations(
        || GAcc::new(n, npairs),
        |acc, x, w| {
            let mut a2 = 0i64;
            let mut a1 = 0i64;
            let mut a3 = 0i64;
            for i in 0..n {
                let ai = inst.a_i(i);
                let s: i64 = ai.iter().map(|&j| x[j]).sum();
                acc.ex[i].add(w * x[i] as f64);
                acc.ess[i].add(w * (s * (s - 1)) as f64);
                a1 += x[i] * (s - 1);
                a3 += x[i] * (s - 1) * (s - 2);
                let mut inner = 0i64;
                for (slot, &j) in (pairs.offset[i]..pairs.offset[i + 1]).zip(ai) {
                    let t: i64 = pairs.outside[slot].iter().map(|&k| x[k]).sum();
                    acc.exx[slot].add(w * (x[i] * x[j]) as f64);
                    acc.ext[slot].add(w * (x[j] * t) as f64);
                    inner += x[j] * t;
                }
                a2 += x[i] * inner;
            }
            acc.a1.add(w * a1 as f64);
            acc.a2.add(w * a2 as f64);
            acc.a3.add(w * a3 as f64);
        },
        GAcc::merge,
    )?;
    let e = |s: &KahanSum| s.value() / total;
    let ex: Vec<f64> = acc.ex.iter().map(e).collect();
    let mut g1 = KahanSum::default();
    let mut g2 = KahanSum::default();
    for i in 0..n {
        let ai = inst.a_i(i);
        let es: f64 = ai.iter().map(|&j| ex[j]).sum();
        g1.add(ex[i] * es);
        for (slot, &j) in (pairs.offset[i]..pairs.offset[i + 1]).zip(ai) {
            let eu = es + pairs.outside[slot].iter().map(|&k| ex[k]).sum::<f64>();
            g2.add(ex[i] * e(&acc.ext[slot]));
            g2.add(-ex[i] * ex[j] * eu);
            g2.add(e(&acc.exx[slot]) * eu);
        }
        g2.add(-ex[i] * es);
        g2.add(0.5 * ex[i] * e(&acc.ess[i]));
    }
    g1.add(-e(&acc.a1));
    g2.add(-e(&acc.a2));
    g2.add(-0.5 * e(&acc.a3));
    Ok((g1.value(), g2.value()))
}

/// Index of sorted index tuples (up to length 4) whose joint moments are needed.
#[derive(Default)]
struct MomentIndex {
    slots: HashMap<Vec<usize>, usize>,
    keys: Vec<Vec<usize>>,
}

impl MomentIndex {
    fn slot(&mut self, idx: &[usize]) -> usize {
        let mut key = idx.to_vec();
        key.sort_unstable();
        if let Some(&s) = self.slots.get(&key) {
            return s;
        }
        let s = self.keys.len();
        self.slots.insert(key.clone(), s);
        self.keys.push(key);
        s
    }
}

/// One addend of `gamma`: products of joint moments addressed by slot.
enum GammaTerm {
    /// `(E[X_i X_j] + E X_i E X_j)(E[X_k X_l] + E X_k E X_l)`.
    First { ij: usize, kl: usize, i: usize, j: usize, k: usize, l: usize },
    /// `E[X_i X_j X_k X_l] + E X_i E[X_j X_k X_l] + E[X_i X_j X_k] E X_l + E X_i E[X_j X_k] E X_l`.
    Second { ijkl: usize, jkl: usize, ijk: usize, jk: usize, i: usize, l: usize },
}

struct GammaPlan {
    moments: MomentIndex,
    singles: Vec<usize>,
    terms: Vec<GammaTerm>,
}

fn gamma_plan(inst: &DependenceInstance) -> GammaPlan {
    let mut m = MomentIndex::default();
    let singles: Vec<usize> = (0..inst.len()).map(|i| m.slot(&[i])).collect();
    let mut terms = Vec::new();
    for i in 0..inst.len() {
        let ai = inst.a_i(i);
        for &j in ai.iter().filter(|&&j| j != i) {
            let aij = inst.a_ij(i, j);
            let ij = m.slot(&[i, j]);
            for &k in &aij {
                let in_ai = ai.binary_search(&k).is_ok();
                for &l in &inst.a_ijk(i, j, k) {
                    terms.push(GammaTerm::First {
                        ij,
                        kl: m.slot(&[k, l]),
                        i,
                        j,
                        k,
                        l,
                    });
                    if !in_ai {
                        terms.push(GammaTerm::Second {
                            ijkl: m.slot(&[i, j, k, l]),
                            jkl: m.slot(&[j, k, l]),
                            ijk: m.slot(&[i, j, k]),
                            jk: m.slot(&[j, k]),
                            i,
                            l,
                        });
                    }
                }
            }
        }
    }
    GammaPlan {
        moments: m,
        singles,
        terms,
    }
}

fn gamma_from_moments(plan: &GammaPlan, mom: &[f64]) -> f64 {
    let e1 = |v: usize| mom[plan.singles[v]];
    let mut acc = KahanSum::default();
    for t in &plan.terms {
        let v = match *t {
            GammaTerm::First { ij, kl, i, j, k, l } => {
                (mom[ij] + e1(i) * e1(j)) * (mom[kl] + e1(k) * e1(l))
            }
            GammaTerm::Second { ijkl, jkl, ijk, jk, i, l } => {
                mom[ijkl] + e1(i) * mom[jkl] + mom[ijk] * e1(l) + e1(i) * mom[jk] * e1(l)
            }
        };
        acc.add(v);
    }
    acc.value()
}

fn moment_observer(keys: &[Vec<usize>]) -> impl Fn(&mut Vec<KahanSum>, &[i64], f64) + Sync + Send + '_ {
    move |acc, x, w| {
        for (slot, key) in acc.iter_mut().zip(keys) {
            let p: i64 = key.iter().map(|&v| x[v]).product();
            if p != 0 {
                slot.add(w * p as f64);
            }
        }
    }
}

/// `gamma = sum_i gamma_i`, each optional expectation split expanded into its
/// four combinations, from exactly enumerated joint moments.
pub fn compute_gamma(inst: &DependenceInstance) -> Result<f64> {
    let plan = gamma_plan(inst);
    let keys = &plan.moments.keys;
    let (acc, total) = inst.fold_configurations(
        || vec![KahanSum::default(); keys.len()],
        moment_observer(keys),
        merge_vec,
    )?;
    let mom: Vec<f64> = acc.iter().map(|s| s.value() / total).collect();
    Ok(gamma_from_moments(&plan, &mom))
}

/// Monte Carlo estimate of `gamma` with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
}

/// Estimates `gamma` from `samples` sampled configurations split into 20 batches.
pub fn compute_gamma_monte_carlo(inst: &DependenceInstance, samples: u64, seed: u64) -> Result<GammaEstimate> {
    const BATCHES: u64 = 20;
    if samples < BATCHES * 10 {
        return Err(Error::param(format!("need at least {} samples", BATCHES * 10)));
    }
    let plan = gamma_plan(inst);
    let keys = &plan.moments.keys;
    let per = samples / BATCHES;
    let base = derive_seed(seed, MC_TAG);
    let batches: Vec<Vec<f64>> = (0..BATCHES)
        .map(|b| {
            let (acc, total) = inst.fold_samples(
                per,
                derive_seed(base, b),
                || vec![KahanSum::default(); keys.len()],
                moment_observer(keys),
                merge_vec,
            );
            acc.iter().map(|s| s.value() / total).collect()
        })
        .collect();
    let pooled: Vec<f64> = (0..keys.len())
        .map(|s| batches.iter().map(|b| b[s]).sum::<f64>() / BATCHES as f64)
        .collect();
    let value = gamma_from_moments(&plan, &pooled);
    let estimates: Vec<f64> = batches.iter().map(|b| gamma_from_moments(&plan, b)).collect();
    let mean = estimates.iter().sum::<f64>() / BATCHES as f64;
    let var = estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok(GammaEstimate {
        value,
        std_error: (var / BATCHES as f64).sqrt(),
        samples: per * BATCHES,
        seed,
    })
}

/// Distinct sets `A_ijk` over `i in J, j in A_i, k in A_ij`.
fn distinct_triple_sets(inst: &DependenceInstance) -> Vec<Vec<usize>> {
    let mut sets = BTreeSet::new();
    for i in 0..inst.len() {
        for &j in inst.a_i(i) {
            for k in inst.a_ij(i, j) {
                sets.insert(inst.a_ijk(i, j, k));
            }
        }
    }
    sets.into_iter().collect()
}

/// Worst conditional second-difference norm of `W` given `X_{A_ijk}`, over all
/// index triples and all conditioning values of positive probability.
pub fn compute_s_w(inst: &DependenceInstance) -> Result<f64> {
    inst.check_budget()?;
    let sets = distinct_triple_sets(inst);
    let per_set = map_indexed(sets.len(), |s| conditional_s2_max(inst, &sets[s]));
    let mut best = 0.0f64;
    for v in per_set {
        best = best.max(v?);
    }
    Ok(best)
}

type Conditional = HashMap<Vec<i64>, (KahanSum, HashMap<i64, KahanSum>)>;

fn conditional_s2_max(inst: &DependenceInstance, set: &[usize]) -> Result<f64> {
    let (groups, _) = inst.fold_configurations(
        Conditional::new,
        |acc, x, w| {
            let key: Vec<i64> = set.iter().map(|&v| x[v]).collect();
            let entry = acc.entry(key).or_default();
            entry.0.add(w);
            entry.1.entry(x.iter().sum()).or_default().add(w);
        },
        |mut a, b| {
            for (key, (tw, law)) in b {
                let entry = a.entry(key).or_default();
                entry.0 = entry.0.merge(tw);
                for (k, v) in law {
                    let slot = entry.1.entry(k).or_default();
                    *slot = slot.merge(v);
                }
            }
            a
        },
    )?;
    let mut best = 0.0f64;
    for (tw, law) in groups.values() {
        let total = tw.value();
        if total <= 0.0 {
            continue;
        }
        let lo = *law.keys().min().expect("non-empty group");
        let hi = *law.keys().max().expect("non-empty group");
        let probs: Vec<f64> = (lo..=hi)
            .map(|k| law.get(&k).map_or(0.0, |s| s.value() / total))
            .collect();
        let pmf = IntegerPmf::new(lo, probs, 0.0, "conditional law")?;
        best = best.max(second_difference_norm(&pmf));
    }
    Ok(best)
}

/// `gamma`, `S(W)`, `G1`, `G2` of an exact instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StructuralReport {
    pub gamma: f64,
    pub s_w: f64,
    pub g1: f64,
    pub g2: f64,
}

pub fn structural_report(inst: &DependenceInstance) -> Result<StructuralReport> {
    let (g1, g2) = compute_g1_g2(inst)?;
    Ok(StructuralReport {
        gamma: compute_gamma(inst)?,
        s_w: compute_s_w(inst)?,
        g1,
        g2,
    })
}

/// Result of checking the nesting and independence requirements.
#[derive(Clone, Debug, Serialize)]
pub struct StructureCheck {
    pub nesting_ok: bool,
    pub checks: usize,
    pub max_deviation: f64,
    pub violations: Vec<String>,
}

impl StructureCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.nesting_ok && self.max_deviation <= tol
    }
}

/// Verifies `i in A_i ⊆ A_ij ⊆ A_ijk` and that the joint law of the inner
/// variables and the variables outside the neighbourhood factorizes, for
/// singletons, pairs `j in A_i` and triples `k in A_ij` (at most `max_checks`
/// independence tests in a fixed order).
pub fn verify_structure(inst: &DependenceInstance, max_checks: usize) -> Result<StructureCheck> {
    let mut violations = Vec::new();
    let mut nesting_ok = true;
    let mut tests: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for i in 0..inst.len() {
        let ai = inst.a_i(i);
        if ai.binary_search(&i).is_err() {
            nesting_ok = false;
            violations.push(format!("{i} not in A_{i}"));
        }
        tests.push((vec![i], ai.to_vec()));
        for &j in ai {
            let aij = inst.a_ij(i, j);
            if !is_subset(ai, &aij) {
                nesting_ok = false;
                violations.push(format!("A_{i} not inside A_{i}{j}"));
            }
            tests.push((vec![i, j], aij.clone()));
            for &k in &aij {
                let aijk = inst.a_ijk(i, j, k);
                if !is_subset(&aij, &aijk) {
                    nesting_ok = false;
                    violations.push(format!("A_{i}{j} not inside A_{i}{j}{k}"));
                }
                tests.push((vec![i, j, k], aijk));
            }
        }
    }
    tests.sort();
    tests.dedup();
    tests.truncate(max_checks);
    let devs = map_indexed(tests.len(), |t| factorization_gap(inst, &tests[t].0, &tests[t].1));
    let mut max_deviation = 0.0f64;
    for ((inner, hood), dev) in tests.iter().zip(devs) {
        let dev = dev?;
        if dev > 1e-12 {
            violations.push(format!("{inner:?} not independent of the complement of {hood:?} (gap {dev:e})"));
        }
        max_deviation = max_deviation.max(dev);
    }
    Ok(StructureCheck {
        nesting_ok,
        checks: tests.len(),
        max_deviation,
        violations,
    })
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|v| b.binary_search(v).is_ok())
}

type JointTable = HashMap<(Vec<i64>, Vec<i64>), KahanSum>;

/// `max |P(inner = a, outside = y) - P(inner = a) P(outside = y)|`.
fn factorization_gap(inst: &DependenceInstance, inner: &[usize], hood: &[usize]) -> Result<f64> {
    let outside: Vec<usize> = (0..inst.len()).filter(|v| hood.binary_search(v).is_err()).collect();
    if outside.is_empty() {
        return Ok(0.0);
    }
    let (joint, total) = inst.fold_configurations(
        JointTable::new,
        |acc, x, w| {
            let a: Vec<i64> = inner.iter().map(|&v| x[v]).collect();
            let y: Vec<i64> = outside.iter().map(|&v| x[v]).collect();
            acc.entry((a, y)).or_default().add(w);
        },
        |mut a, b| {
            for (k, v) in b {
                let slot = a.entry(k).or_default();
                *slot = slot.merge(v);
            }
            a
        },
    )?;
    let mut left: HashMap<&Vec<i64>, f64> = HashMap::new();
    let mut right: HashMap<&Vec<i64>, f64> = HashMap::new();
    for ((a, y), w) in &joint {
        *left.entry(a).or_default() += w.value() / total;
        *right.entry(y).or_default() += w.value() / total;
    }
    let mut gap = 0.0f64;
    for (a, pa) in &left {
        for (y, py) in &right {
            let pj = joint
                .get(&((*a).clone(), (*y).clone()))
                .map_or(0.0, |w| w.value() / total);
            gap = gap.max((pj - pa * py).abs());
        }
    }
    Ok(gap)
}

/// `n` variables `X_i = rule(Y_i, ..., Y_{i+m})` over iid sources with law
/// `base`; `A_i = [i-m, i+m] ∩ J` and `X_i` is independent of `X_j` whenever
/// `|i - j| > m`.
pub fn m_dependent_instance(base: SourceLaw, rule: Rule, n: usize, m: usize) -> Result<DependenceInstance> {
    if n == 0 {
        return Err(Error::param("m-dependent instance needs n >= 1"));
    }
    if m >= n {
        return Err(Error::param(format!("need m < n, got m={m}, n={n}")));
    }
    if matches!(rule, Rule::Match { .. }) {
        return Err(Error::param("match rules need explicit targets per variable"));
    }
    let sources = vec![base; n + m];
    let variables = (0..n)
        .map(|i| Variable::new((i..=i + m).collect(), rule.clone()))
        .collect::<Result<Vec<_>>>()?;
    DependenceInstance::new(format!("{m}-dependent chain, n={n}"), sources, variables)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    name: Option<String>,
    budget: Option<u64>,
    sources: Vec<SourceSpec>,
    variables: Vec<VariableSpec>,
    neighborhoods: Option<Vec<Vec<usize>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSpec {
    uniform: Option<u32>,
    weights: Option<Vec<f64>>,
    repeat: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableSpec {
    rule: String,
    sources: Vec<usize>,
    targets: Option<Vec<i64>>,
    repeat: Option<usize>,
    stride: Option<usize>,
}

/// Parses an instance description:
///
/// ```toml
/// name = "overlapping pairs"
/// [[sources]]
/// uniform = 2        # or: weights = [0.7, 0.3]
/// repeat = 7
/// [[variables]]
/// rule = "product"   # all_equal | product | sum | match (with targets = [...])
/// sources = [0, 1]
/// repeat = 6         # copies shifted by `stride` (default 1)
/// ```
///
/// An optional `neighborhoods = [[...], ...]` enlarges the footprint
/// neighbourhoods `A_i`.
pub fn parse_instance(text: &str) -> Result<DependenceInstance> {
    let file: InstanceFile = toml::from_str(text).map_err(|e| Error::input(e.to_string()))?;
    let mut sources = Vec::new();
    for (n, s) in file.sources.iter().enumerate() {
        let law = match (s.uniform, &s.weights) {
            (Some(size), None) => SourceLaw::uniform(size)?,
            (None, Some(w)) => SourceLaw::weighted(w.clone())?,
            _ => {
                return Err(Error::input(format!(
                    "source entry {n} needs exactly one of `uniform` or `weights`"
                )))
            }
        };
        sources.extend(std::iter::repeat_n(law, s.repeat.unwrap_or(1)));
    }
    let mut variables = Vec::new();
    for (n, v) in file.variables.iter().enumerate() {
        let rule = match (v.rule.as_str(), &v.targets) {
            ("all_equal", None) => Rule::AllEqual,
            ("product", None) => Rule::Product,
            ("sum", None) => Rule::Sum,
            ("match", Some(t)) => Rule::Match { targets: t.clone() },
            (other, _) => {
                return Err(Error::input(format!(
                    "variable entry {n}: unknown rule `{other}` or misplaced `targets`"
                )))
            }
        };
        let stride = v.stride.unwrap_or(1);
        for copy in 0..v.repeat.unwrap_or(1) {
            let shifted = v.sources.iter().map(|s| s + copy * stride).collect();
            variables.push(Variable::new(shifted, rule.clone())?);
        }
    }
    let mut inst = DependenceInstance::new(file.name.unwrap_or_else(|| "user instance".into()), sources, variables)?;
    if let Some(a) = file.neighborhoods {
        inst = inst.with_neighborhoods(a)?;
    }
    if let Some(b) = file.budget {
        inst = inst.with_budget(b);
    }
    Ok(inst)
}

pub fn load_instance(path: &Path) -> Result<DependenceInstance> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    parse_instance(&text)
}
