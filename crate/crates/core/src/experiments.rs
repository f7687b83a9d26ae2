//! End-to-end pipelines: bound brackets, distance measurements against the
//! intermediate families and the discretized normal, the triangle table and
//! its linear fit, and the colouring bound spot check.
//!
//! Every stochastic quantity is addressed by `(seed, cell, sample index)`, so
//! reports are reproducible for any worker count.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cumulants::{solve_family, solve_family_projected, Family, FamilyChoice};
use crate::distributions::{build_discretized_normal, poisson_pmf, FamilyParams, IntegerPmf, NormalParams};
use crate::error::{Error, Result};
use crate::localdep::{compute_gamma, compute_s_w, enumerate_exact_distribution, DependenceInstance};
use crate::metrics::{
    compare_exact, dtv_empirical, second_difference_norm, DistanceReport, EmpiricalDistribution,
    DEFAULT_BOOTSTRAP_REPS,
};
use crate::models::{build_model, build_mono_edges, model_analytics, Graph, ModelAnalytics, ModelSampler, ModelSpec};
use crate::par::{kahan_sum, map_indexed};
use crate::rng::{derive_seed, stream_rng};

/// Truncation accuracy for every tabulated target law.
pub const TARGET_EPS: f64 = 1e-12;

/// Approximating law a measurement compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Discretized normal with the exact mean and variance of `W`.
    Yd,
    M1,
    M2,
    M3,
    /// The classical one-parameter Poisson baseline of each model.
    PoissonRef,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::Yd, Target::M1, Target::M2, Target::M3, Target::PoissonRef];

    fn family(self) -> Option<Family> {
        match self {
            Target::M1 => Some(Family::M1),
            Target::M2 => Some(Family::M2),
            Target::M3 => Some(Family::M3),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Yd => "Yd",
            Target::M1 => "M1",
            Target::M2 => "M2",
            Target::M3 => "M3",
            Target::PoissonRef => "PoissonRef",
        })
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yd" | "normal" => Ok(Target::Yd),
            "m1" => Ok(Target::M1),
            "m2" => Ok(Target::M2),
            "m3" => Ok(Target::M3),
            "poissonref" | "poisson_ref" | "poisson" => Ok(Target::PoissonRef),
            other => Err(Error::input(format!("unknown target {other:?} (Yd, M1, M2, M3, PoissonRef)"))),
        }
    }
}

/// A tabulated target law and how it was parameterized.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetLaw {
    pub target: Target,
    pub label: String,
    pub params: Option<FamilyParams>,
    /// Non-empty when a projected (clamped) parameterization was used.
    pub adjustments: Vec<String>,
    #[serde(skip)]
    pub pmf: IntegerPmf,
}

/// Builds the target law from the exact cumulants of the model.
pub fn target_law(analytics: &ModelAnalytics, target: Target, project_valid: bool) -> Result<TargetLaw> {
    let g = analytics.cumulants();
    if let Some(family) = target.family() {
        let (params, adjustments) = if project_valid {
            let pr = solve_family_projected(family, &g, g.g1)?;
            (pr.params, pr.adjustments)
        } else {
            (solve_family(family, &g, g.g1)?, Vec::new())
        };
        let pmf = params.pmf(TARGET_EPS)?;
        let label = if adjustments.is_empty() {
            format!("{family} matched to exact cumulants")
        } else {
            format!("{family} projected onto valid parameters")
        };
        return Ok(TargetLaw {
            target,
            label,
            params: Some(params),
            adjustments,
            pmf,
        });
    }
    let (pmf, label) = match target {
        Target::Yd => {
            let normal = NormalParams::new(g.mean(), g.variance())?;
            (
                build_discretized_normal(&normal, TARGET_EPS)?,
                format!("Yd(mu={}, sigma2={})", normal.mu, normal.sigma2),
            )
        }
        _ => {
            // P(1) for the hypercube, P(C(n,k) d^(1-k)) for birthdays,
            // P(m/c) for colourings, P(mu) otherwise: all equal the mean.
            let lambda = g.mean();
            (poisson_pmf(lambda, TARGET_EPS)?, format!("P({lambda})"))
        }
    };
    Ok(TargetLaw {
        target,
        label,
        params: None,
        adjustments: Vec::new(),
        pmf,
    })
}

/// Options shared by the measuring pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    /// Monte Carlo sample count, used when exact enumeration does not fit.
    pub samples: u64,
    pub seed: u64,
    pub project_valid: bool,
    pub bootstrap_reps: usize,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            samples: 200_000,
            seed: 1,
            project_valid: false,
            bootstrap_reps: DEFAULT_BOOTSTRAP_REPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measurement {
    pub model: String,
    pub target: TargetLaw,
    /// Zero for exact enumeration.
    pub samples: u64,
    pub seed: u64,
    pub report: DistanceReport,
}

/// Law of `W`: exact when the instance is enumerable within its budget.
pub enum LawOfW {
    Exact(IntegerPmf),
    Sampled(EmpiricalDistribution),
}

/// Exact law if enumerable, otherwise `samples` Monte Carlo draws.
pub fn law_of_w(spec: &ModelSpec, samples: u64, seed: u64) -> Result<LawOfW> {
    if let Some(inst) = enumerable_instance(spec) {
        return Ok(LawOfW::Exact(enumerate_exact_distribution(&inst)?));
    }
    if samples == 0 {
        return Err(Error::input(format!("{spec} is not enumerable; a positive sample count is required")));
    }
    let counts = ModelSampler::new(spec)?.counts(samples, seed);
    Ok(LawOfW::Sampled(EmpiricalDistribution::from_counts(counts, seed, spec.id())?))
}

fn enumerable_instance(spec: &ModelSpec) -> Option<DependenceInstance> {
    let (inst, _) = build_model(spec).ok()?;
    (inst.num_configurations() <= inst.budget() as u128).then_some(inst)
}

/// `d_TV(W, target)`, exact when the model is enumerable.
pub fn measure_dtv(spec: &ModelSpec, target: Target, opts: &MeasureOptions) -> Result<Measurement> {
    let analytics = model_analytics(spec)?;
    let law = target_law(&analytics, target, opts.project_valid)?;
    let (report, samples) = match law_of_w(spec, opts.samples, opts.seed)? {
        LawOfW::Exact(pmf) => (compare_exact(&pmf, &law.pmf), 0),
        LawOfW::Sampled(emp) => (dtv_empirical(&emp, &law.pmf, opts.bootstrap_reps), opts.samples),
    };
    Ok(Measurement {
        model: spec.id(),
        target: law,
        samples,
        seed: opts.seed,
        report,
    })
}

/// A bracket input together with where it came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sourced {
    pub value: f64,
    pub source: String,
}

impl Sourced {
    fn new(value: f64, source: &str) -> Self {
        Sourced {
            value,
            source: source.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub model: ModelSpec,
    pub family: FamilyChoice,
    pub params: FamilyParams,
    pub adjustments: Vec<String>,
    pub gamma: Sourced,
    pub s_w: Sourced,
    pub theta: f64,
    pub mu: f64,
    pub sigma2: f64,
    /// `1 - p` for M1 and M2, 1 for M3.
    pub q: f64,
    /// Bracket for `d_TV(W, M_i)`.
    pub bracket_wm: f64,
    /// `1 / sigma`, the cost of the step from `M_i` to the discretized normal.
    pub bracket_normal_step: f64,
    /// `bracket_wm + bracket_normal_step`, the bracket for `d_TV(W, Yd)`.
    pub bracket_total: f64,
    pub s2_w: Sourced,
    pub s2_yd: f64,
    /// `sqrt(bracket_wm) * sqrt(S2(W) + S2(Yd))`, the local-distance bracket.
    pub bracket_dloc: f64,
    /// The model theorem's rate, constants omitted.
    pub theorem_rate: f64,
    pub rate_formula: String,
    /// Every bracket holds up to an unknown numeric constant.
    pub constant: String,
    /// `d_TV(W, Yd)` when the model is enumerable.
    pub measured_dtv: Option<DistanceReport>,
}

/// The `d_TV(W, M_i)` bracket for the family: `gamma S / ((1-2 theta) q mu) + 1/mu` (M1),
/// `(1 v q/p) gamma S / ((1-2 theta) mu)` (M2), `gamma S / ((1-2 theta) mu)` (M3).
/// Infinite when `theta >= 1/2`.
pub fn bracket_wm(family: Family, gamma: f64, s: f64, theta: f64, mu: f64, p: f64) -> f64 {
    if theta >= 0.5 {
        return f64::INFINITY;
    }
    let q = 1.0 - p;
    let core = gamma * s / ((1.0 - 2.0 * theta) * mu);
    match family {
        Family::M1 => core / q + 1.0 / mu,
        Family::M2 => (q / p).max(1.0) * core,
        Family::M3 => core,
    }
}

/// Leading orders of `gamma` and `S(W)` used in the published proofs.
fn plugin_orders(spec: &ModelSpec) -> (f64, f64) {
    match spec {
        ModelSpec::Hypercube { d } => {
            let d = *d as f64;
            (d.powi(3) * 2f64.powf(-3.0 * d), 4.0)
        }
        ModelSpec::Birthday { n, k, .. } => {
            let k = *k as f64;
            ((*n as f64).powf(-k / (k - 1.0)), 4.0)
        }
        ModelSpec::MonoEdges { graph, c } => {
            let (m, c, dmax) = (graph.num_edges() as f64, *c as f64, graph.max_degree() as f64);
            (m * dmax * dmax / c.powi(3), (c / m + dmax * dmax / c).min(4.0))
        }
        ModelSpec::Triangles { n, p } => {
            let n = *n as f64;
            (n.powi(5) * p.powi(7), (n * p).powi(-3).min(4.0))
        }
    }
}

/// Evaluates the bracket of the main theorem for the model. `gamma` and
/// `S(W)` are exact on enumerable instances and published leading orders
/// otherwise; the source of each is recorded.
pub fn evaluate_bound(spec: &ModelSpec, project_valid: bool) -> Result<BoundReport> {
    let analytics = model_analytics(spec)?;
    let g = analytics.cumulants();
    let family = analytics.exact_family;
    let (params, adjustments) = if project_valid {
        let pr = solve_family_projected(family.family, &g, g.g1)?;
        (pr.params, pr.adjustments)
    } else {
        (solve_family(family.family, &g, g.g1)?, Vec::new())
    };
    let theta = params.theta();
    if theta >= 0.5 && !project_valid {
        return Err(Error::Infeasible {
            family: family.family.to_string(),
            reason: format!("theta = {theta} >= 1/2; the Stein bounds do not apply (use --project-valid to report anyway)"),
            diagnostics: vec![("theta".to_string(), theta)],
        });
    }
    let p = match params {
        FamilyParams::M1(b) => b.p,
        FamilyParams::M2(nb) => nb.p,
        FamilyParams::M3(_) => 0.0,
    };
    let (mu, sigma2) = (g.mean(), g.variance());
    let normal = NormalParams::new(mu, sigma2)?;
    let yd = build_discretized_normal(&normal, TARGET_EPS)?;
    let s2_yd = second_difference_norm(&yd);

    let (gamma, s_w, s2_w, measured) = match enumerable_instance(spec) {
        Some(inst) => {
            let exact = enumerate_exact_distribution(&inst)?;
            (
                Sourced::new(compute_gamma(&inst)?, "exact enumeration"),
                Sourced::new(compute_s_w(&inst)?, "exact enumeration"),
                Sourced::new(second_difference_norm(&exact), "exact enumeration"),
                Some(compare_exact(&exact, &yd)),
            )
        }
        None => {
            let (gamma, s) = plugin_orders(spec);
            let fam_pmf = params.pmf(TARGET_EPS)?;
            (
                Sourced::new(gamma, "plug-in leading order"),
                Sourced::new(s, "plug-in leading order"),
                Sourced::new(second_difference_norm(&fam_pmf), "S2 of the matched family"),
                None,
            )
        }
    };
    let wm = bracket_wm(family.family, gamma.value, s_w.value, theta, mu, p);
    let normal_step = 1.0 / sigma2.sqrt();
    Ok(BoundReport {
        model: spec.clone(),
        family,
        params,
        adjustments,
        theta,
        mu,
        sigma2,
        q: if family.family == Family::M3 { 1.0 } else { 1.0 - p },
        bracket_wm: wm,
        bracket_normal_step: normal_step,
        bracket_total: wm + normal_step,
        bracket_dloc: wm.sqrt() * (s2_w.value + s2_yd).sqrt(),
        gamma,
        s_w,
        s2_w,
        s2_yd,
        theorem_rate: analytics.rate,
        rate_formula: analytics.rate_formula.clone(),
        constant: "x C".to_string(),
        measured_dtv: measured,
    })
}

// ------------------------------------------------------------------ triangle table

/// Grid of the triangle table.
pub const TABLE1_SIZES: [u32; 4] = [300, 400, 500, 600];
pub const TABLE1_EXPONENTS: [f64; 3] = [0.6, 0.7, 0.8];

/// Published table, rows by exponent, columns by size.
pub const TABLE1_PUBLISHED: [[f64; 4]; 3] = [
    [0.04600, 0.03589, 0.03360, 0.03050],
    [0.06490, 0.05900, 0.05100, 0.04727],
    [0.1198, 0.1112, 0.1074, 0.1015],
];

/// Published fit: slope and uncentered `R^2` of the regression through the origin.
pub const TABLE1_PUBLISHED_SLOPE: f64 = 0.7175;
pub const TABLE1_PUBLISHED_R2: f64 = 0.9736;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Row {
    pub n: u32,
    pub exponent: f64,
    pub p: f64,
    pub samples: u64,
    /// Plug-in `d_TV(W, Yd)`, half the l1 distance.
    pub dtv_estimate: f64,
    pub std_error: f64,
    /// `sum_k |P(W=k) - P(Yd=k)|`, the scale of the published table.
    pub l1_estimate: f64,
    pub seed: u64,
    /// `(N p)^(-3/2)`.
    pub x: f64,
    /// Published entry, for the twelve table cells.
    pub published: Option<f64>,
}

/// Least squares through the origin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OriginFit {
    pub slope: f64,
    /// `1 - SSE / sum y^2`, the convention of the published fit.
    pub r2: f64,
    /// `1 - SSE / sum (y - mean)^2`, for reference.
    pub r2_centered: f64,
}

pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<OriginFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::input("fit needs at least two (x, y) pairs of equal length"));
    }
    let sxx = kahan_sum(x.iter().map(|v| v * v));
    if sxx <= 0.0 {
        return Err(Error::input("fit needs a non-zero x"));
    }
    let slope = kahan_sum(x.iter().zip(y).map(|(a, b)| a * b)) / sxx;
    let sse = kahan_sum(x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)));
    let mean = kahan_sum(y.iter().copied()) / y.len() as f64;
    Ok(OriginFit {
        slope,
        r2: 1.0 - sse / kahan_sum(y.iter().map(|v| v * v)),
        r2_centered: 1.0 - sse / kahan_sum(y.iter().map(|v| (v - mean).powi(2))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
    /// Fit of `l1_estimate` against `x` (the published scale).
    pub fit: OriginFit,
    /// Fit of `dtv_estimate` against `x`; same `R^2`, half the slope.
    pub fit_half: OriginFit,
}

/// One table cell: `samples` draws of the triangle count of `G(n, n^-exponent)`
/// against the discretized normal with the exact mean and variance.
pub fn table1_cell(n: u32, exponent: f64, samples: u64, seed: u64, bootstrap_reps: usize) -> Result<Table1Row> {
    let p = (n as f64).powf(-exponent);
    let spec = ModelSpec::Triangles { n, p };
    let law = target_law(&model_analytics(&spec)?, Target::Yd, false)?;
    let counts = ModelSampler::new(&spec)?.counts(samples, seed);
    let emp = EmpiricalDistribution::from_counts(counts, seed, spec.id())?;
    let report = dtv_empirical(&emp, &law.pmf, bootstrap_reps);
    let col = TABLE1_SIZES.iter().position(|&s| s == n);
    let row = TABLE1_EXPONENTS.iter().position(|&e| e == exponent);
    Ok(Table1Row {
        n,
        exponent,
        p,
        samples,
        dtv_estimate: report.dtv,
        std_error: report.std_error,
        l1_estimate: 2.0 * report.dtv,
        seed,
        x: (n as f64 * p).powf(-1.5),
        published: row.zip(col).map(|(r, c)| TABLE1_PUBLISHED[r][c]),
    })
}

/// All twelve cells (rows by exponent, then size) and the fits. Cell `i`
/// uses the seed `derive_seed(seed, i)`.
pub fn reproduce_table1(samples: u64, seed: u64) -> Result<Table1Report> {
    if samples == 0 {
        return Err(Error::input("table reproduction needs a positive sample count"));
    }
    let mut rows = Vec::with_capacity(12);
    for (r, &e) in TABLE1_EXPONENTS.iter().enumerate() {
        for (c, &n) in TABLE1_SIZES.iter().enumerate() {
            let cell_seed = derive_seed(seed, (r * TABLE1_SIZES.len() + c) as u64);
            log::info!("table cell N={n}, exponent={e}");
            rows.push(table1_cell(n, e, samples, cell_seed, DEFAULT_BOOTSTRAP_REPS)?);
        }
    }
    let x: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let l1: Vec<f64> = rows.iter().map(|r| r.l1_estimate).collect();
    let half: Vec<f64> = rows.iter().map(|r| r.dtv_estimate).collect();
    Ok(Table1Report {
        fit: fit_through_origin(&x, &l1)?,
        fit_half: fit_through_origin(&x, &half)?,
        rows,
    })
}

/// Within each exponent row, estimates may increase with `N` by at most
/// `tol_se` pooled standard errors. Returns the offending `(exponent, N)` pairs.
pub fn table1_monotonicity_violations(rows: &[Table1Row], tol_se: f64) -> Vec<(f64, u32)> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.exponent != b.exponent || b.n <= a.n {
            continue;
        }
        let pooled = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        if b.dtv_estimate > a.dtv_estimate + tol_se * pooled {
            out.push((b.exponent, b.n));
        }
    }
    out
}

/// CSV header of distance artifacts.
pub const CSV_HEADER: &str = "model,N,p,target,samples,dtv,stderr,seed";

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "triangles,{},{:.17e},Yd,{},{:.17e},{:.17e},{}\n",
            r.n, r.p, r.samples, r.dtv_estimate, r.std_error, r.seed
        ));
    }
    out
}

/// Two whitespace-separated columns `x y` (the published scale), one cell per line.
pub fn table1_fit_data(rows: &[Table1Row]) -> String {
    let mut out = String::from("x y\n");
    for r in rows {
        out.push_str(&format!("{:.10} {:.10}\n", r.x, r.l1_estimate));
    }
    out
}

// ------------------------------------------------------------- colouring bound

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColouringTrial {
    pub vertices: usize,
    pub edges: usize,
    pub colours: u32,
    /// Probability that every edge is bichromatic.
    pub probability: f64,
    /// `1 - l / c`.
    pub lower_bound: f64,
    pub margin: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColouringReport {
    pub trials: Vec<ColouringTrial>,
    pub violations: usize,
    pub min_margin: f64,
    pub seed: u64,
}

/// Exact `P(no monochromatic edge)` by enumerating colourings, checked
/// against `1 - l/c`.
pub fn colouring_bound_check(graph: &Graph, c: u32) -> Result<ColouringTrial> {
    let (inst, _) = build_mono_edges(graph, c)?;
    let law = enumerate_exact_distribution(&inst)?;
    let probability = law.prob(0);
    let lower_bound = 1.0 - graph.num_edges() as f64 / c as f64;
    Ok(ColouringTrial {
        vertices: graph.num_vertices(),
        edges: graph.num_edges(),
        colours: c,
        probability,
        lower_bound,
        margin: probability - lower_bound,
        holds: probability >= lower_bound - 1e-15,
    })
}

/// Random graphs on 2..=`max_vertices` vertices with 2..=5 colours.
pub fn colouring_bound_spotcheck(trials: usize, seed: u64, max_vertices: usize) -> Result<ColouringReport> {
    if max_vertices < 2 {
        return Err(Error::param("graphs need at least two vertices"));
    }
    let results = map_indexed(trials, |t| {
        let mut rng = stream_rng(seed, t as u64);
        let v = rng.random_range(2..=max_vertices);
        let c = rng.random_range(2..=5u32);
        let density: f64 = rng.random_range(0.2..0.9);
        let mut edges: Vec<(usize, usize)> = (0..v)
            .flat_map(|a| (a + 1..v).map(move |b| (a, b)))
            .filter(|_| rng.random::<f64>() < density)
            .collect();
        if edges.is_empty() {
            edges.push((0, 1));
        }
        colouring_bound_check(&Graph::new(v, edges)?, c)
    });
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    let violations = trials.iter().filter(|t| !t.holds).count();
    let min_margin = trials.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min);
    Ok(ColouringReport {
        trials,
        violations,
        min_margin,
        seed,
    })
}
