//! Command implementations. Each returns the text printed to stdout and the
//! artifacts to persist; nothing here touches the file system except reading
//! a graph file.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use locdep::cumulants::{select_family, solve_family, solve_family_projected, DEFAULT_RHO0};
use locdep::distributions::{
    build_discretized_normal, BinPoisParams, NegBinPoisParams, NormalParams, TriplePoisParams,
};
use locdep::experiments::{
    evaluate_bound, colouring_bound_spotcheck, measure_dtv, reproduce_table1, table1_csv, table1_fit_data,
    table1_monotonicity_violations, MeasureOptions, Target, CSV_HEADER, TABLE1_PUBLISHED_R2, TABLE1_PUBLISHED_SLOPE,
};
use locdep::localdep::{compute_g1_g2, enumerate_exact_distribution, exact_cumulants};
use locdep::models::{build_model, model_analytics, Graph, ModelSampler, ModelSpec};
use locdep::stein::{verify_delta_bound, SteinOperator};
use locdep::{CumulantTriple, Family, FamilyParams, IntegerPmf};

use crate::config::{Command, ModelConfig, ParamsConfig, RunConfig};

/// Tolerance of the `G1, G2` identity check.
const LEMMA24_TOL: f64 = 1e-10;
/// Largest graph drawn by `colouring-verify`.
const COLOURING_MAX_VERTICES: usize = 6;

pub struct Artifact {
    pub name: String,
    pub contents: String,
}

pub struct Outcome {
    pub summary: String,
    pub artifacts: Vec<Artifact>,
    /// False when a checked property failed.
    pub verified: bool,
}

impl Outcome {
    fn new(summary: String) -> Self {
        Outcome {
            summary,
            artifacts: Vec::new(),
            verified: true,
        }
    }

    fn with(mut self, name: &str, contents: String) -> Self {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents,
        });
        self
    }

    fn with_json<T: Serialize>(self, name: &str, value: &T) -> Self {
        let text = serde_json::to_string_pretty(value).expect("results serialize") + "\n";
        self.with(name, text)
    }
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command {
        Command::SolveParams => solve_params(cfg),
        Command::Pmf => pmf(cfg),
        Command::Dist => dist(cfg),
        Command::Simulate => simulate(cfg),
        Command::Enumerate => enumerate(cfg),
        Command::Bounds => bounds(cfg),
        Command::Table1 => table1(cfg),
        Command::SteinVerify => stein_verify(cfg),
        Command::Lemma24Verify => lemma24_verify(cfg),
        Command::ColouringVerify => colouring_verify(cfg),
    }
}

fn seed(cfg: &RunConfig) -> u64 {
    cfg.seed.expect("validated: stochastic commands carry a seed")
}

fn require<T: Copy>(v: Option<T>, flag: &str, what: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("{what} needs --{flag}"))
}

pub fn parse_graph(arg: &str) -> Result<Graph> {
    if arg == "example-seven" {
        return Ok(Graph::example_seven());
    }
    if let Some(n) = arg.strip_prefix("complete:") {
        let n: usize = n.parse().with_context(|| format!("bad vertex count in {arg:?}"))?;
        return Ok(Graph::complete(n));
    }
    if let Some(l) = arg.strip_prefix("path:") {
        let l: usize = l.parse().with_context(|| format!("bad edge count in {arg:?}"))?;
        return Ok(Graph::path(l));
    }
    Ok(Graph::load(Path::new(arg))?)
}

pub fn model_spec(m: &ModelConfig) -> Result<ModelSpec> {
    let name = m.model.as_deref().ok_or_else(|| anyhow!("this command needs --model"))?;
    let spec = match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "hypercube" => {
            let d = require(m.d, "d", "hypercube")?;
            ModelSpec::Hypercube {
                d: u32::try_from(d).map_err(|_| anyhow!("--d {d} is too large"))?,
            }
        }
        "birthday" => ModelSpec::Birthday {
            n: require(m.n, "n", "birthday")?,
            k: require(m.k, "k", "birthday")?,
            d: require(m.d, "d", "birthday")?,
        },
        "mono-edges" | "monoedges" => ModelSpec::MonoEdges {
            graph: parse_graph(m.graph.as_deref().ok_or_else(|| anyhow!("mono-edges needs --graph"))?)?,
            c: require(m.c, "c", "mono-edges")?,
        },
        "triangles" => ModelSpec::Triangles {
            n: require(m.n, "n", "triangles")?,
            p: require(m.p, "p", "triangles")?,
        },
        other => bail!("unknown model {other:?}; expected hypercube, birthday, mono-edges or triangles"),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_family(p: &ParamsConfig) -> Result<Option<Family>> {
    Ok(p.family.as_deref().map(str::parse).transpose()?)
}

/// Family parameters given directly on the command line.
fn family_params(p: &ParamsConfig) -> Result<FamilyParams> {
    let family = parse_family(p)?.ok_or_else(|| anyhow!("--family is required (M1, M2 or M3)"))?;
    let lambda = p.lambda.unwrap_or(0.0);
    Ok(match family {
        Family::M1 => FamilyParams::M1(BinPoisParams::new(
            require(p.n, "n", "M1")?,
            require(p.p, "p", "M1")?,
            lambda,
            0.0,
        )?),
        Family::M2 => FamilyParams::M2(NegBinPoisParams::new(
            require(p.r, "r", "M2")?,
            require(p.p, "p", "M2")?,
            lambda,
        )?),
        Family::M3 => FamilyParams::M3(TriplePoisParams::new(
            lambda,
            p.omega.unwrap_or(0.0),
            p.eta.unwrap_or(0.0),
        )?),
    })
}

fn describe(params: &FamilyParams) -> String {
    match params {
        FamilyParams::M1(p) => format!(
            "family=M1 n={} p={} lambda={} delta={} theta1={}",
            p.n, p.p, p.lambda, p.delta, p.theta1
        ),
        FamilyParams::M2(p) => format!("family=M2 r={} p={} lambda={} theta2={}", p.r, p.p, p.lambda, p.theta2),
        FamilyParams::M3(p) => format!(
            "family=M3 lambda={} omega={} eta={} theta3={}",
            p.lambda, p.omega, p.eta, p.theta3
        ),
    }
}

fn pmf_csv(pmf: &IntegerPmf) -> String {
    let mut out = String::from("k,prob\n");
    for (k, pr) in pmf.iter() {
        out.push_str(&format!("{k},{pr:.17e}\n"));
    }
    out
}

fn pmf_lines(pmf: &IntegerPmf) -> String {
    pmf.iter().map(|(k, p)| format!("P(W={k}) = {p}\n")).collect()
}

fn solve_params(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.params;
    let g = CumulantTriple::new(require(p.g1, "g1", "solve-params")?, require(p.g2, "g2", "solve-params")?, require(p.g3, "g3", "solve-params")?);
    let mu = p.mu.unwrap_or(g.g1);
    let (family, choice) = match parse_family(p)? {
        Some(f) => (f, None),
        None => {
            let c = select_family(&g, DEFAULT_RHO0)?;
            (c.family, Some(c))
        }
    };
    let (params, adjustments) = if cfg.project_valid {
        let pp = solve_family_projected(family, &g, mu)?;
        (pp.params, pp.adjustments)
    } else {
        (solve_family(family, &g, mu)?, Vec::new())
    };
    let mut summary = describe(&params) + "\n";
    for a in &adjustments {
        summary.push_str(&format!("projected: {a}\n"));
    }
    let result = json!({ "cumulants": g, "mu": mu, "choice": choice, "params": params, "adjustments": adjustments });
    Ok(Outcome::new(summary).with_json("solve-params.json", &result))
}

fn pmf(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.params;
    let pmf = match (p.family.as_deref(), p.sigma2) {
        (Some(f), _) if !f.eq_ignore_ascii_case("normal") => family_params(p)?.pmf(cfg.eps)?,
        (_, Some(s2)) => build_discretized_normal(&NormalParams::new(require(p.mu, "mu", "normal")?, s2)?, cfg.eps)?,
        _ => bail!("pmf needs --family M1|M2|M3 with its parameters, or --family normal --mu --sigma2"),
    };
    let mut summary = format!("{}\nsupport {}..={}, tail mass {:e}\n", pmf.meta(), pmf.lo(), pmf.hi(), pmf.tail_mass());
    summary.push_str(&pmf_lines(&pmf));
    Ok(Outcome::new(summary).with("pmf.csv", pmf_csv(&pmf)))
}

fn enumerate(cfg: &RunConfig) -> Result<Outcome> {
    let spec = model_spec(&cfg.model)?;
    let (inst, _) = build_model(&spec)?;
    let pmf = enumerate_exact_distribution(&inst)?;
    let g = exact_cumulants(&inst)?;
    let summary = format!("{spec}\ncumulants {g}\n{}", pmf_lines(&pmf));
    Ok(Outcome::new(summary)
        .with("enumerate.csv", pmf_csv(&pmf))
        .with_json("enumerate.json", &json!({ "model": spec.id(), "cumulants": g })))
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let spec = model_spec(&cfg.model)?;
    if cfg.samples == 0 {
        bail!("simulate needs --samples > 0");
    }
    let counts = ModelSampler::new(&spec)?.counts(cfg.samples, seed(cfg));
    let n = cfg.samples as f64;
    let mean = counts.iter().map(|(&w, &c)| w as f64 * c as f64).sum::<f64>() / n;
    let var = counts.iter().map(|(&w, &c)| (w as f64 - mean).powi(2) * c as f64).sum::<f64>() / (n - 1.0).max(1.0);
    let mut csv = String::from("w,count\n");
    for (w, c) in &counts {
        csv.push_str(&format!("{w},{c}\n"));
    }
    let summary = format!("{spec}: {} samples, mean {mean}, variance {var}\n", cfg.samples);
    Ok(Outcome::new(summary).with("simulate.csv", csv))
}

fn dist(cfg: &RunConfig) -> Result<Outcome> {
    let spec = model_spec(&cfg.model)?;
    let target: Target = cfg.target.as_deref().unwrap_or("yd").parse()?;
    let opts = MeasureOptions {
        samples: cfg.samples,
        seed: seed(cfg),
        project_valid: cfg.project_valid,
        bootstrap_reps: cfg.bootstrap_reps,
    };
    let m = measure_dtv(&spec, target, &opts)?;
    let r = &m.report;
    let p = match &spec {
        ModelSpec::Triangles { p, .. } => format!("{p:.17e}"),
        _ => String::new(),
    };
    let csv = format!(
        "{CSV_HEADER}\n{},{},{},{},{},{:.17e},{:.17e},{}\n",
        spec.name(),
        spec_size(&spec),
        p,
        m.target.label,
        m.samples,
        r.dtv,
        r.std_error,
        m.seed
    );
    let mut summary = format!(
        "{spec} vs {}: d_TV = {} (se {:.3e}), d_loc = {}, S2(W) = {}, S2(target) = {}, method {:?}\n",
        m.target.label, r.dtv, r.std_error, r.dloc, r.s2_left, r.s2_right, r.method
    );
    for a in &m.target.adjustments {
        summary.push_str(&format!("projected: {a}\n"));
    }
    Ok(Outcome::new(summary).with("dist.csv", csv).with_json("dist.json", &m))
}

fn spec_size(spec: &ModelSpec) -> u64 {
    match spec {
        ModelSpec::Hypercube { d } => *d as u64,
        ModelSpec::Birthday { n, .. } | ModelSpec::Triangles { n, .. } => *n as u64,
        ModelSpec::MonoEdges { graph, .. } => graph.num_vertices() as u64,
    }
}

fn bounds(cfg: &RunConfig) -> Result<Outcome> {
    let spec = model_spec(&cfg.model)?;
    let analytics = model_analytics(&spec)?;
    let report = evaluate_bound(&spec, cfg.project_valid)?;
    let mut summary = format!(
        "{spec}: family {} theta {} gamma {} ({}) S(W) {} ({})\n",
        report.family.family, report.theta, report.gamma.value, report.gamma.source, report.s_w.value, report.s_w.source
    );
    summary.push_str(&format!(
        "d_TV bracket {} = {} + {} (normal step); d_loc bracket {}\nrate {} = {} {}\n",
        report.bracket_total,
        report.bracket_wm,
        report.bracket_normal_step,
        report.bracket_dloc,
        report.rate_formula,
        report.theorem_rate,
        report.constant
    ));
    if let Some(d) = &report.measured_dtv {
        summary.push_str(&format!("exact d_TV(W, Yd) = {}\n", d.dtv));
    }
    for d in &analytics.discrepancies {
        summary.push_str(&format!("note: {} formula {} vs exact {}\n", d.quantity, d.formula, d.exact));
    }
    for a in &report.adjustments {
        summary.push_str(&format!("projected: {a}\n"));
    }
    Ok(Outcome::new(summary).with_json("bounds.json", &json!({ "analytics": analytics, "bound": report })))
}

fn table1(cfg: &RunConfig) -> Result<Outcome> {
    let report = reproduce_table1(cfg.samples, seed(cfg))?;
    let mut summary = String::from("exponent     N   d_TV (se)             l1        published\n");
    for r in &report.rows {
        summary.push_str(&format!(
            "{:>8} {:>5}   {:.5} ({:.5})   {:.5}   {}\n",
            r.exponent,
            r.n,
            r.dtv_estimate,
            r.std_error,
            r.l1_estimate,
            r.published.map_or("-".to_string(), |v| format!("{v:.5}"))
        ));
    }
    summary.push_str(&format!(
        "fit through origin on l1: slope {:.4}, R^2 {:.4} (published {TABLE1_PUBLISHED_SLOPE}, {TABLE1_PUBLISHED_R2}); on d_TV: slope {:.4}\n",
        report.fit.slope, report.fit.r2, report.fit_half.slope
    ));
    let violations = table1_monotonicity_violations(&report.rows, 2.0);
    for (e, n) in &violations {
        summary.push_str(&format!("non-monotone: exponent {e}, N {n}\n"));
    }
    let fit = json!({
        "x": "(N p)^(-3/2)",
        "fit_l1": report.fit,
        "fit_dtv": report.fit_half,
        "published_slope": TABLE1_PUBLISHED_SLOPE,
        "published_r2": TABLE1_PUBLISHED_R2,
        "monotonicity_violations": violations,
    });
    Ok(Outcome::new(summary)
        .with("table1.csv", table1_csv(&report.rows))
        .with("fit_data.txt", table1_fit_data(&report.rows))
        .with_json("fit.json", &fit))
}

fn stein_verify(cfg: &RunConfig) -> Result<Outcome> {
    let params = family_params(&cfg.params)?;
    let op = SteinOperator::new(params)?;
    let report = verify_delta_bound(&op, cfg.trials, seed(cfg))?;
    let mut out = Outcome::new(format!(
        "{}\nbound {} over {} sets: max sup|Delta g| {} (ratio {}), max residual {:e}, violations {}\n",
        describe(&params),
        report.bound,
        report.trials,
        report.max_delta,
        report.max_ratio,
        report.max_residual,
        report.violations.len()
    ))
    .with_json("stein-verify.json", &report);
    out.verified = report.holds();
    Ok(out)
}

fn lemma24_verify(cfg: &RunConfig) -> Result<Outcome> {
    let spec = model_spec(&cfg.model)?;
    let (inst, _) = build_model(&spec)?;
    let (g1, g2) = compute_g1_g2(&inst)?;
    let gam = exact_cumulants(&inst)?;
    let err = (g1 + gam.g2).abs().max((g2 + gam.g3 / 2.0).abs());
    let holds = err <= LEMMA24_TOL;
    let mut out = Outcome::new(format!(
        "{spec}: G1 = {g1}, -Gamma_2 = {}; G2 = {g2}, -Gamma_3/2 = {}; max error {err:e} ({})\n",
        -gam.g2,
        -gam.g3 / 2.0,
        if holds { "holds" } else { "FAILS" }
    ))
    .with_json(
        "lemma24-verify.json",
        &json!({ "model": spec.id(), "g1": g1, "g2": g2, "cumulants": gam, "max_error": err, "tolerance": LEMMA24_TOL, "holds": holds }),
    );
    out.verified = holds;
    Ok(out)
}

fn colouring_verify(cfg: &RunConfig) -> Result<Outcome> {
    let report = colouring_bound_spotcheck(cfg.trials, seed(cfg), COLOURING_MAX_VERTICES)?;
    let mut out = Outcome::new(format!(
        "{} random colourings: {} violations, smallest margin {:e}\n",
        report.trials.len(),
        report.violations,
        report.min_margin
    ))
    .with_json("colouring-verify.json", &report);
    out.verified = report.violations == 0;
    Ok(out)
}
