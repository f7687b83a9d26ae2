//! Acceptance criteria 1 to 10, one verdict line each.
//!
//! Runs without the libtest harness so the lines are always shown; the
//! process exits non-zero when any criterion fails.

use std::panic::AssertUnwindSafe;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use locdep::distributions::{
    build_discretized_normal, closed_form_cumulants, convolve, numeric_cumulants, BinPoisParams, NegBinPoisParams,
    NormalParams, TriplePoisParams,
};
use locdep::experiments::{
    colouring_bound_spotcheck, measure_dtv, reproduce_table1, table1_cell, table1_monotonicity_violations, MeasureOptions,
    Target, TABLE1_PUBLISHED_R2, TABLE1_PUBLISHED_SLOPE,
};
use locdep::localdep::{compute_g1_g2, exact_cumulants, m_dependent_instance, DependenceInstance, Rule, SourceLaw};
use locdep::metrics::{dtv_empirical, local_distance, second_difference_norm, total_variation};
use locdep::models::{
    birthday_gamma2_formula, build_birthday, build_hypercube, build_mono_edges, build_triangles, hypercube_formula,
    mono_edges_formula, triangles_formula, Graph, ModelSampler, ModelSpec,
};
use locdep::par::with_threads;
use locdep::stein::{expectation_of_operator, operator_tail_tolerance, verify_delta_bound, SteinOperator, TestFunction};
use locdep::{FamilyParams, IntegerPmf};
use locdep_validation::{failures, run};

const SEED: u64 = 7;
const TABLE1_SAMPLES: u64 = 200_000;
const TABLE1_TOL: f64 = 0.015;
const EPS: f64 = 1e-12;

fn m1(n: u64, p: f64, lambda: f64) -> FamilyParams {
    FamilyParams::M1(BinPoisParams::new(n, p, lambda, 0.0).unwrap())
}

fn m2(r: f64, p: f64, lambda: f64) -> FamilyParams {
    FamilyParams::M2(NegBinPoisParams::new(r, p, lambda).unwrap())
}

fn m3(lambda: f64, omega: f64, eta: f64) -> FamilyParams {
    FamilyParams::M3(TriplePoisParams::new(lambda, omega, eta).unwrap())
}

/// Twenty parameter points per family.
fn cumulant_grid() -> Vec<FamilyParams> {
    let lambdas = [0.0, 0.5, 2.0, 5.0];
    let mut grid = Vec::new();
    for (i, n) in [1u64, 2, 5, 10, 20].into_iter().enumerate() {
        for (j, p) in [0.1, 0.3, 0.5, 0.8].into_iter().enumerate() {
            grid.push(m1(n, p, lambdas[(i + j) % 4]));
        }
    }
    for (i, r) in [0.5, 1.0, 2.0, 5.0, 10.0].into_iter().enumerate() {
        for (j, p) in [0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
            grid.push(m2(r, p, lambdas[(i + j) % 4]));
        }
    }
    for lambda in [0.5, 1.0, 3.0, 6.0, 10.0] {
        for (omega, eta) in [(0.0, 0.0), (0.4, 0.1), (1.0, 0.5), (2.0, 0.0)] {
            grid.push(m3(lambda, omega, eta));
        }
    }
    grid
}

/// Five admissible (theta < 1/2) parameter sets per family.
fn stein_sets() -> Vec<FamilyParams> {
    vec![
        m1(10, 0.3, 0.0),
        m1(20, 0.5, 1.0),
        m1(5, 0.2, 0.5),
        m1(40, 0.1, 2.0),
        m1(8, 0.7, 0.3),
        m2(2.0, 0.5, 0.0),
        m2(5.0, 0.6, 0.5),
        m2(1.0, 0.3, 0.2),
        m2(10.0, 0.8, 1.0),
        m2(3.0, 0.4, 0.0),
        m3(2.0, 0.0, 0.0),
        m3(4.0, 0.5, 0.2),
        m3(1.0, 0.2, 0.1),
        m3(8.0, 1.0, 0.5),
        m3(3.0, 0.6, 0.3),
    ]
}

fn criterion1() -> (bool, String) {
    let grid = cumulant_grid();
    let mut worst = 0.0f64;
    for params in &grid {
        let pmf = params.pmf(EPS).expect("pmf builds");
        let numeric = numeric_cumulants(&pmf).expect("cumulants");
        worst = worst.max(numeric.max_abs_diff(&closed_form_cumulants(params)));
    }
    (worst <= 1e-8, format!("{} parameter points, max |numeric - closed form| = {worst:.2e} (limit 1e-8)", grid.len()))
}

fn criterion2() -> (bool, String) {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_abs = 0.0f64;
    let mut checks = 0;
    for (s, params) in stein_sets().into_iter().enumerate() {
        let op = SteinOperator::new(params).unwrap();
        let pmf = params.pmf(EPS).unwrap();
        for i in 0..100 {
            let g = TestFunction::random(pmf.hi() as usize + 8, SEED, (s * 100 + i) as u64);
            let e = expectation_of_operator(&op, &g, &pmf).unwrap().abs();
            let allowed = 1e-8 + operator_tail_tolerance(&op, &g, &pmf);
            worst_excess = worst_excess.max(e - allowed);
            worst_abs = worst_abs.max(e);
            checks += 1;
        }
    }
    (
        worst_excess <= 0.0,
        format!("{checks} (family, g) pairs, max |E A g(M)| = {worst_abs:.2e}, all within 1e-8 + tail term: {}", worst_excess <= 0.0),
    )
}

fn criterion3() -> (bool, String) {
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    let mut max_residual = 0.0f64;
    let mut sets = 0;
    for (i, params) in [m1(20, 0.4, 0.5), m2(4.0, 0.5, 0.5), m3(3.0, 0.5, 0.2)].into_iter().enumerate() {
        assert!(params.is_valid(), "theta gate");
        let op = SteinOperator::new(params).unwrap();
        let report = verify_delta_bound(&op, 50, SEED + i as u64).unwrap();
        violations += report.violations.len();
        max_ratio = max_ratio.max(report.max_ratio);
        max_residual = max_residual.max(report.max_residual);
        sets += report.trials;
    }
    let pass = violations == 0 && max_residual <= 1e-8;
    (
        pass,
        format!("{sets} random sets over M1/M2/M3, {violations} bound violations, max sup|Delta g| / bound = {max_ratio:.3}, max residual {max_residual:.2e}"),
    )
}

fn criterion4() -> (bool, String) {
    let instances: Vec<(&str, DependenceInstance)> = vec![
        ("K3 c=2", build_mono_edges(&Graph::complete(3), 2).unwrap().0),
        ("birthday(3,2,2)", build_birthday(3, 2, 2).unwrap().0),
        ("hypercube d=2", build_hypercube(2).unwrap().0),
        ("triangles(4,0.5)", build_triangles(4, 0.5).unwrap().0),
        (
            "1-dependent chain",
            m_dependent_instance(SourceLaw::bernoulli(0.3).unwrap(), Rule::Product, 6, 1).unwrap(),
        ),
    ];
    let mut worst = 0.0f64;
    for (_, inst) in &instances {
        let (g1, g2) = compute_g1_g2(inst).unwrap();
        let g = exact_cumulants(inst).unwrap();
        worst = worst.max((g1 + g.g2).abs()).max((g2 + g.g3 / 2.0).abs());
    }
    let names: Vec<_> = instances.iter().map(|(n, _)| *n).collect();
    (worst <= 1e-10, format!("(G1, G2) = (-Gamma_2, -Gamma_3/2) on {}: max error {worst:.2e}", names.join(", ")))
}

fn criterion5() -> (bool, String) {
    let mut notes = Vec::new();
    let mut pass = true;

    let mono = exact_cumulants(&build_mono_edges(&Graph::complete(3), 2).unwrap().0).unwrap();
    let formula = mono_edges_formula(3, 2);
    let ok = (mono.g1, mono.g2, mono.g3) == (1.5, -0.75, 1.5) && mono == formula;
    pass &= ok;
    notes.push(format!("K3/c=2 {mono} {}", if ok { "= formula" } else { "!= formula" }));

    let bday = exact_cumulants(&build_birthday(3, 2, 2).unwrap().0).unwrap();
    let ok = bday.g2 == -0.75 && bday.g2 == birthday_gamma2_formula(3, 2, 2);
    pass &= ok;
    notes.push(format!("birthday(3,2,2) Gamma_2 = {}", bday.g2));

    let tri = exact_cumulants(&build_triangles(4, 0.5).unwrap().0).unwrap();
    let tf = triangles_formula(4, 0.5);
    let ok = (tri.g1 - 0.5).abs() <= 1e-12
        && (tri.g2 - 0.125).abs() <= 1e-12
        && (tri.g1 - tf.g1).abs() <= 1e-12
        && (tri.g2 - tf.g2).abs() <= 1e-12;
    pass &= ok;
    notes.push(format!("triangles(4,0.5) Gamma_1 = {}, Gamma_2 = {}", tri.g1, tri.g2));

    for d in [2u32, 3] {
        let (inst, analytics) = build_hypercube(d).unwrap();
        let g = exact_cumulants(&inst).unwrap();
        let published = hypercube_formula(d);
        let flagged = analytics.discrepancies.iter().any(|x| x.quantity == "Gamma_2");
        let ok = g.g1 == 1.0 && flagged;
        pass &= ok;
        notes.push(format!(
            "hypercube d={d} exact {g} vs published {published} (discrepancy reported: {flagged})"
        ));
    }
    if let Some(n) = notes.iter_mut().find(|n| n.starts_with("hypercube d=2")) {
        n.push_str(" [-0.75 != 0.25]");
    }
    (pass, notes.join("; "))
}

fn criterion6() -> (bool, String) {
    let opts = MeasureOptions {
        samples: 0,
        seed: SEED,
        ..MeasureOptions::default()
    };
    let m = measure_dtv(&ModelSpec::Hypercube { d: 3 }, Target::PoissonRef, &opts).unwrap();
    let bound = 3.0 * 2f64.powi(-3);
    (
        m.samples == 0 && m.report.dtv <= bound,
        format!("exact d_TV(W, P(1)) at d=3 = {:.6} <= d 2^-d = {bound}", m.report.dtv),
    )
}

fn criteria_7_and_8() -> ((bool, String), (bool, String)) {
    let report = reproduce_table1(TABLE1_SAMPLES, SEED).unwrap();
    let rows = &report.rows;
    let worst = |f: fn(&locdep::experiments::Table1Row) -> f64| {
        rows.iter().map(|r| (f(r) - r.published.expect("table cell")).abs()).fold(0.0f64, f64::max)
    };
    let worst_half = worst(|r| r.dtv_estimate);
    let worst_l1 = worst(|r| r.l1_estimate);
    let within_half = rows.iter().filter(|r| (r.dtv_estimate - r.published.expect("table cell")).abs() <= TABLE1_TOL).count();
    let within_l1 = rows.iter().filter(|r| (r.l1_estimate - r.published.expect("table cell")).abs() <= TABLE1_TOL).count();
    let violations = table1_monotonicity_violations(rows, 2.0);
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("{}/{}: {:.4} (l1 {:.4}, published {:.4})", r.exponent, r.n, r.dtv_estimate, r.l1_estimate, r.published.expect("table cell")))
        .collect();
    let c7 = (
        worst_half <= TABLE1_TOL && violations.is_empty(),
        format!(
            "d_TV (half l1) within {TABLE1_TOL} of the table in {within_half}/12 cells (max gap {worst_half:.4}); \
             the l1 sum is within {TABLE1_TOL} in {within_l1}/12 (max gap {worst_l1:.4}); \
             monotone in N within 2 pooled SE: {} ; cells {}",
            violations.is_empty(),
            cells.join(", ")
        ),
    );
    let fit = &report.fit_half;
    let c8 = (
        fit.r2 > 0.9,
        format!(
            "through-origin fit of d_TV on (Np)^(-3/2): R^2 = {:.4} (> 0.9), slope {:.4}; l1 slope {:.4} (published {TABLE1_PUBLISHED_SLOPE}, R^2 {TABLE1_PUBLISHED_R2})",
            fit.r2, fit.slope, report.fit.slope
        ),
    );
    (c7, c8)
}

fn random_pmf(rng: &mut ChaCha8Rng) -> IntegerPmf {
    let lo = rng.random_range(-5..5);
    let len = rng.random_range(1..30);
    let weights = (0..len).map(|_| rng.random::<f64>()).collect();
    IntegerPmf::from_weights(lo, weights, "random").unwrap()
}

fn criterion9() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut failed = Vec::new();
    for _ in 0..500 {
        let (p, q, r) = (random_pmf(&mut rng), random_pmf(&mut rng), random_pmf(&mut rng));
        if local_distance(&p, &q) > total_variation(&p, &q) + 1e-15 {
            failed.push("d_loc <= d_TV");
        }
        let s2 = second_difference_norm(&p);
        let point = p.probs().iter().filter(|&&x| x > 0.0).count() == 1;
        if s2 > 4.0 + 1e-12 || (!point && s2 >= 4.0 - 1e-12) {
            failed.push("S2 <= 4, equality only on point masses");
        }
        let (pq, qp) = (total_variation(&p, &q), total_variation(&q, &p));
        if total_variation(&p, &p) > 1e-12
            || (pq - qp).abs() > 1e-12
            || total_variation(&p, &r) > pq + total_variation(&q, &r) + 1e-12
            || !(0.0..=1.0 + 1e-12).contains(&pq)
        {
            failed.push("TV metric axioms");
        }
        let c = convolve(&p, &q, 0.0);
        if (c.represented_mass() + c.tail_mass() - 1.0).abs() > 1e-12 {
            failed.push("convolution mass");
        }
        let normal = NormalParams::new(rng.random_range(-20.0..60.0), rng.random_range(0.05..400.0)).unwrap();
        let y = build_discretized_normal(&normal, EPS).unwrap();
        if (y.represented_mass() + y.tail_mass() - 1.0).abs() > 1e-12 {
            failed.push("discretized normal normalization");
        }
    }
    for at in [-3i64, 0, 7] {
        if (second_difference_norm(&IntegerPmf::point_mass(at)) - 4.0).abs() > 1e-15 {
            failed.push("S2 of a point mass");
        }
    }

    // Seeded pipelines under 1 and 4 workers.
    let spec = ModelSpec::Triangles { n: 60, p: 0.1 };
    let pipeline = || {
        let counts = ModelSampler::new(&spec).unwrap().counts(20_000, SEED);
        let emp = locdep::metrics::EmpiricalDistribution::from_counts(counts.clone(), SEED, "t").unwrap();
        let target = build_discretized_normal(&NormalParams::new(emp.mean(), emp.variance()).unwrap(), EPS).unwrap();
        let boot = dtv_empirical(&emp, &target, 50);
        let cell = table1_cell(100, 0.7, 5_000, SEED, 20).unwrap();
        let colouring = colouring_bound_spotcheck(10, SEED, 5).unwrap();
        (counts, boot, cell, colouring.min_margin.to_bits())
    };
    let one = with_threads(1, pipeline);
    let four = with_threads(4, pipeline);
    if one != four {
        failed.push("determinism across worker counts");
    }
    failed.dedup();
    (
        failed.is_empty(),
        if failed.is_empty() {
            "500 random PMF triples: d_loc <= d_TV, S2 <= 4 (= 4 only on point masses), TV axioms, convolution and normal mass within 1e-12; sampler, bootstrap, table cell and colouring check identical under 1 and 4 workers".into()
        } else {
            format!("violated: {}", failed.join(", "))
        },
    )
}

fn criterion10() -> (bool, String) {
    let report = colouring_bound_spotcheck(100, SEED, 6).unwrap();
    (
        report.violations == 0 && report.trials.len() == 100,
        format!(
            "{} random graph colourings by exact enumeration: {} violations of 1 - l/c <= P(A), min margin {:.3e}",
            report.trials.len(),
            report.violations,
            report.min_margin
        ),
    )
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let mut verdicts = vec![
        run(1, "cumulant closed forms", secs(10), criterion1),
        run(2, "Stein characterizing identity", secs(30), criterion2),
        run(3, "Stein solution bounds", None, criterion3),
        run(4, "G1/G2 identity", secs(60), criterion4),
        run(5, "application cumulants", None, criterion5),
        run(6, "hypercube baseline bound", None, criterion6),
    ];
    // Both criteria use the same twelve Monte Carlo cells.
    let mut fit = None;
    let table = AssertUnwindSafe(|| {
        let (c7, c8) = criteria_7_and_8();
        fit = Some(c8);
        c7
    });
    verdicts.push(run(7, "triangle table reproduction", secs(30 * 60), table));
    let c8 = fit.unwrap_or_else(|| (false, "no table was produced".into()));
    verdicts.push(run(8, "fit through the origin", None, || c8));
    verdicts.push(run(9, "property suites", None, criterion9));
    verdicts.push(run(10, "colouring lower bound spot check", None, criterion10));

    let failed = failures(&verdicts);
    println!(
        "acceptance: {}/{} criteria pass{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
