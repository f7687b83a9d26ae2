//! Seeded pipelines must give identical results for any worker count.

use locdep::experiments::{evaluate_bound, colouring_bound_spotcheck, measure_dtv, table1_cell, MeasureOptions, Target};
use locdep::localdep::{compute_gamma_monte_carlo, enumerate_exact_distribution};
use locdep::models::{build_model, ModelSampler, ModelSpec};
use locdep::par::with_threads;
use locdep::stein::{verify_delta_bound, SteinOperator};
use locdep::distributions::NegBinPoisParams;
use locdep::FamilyParams;

fn same_under_1_and_4<T: PartialEq + std::fmt::Debug + Send, F: Fn() -> T + Send + Sync>(f: F) {
    let a = with_threads(1, &f);
    let b = with_threads(4, &f);
    assert_eq!(a, b);
}

#[test]
fn samplers() {
    for spec in [
        ModelSpec::Triangles { n: 50, p: 0.12 },
        ModelSpec::Birthday { n: 40, k: 3, d: 200 },
        ModelSpec::Hypercube { d: 9 },
    ] {
        same_under_1_and_4(|| ModelSampler::new(&spec).unwrap().counts(5_000, 3));
    }
}

#[test]
fn measurements_and_bootstrap() {
    let opts = MeasureOptions {
        samples: 4_000,
        seed: 9,
        project_valid: true,
        bootstrap_reps: 30,
    };
    let spec = ModelSpec::Triangles { n: 30, p: 0.2 };
    same_under_1_and_4(|| measure_dtv(&spec, Target::Yd, &opts).unwrap());
    same_under_1_and_4(|| table1_cell(80, 0.7, 3_000, 5, 25).unwrap());
}

#[test]
fn enumeration_and_gamma() {
    let (inst, _) = build_model(&ModelSpec::Hypercube { d: 3 }).unwrap();
    same_under_1_and_4(|| enumerate_exact_distribution(&inst).unwrap());
    same_under_1_and_4(|| {
        let g = compute_gamma_monte_carlo(&inst, 2_000, 4).unwrap();
        (g.value.to_bits(), g.std_error.to_bits())
    });
    same_under_1_and_4(|| format!("{:?}", evaluate_bound(&ModelSpec::Birthday { n: 5, k: 2, d: 4 }, true).map(|b| b.bracket_total)));
}

#[test]
fn randomized_checks() {
    let op = SteinOperator::new(FamilyParams::M2(NegBinPoisParams::new(3.0, 0.5, 0.5).unwrap())).unwrap();
    same_under_1_and_4(|| {
        let r = verify_delta_bound(&op, 12, 8).unwrap();
        (r.max_delta.to_bits(), r.max_residual.to_bits(), r.violations.len())
    });
    same_under_1_and_4(|| {
        let r = colouring_bound_spotcheck(15, 2, 5).unwrap();
        (r.violations, r.min_margin.to_bits())
    });
}
