//! The dedicated model samplers against exact enumeration of the same models.

use locdep::localdep::enumerate_exact_distribution;
use locdep::metrics::{total_variation, EmpiricalDistribution};
use locdep::models::{build_model, Graph, ModelSampler, ModelSpec};

const SAMPLES: u64 = 40_000;

/// Expected empirical d_TV under the exact law, from the normal
/// approximation of each cell's count.
fn expected_dtv(pmf: &locdep::IntegerPmf, n: u64) -> f64 {
    let n = n as f64;
    0.5 * pmf
        .probs()
        .iter()
        .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * n)).sqrt())
        .sum::<f64>()
}

fn check(spec: ModelSpec, seed: u64) {
    let (inst, _) = build_model(&spec).unwrap();
    let exact = enumerate_exact_distribution(&inst).unwrap();
    let counts = ModelSampler::new(&spec).unwrap().counts(SAMPLES, seed);
    let emp = EmpiricalDistribution::from_counts(counts, seed, spec.id()).unwrap();
    let d = total_variation(&emp.to_pmf(), &exact);
    let limit = 3.0 * expected_dtv(&exact, SAMPLES);
    assert!(d < limit, "{spec}: empirical d_TV {d} vs limit {limit}");
    let (mean, var, _) = exact.central_moments();
    assert!((emp.mean() - mean).abs() < 5.0 * (var / SAMPLES as f64).sqrt(), "{spec}: mean");
}

#[test]
fn hypercube() {
    check(ModelSpec::Hypercube { d: 3 }, 1);
    check(ModelSpec::Hypercube { d: 2 }, 2);
}

#[test]
fn birthday() {
    check(ModelSpec::Birthday { n: 6, k: 3, d: 3 }, 3);
    check(ModelSpec::Birthday { n: 8, k: 2, d: 4 }, 4);
}

#[test]
fn mono_edges() {
    check(ModelSpec::MonoEdges { graph: Graph::example_seven(), c: 3 }, 5);
    check(ModelSpec::MonoEdges { graph: Graph::complete(4), c: 2 }, 6);
}

#[test]
fn triangles() {
    check(ModelSpec::Triangles { n: 5, p: 0.4 }, 7);
    check(ModelSpec::Triangles { n: 6, p: 0.5 }, 8);
}

#[test]
fn generic_instance_sampler_agrees() {
    // The dependence-instance path draws sources directly; it must follow the
    // same law as the dedicated sampler.
    let spec = ModelSpec::Birthday { n: 7, k: 2, d: 5 };
    let (inst, _) = build_model(&spec).unwrap();
    let exact = enumerate_exact_distribution(&inst).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for i in 0..SAMPLES {
        *counts.entry(inst.sample_w(11, i)).or_insert(0u64) += 1;
    }
    let emp = EmpiricalDistribution::from_counts(counts, 11, "generic").unwrap();
    assert!(total_variation(&emp.to_pmf(), &exact) < 3.0 * expected_dtv(&exact, SAMPLES));
}
