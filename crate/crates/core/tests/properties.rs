use proptest::prelude::*;

use locdep::cumulants::{cumulants_from_moments, solve_family};
use locdep::distributions::{
    build_discretized_normal, closed_form_cumulants, convolve, numeric_cumulants, BinPoisParams, NegBinPoisParams,
    TriplePoisParams,
};
use locdep::metrics::{local_distance, second_difference_norm, total_variation};
use locdep::models::Graph;
use locdep::{FamilyParams, IntegerPmf, NormalParams};

fn pmf_strategy() -> impl Strategy<Value = IntegerPmf> {
    (-10i64..10, prop::collection::vec(0.0f64..1.0, 1..40))
        .prop_filter("positive mass", |(_, w)| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|(lo, w)| IntegerPmf::from_weights(lo, w, "prop").unwrap())
}

fn family_strategy() -> impl Strategy<Value = FamilyParams> {
    prop_oneof![
        (1u64..60, 0.02f64..0.98, 0.0f64..8.0)
            .prop_map(|(n, p, l)| FamilyParams::M1(BinPoisParams::new(n, p, l, 0.0).unwrap())),
        (0.2f64..15.0, 0.15f64..0.95, 0.0f64..8.0)
            .prop_map(|(r, p, l)| FamilyParams::M2(NegBinPoisParams::new(r, p, l).unwrap())),
        (0.05f64..12.0, 0.0f64..3.0, 0.0f64..2.0)
            .prop_map(|(l, o, e)| FamilyParams::M3(TriplePoisParams::new(l, o, e).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tv_is_a_metric(p in pmf_strategy(), q in pmf_strategy(), r in pmf_strategy()) {
        let pq = total_variation(&p, &q);
        prop_assert!(total_variation(&p, &p) <= 1e-12);
        prop_assert!((pq - total_variation(&q, &p)).abs() <= 1e-12);
        prop_assert!(total_variation(&p, &r) <= pq + total_variation(&q, &r) + 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
    }

    #[test]
    fn local_distance_is_dominated(p in pmf_strategy(), q in pmf_strategy()) {
        prop_assert!(local_distance(&p, &q) <= total_variation(&p, &q) + 1e-15);
    }

    #[test]
    fn second_difference_at_most_four(p in pmf_strategy()) {
        let s2 = second_difference_norm(&p);
        prop_assert!(s2 <= 4.0 + 1e-12);
        let support = p.probs().iter().filter(|&&x| x > 0.0).count();
        if support > 1 {
            prop_assert!(s2 < 4.0);
        }
    }

    #[test]
    fn point_masses_reach_four(at in -1000i64..1000) {
        prop_assert_eq!(second_difference_norm(&IntegerPmf::point_mass(at)), 4.0);
    }

    #[test]
    fn convolution_conserves_mass_and_adds_means(p in pmf_strategy(), q in pmf_strategy()) {
        let c = convolve(&p, &q, 0.0);
        prop_assert!((c.represented_mass() + c.tail_mass() - 1.0).abs() <= 1e-12);
        let (mp, mq, mc) = (p.central_moments().0, q.central_moments().0, c.central_moments().0);
        prop_assert!((mc - mp - mq).abs() <= 1e-9 * (1.0 + mc.abs()));
    }

    #[test]
    fn discretized_normal_is_normalized(mu in -50.0f64..300.0, sigma2 in 0.01f64..900.0) {
        let y = build_discretized_normal(&NormalParams::new(mu, sigma2).unwrap(), 1e-12).unwrap();
        prop_assert!((y.represented_mass() + y.tail_mass() - 1.0).abs() <= 1e-12);
        prop_assert!(y.tail_mass() <= 1e-12);
    }

    #[test]
    fn family_cumulants_match_closed_forms(params in family_strategy()) {
        let pmf = params.pmf(1e-13).unwrap();
        let numeric = numeric_cumulants(&pmf).unwrap();
        let exact = closed_form_cumulants(&params);
        let scale = 1.0 + exact.g1.abs() + exact.g2.abs() + exact.g3.abs();
        prop_assert!(numeric.max_abs_diff(&exact) <= 1e-9 * scale, "{numeric} vs {exact}");
    }

    #[test]
    fn matching_inverts_closed_forms(params in family_strategy()) {
        let g = closed_form_cumulants(&params);
        // Rates are non-negative by construction, so every family round-trips.
        let solved = solve_family(params.family(), &g, g.g1).unwrap();
        let back = closed_form_cumulants(&solved);
        prop_assert!(back.max_abs_diff(&g) <= 1e-8 * (1.0 + g.g1.abs() + g.g2.abs() + g.g3.abs()));
    }

    #[test]
    fn cumulants_of_raw_moments(params in family_strategy()) {
        let pmf = params.pmf(1e-13).unwrap();
        let from_moments = cumulants_from_moments(&pmf.raw_moments()).unwrap();
        let exact = closed_form_cumulants(&params);
        prop_assert!(from_moments.max_abs_diff(&exact) <= 1e-8 * (1.0 + exact.g3.abs() + exact.g2.abs() + exact.g1.abs()));
    }

    #[test]
    fn edge_lists_round_trip(n in 2usize..12, picks in prop::collection::vec((0usize..12, 0usize..12), 0..30)) {
        let mut edges: Vec<(usize, usize)> = picks
            .into_iter()
            .map(|(a, b)| (a % n, b % n))
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        prop_assume!(!edges.is_empty());
        let g = Graph::new(n, edges).unwrap();
        let text = format!("# {n} vertices\n{}", g.to_edge_list());
        let back = Graph::parse_edge_list(&text).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
    }
}
