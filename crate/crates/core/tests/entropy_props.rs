use std::collections::BTreeMap;

use num_rational::BigRational;
use proptest::prelude::*;

use treerate::chargraph::{build_char_graph, maximal_independent_sets, CharGraph, CompositeSpec};
use treerate::entropy::{graph_entropy, EntropyProblem, SolverConfig};
use treerate::{Coord, Joint, NodeId};

/// Random joint of (L, K) with |L| <= 4, |K| <= 3 and a random f(l, k).
fn arb_model() -> impl Strategy<Value = (Joint, Vec<u32>)> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(nl, nk)| {
        (
            prop::collection::vec(0u32..4, nl * nk),
            prop::collection::vec(0u32..3, nl * nk),
        )
            .prop_filter("some mass", |(w, _)| w.iter().any(|&x| x > 0))
            .prop_map(move |(w, f)| {
                let total: u32 = w.iter().sum();
                let mut rows = Vec::new();
                let mut outputs = Vec::new();
                for l in 0..nl {
                    for k in 0..nk {
                        let i = l * nk + k;
                        if w[i] > 0 {
                            rows.push((vec![l as u32, k as u32], BigRational::new(w[i].into(), total.into())));
                            outputs.push(f[i]);
                        }
                    }
                }
                let coords = vec![Coord::Source(NodeId(1)), Coord::Source(NodeId(2))];
                (Joint::new(coords, vec![nl, nk], rows), outputs)
            })
    })
}

fn spec() -> CompositeSpec {
    CompositeSpec::new(vec![Coord::Source(NodeId(1))], vec![Coord::Source(NodeId(2))]).unwrap()
}

fn value_on(g: &CharGraph, j: &Joint) -> f64 {
    let fam = maximal_independent_sets(g, 64).unwrap();
    let pb = EntropyProblem::new(g, &fam, j, &spec()).unwrap();
    graph_entropy(&pb, &SolverConfig::default()).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn removing_an_edge_never_increases_the_value((j, f) in arb_model(), pick in any::<prop::sample::Index>()) {
        let g = build_char_graph(&j, &f, &spec(), 64).unwrap();
        let edges = g.edges();
        prop_assume!(!edges.is_empty());
        let (a, b) = *pick.get(&edges);
        let mut h = g.clone();
        h.remove_edge(a, b);
        prop_assert!(value_on(&h, &j) <= value_on(&g, &j) + 1e-9);
    }

    #[test]
    fn solver_runs_are_monotone_and_respect_support((j, f) in arb_model()) {
        let g = build_char_graph(&j, &f, &spec(), 64).unwrap();
        let fam = maximal_independent_sets(&g, 64).unwrap();
        let pb = EntropyProblem::new(&g, &fam, &j, &spec()).unwrap();
        let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
        prop_assert!(sol.monotone);
        for l in 0..pb.letter_count() {
            for (v, set) in pb.sets().iter().enumerate() {
                if !set.contains(&l) {
                    prop_assert_eq!(sol.assignment[l][v], 0.0);
                }
            }
        }
        prop_assert!(sol.lower_bound <= sol.value + 1e-12);
    }

    #[test]
    fn zero_probability_vertices_are_isolated((j, f) in arb_model()) {
        let g = build_char_graph(&j, &f, &spec(), 64).unwrap();
        let support: BTreeMap<Vec<u32>, _> = j.marginal(&[Coord::Source(NodeId(1))]).unwrap();
        for v in 0..g.vertex_count() {
            if !support.contains_key(&g.vertex_letters(v)) {
                prop_assert_eq!(g.degree(v), 0);
            }
        }
    }
}

#[test]
fn edgeless_graph_has_zero_entropy() {
    let rows = (0..3u32)
        .flat_map(|l| (0..2u32).map(move |k| (vec![l, k], BigRational::new(1.into(), 6.into()))))
        .collect();
    let j = Joint::new(vec![Coord::Source(NodeId(1)), Coord::Source(NodeId(2))], vec![3, 2], rows);
    let g = build_char_graph(&j, &[4; 6], &spec(), 64).unwrap();
    assert_eq!(g.edge_count(), 0);
    assert!(value_on(&g, &j).abs() < 1e-12);
}
