mod common;

use polychain::augment::chain_repeat;
use polychain::diffcore::Tensor;
use polychain::graph::{EdgeKind, Edge, PolymerGraph};
use polychain::theory::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_max_tree, fixture_units, random_connected};

#[test]
fn prim_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let n = rng.gen_range(2..=7);
        let g = random_connected(&mut rng, n, i % 2 == 0);
        let start = rng.gen_range(0..n);
        let tree = prim_mst(&g, start).unwrap();
        assert_eq!(tree.len(), n - 1);
        let w = tree_weight(&g, &tree);
        let oracle = brute_force_max_tree(&g);
        assert!((w - oracle).abs() <= 1e-9, "graph {i}: {w} vs {oracle}");
    }
}

#[test]
fn prim_rejects_disconnected_and_bad_start() {
    let g = WeightedGraph::new(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
    assert!(matches!(prim_mst(&g, 0), Err(TheoryError::Disconnected)));
    assert!(prim_mst(&g, 9).is_err());
}

#[test]
fn prim_tie_breaking_is_stable() {
    let g = WeightedGraph::new(4, &[(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)]).unwrap();
    assert_eq!(prim_mst(&g, 0).unwrap(), vec![(0, 1), (0, 2), (1, 3)]);
}

#[test]
fn mst_csv_loader() {
    let g = WeightedGraph::from_csv("u,v,w\n0,1,2.5\n1,2,1\n").unwrap();
    assert_eq!(g.num_nodes(), 3);
    assert_eq!(g.weight(1, 0), Some(2.5));
    assert!(WeightedGraph::from_csv("a,b\n0,1\n").is_err());
}

#[test]
fn contract_rejects_malformed_graphs() {
    use polychain::graph::NodeAttr;
    use polychain::smiles::Element;
    let node = NodeAttr { element: Element::C, hydrogens: 2 };
    // ordinary bond across units
    let g = PolymerGraph::new(
        vec![node; 4],
        vec![
            Edge { u: 0, v: 1, kind: EdgeKind::Single },
            Edge { u: 1, v: 2, kind: EdgeKind::Single },
            Edge { u: 2, v: 3, kind: EdgeKind::Single },
        ],
        2,
        2,
        None,
    )
    .unwrap();
    assert!(matches!(contract(&g), Err(TheoryError::Malformed(_))));
    // three links between two supernodes' worth of nodes: branch
    let g = PolymerGraph::new(
        vec![node; 3],
        vec![
            Edge { u: 0, v: 1, kind: EdgeKind::InterUnit },
            Edge { u: 0, v: 2, kind: EdgeKind::InterUnit },
        ],
        3,
        1,
        None,
    )
    .unwrap();
    assert_eq!(contract(&g).unwrap().hyperdegrees, vec![2, 1, 1]);
    let g = PolymerGraph::new(
        vec![node; 4],
        vec![
            Edge { u: 0, v: 1, kind: EdgeKind::InterUnit },
            Edge { u: 0, v: 2, kind: EdgeKind::InterUnit },
            Edge { u: 0, v: 3, kind: EdgeKind::InterUnit },
        ],
        4,
        1,
        None,
    )
    .unwrap();
    assert!(matches!(contract(&g), Err(TheoryError::Malformed(_))));
}

#[test]
fn contraction_of_real_chains() {
    for ru in fixture_units(5) {
        let h = contract(&chain_repeat(&ru, 6)).unwrap();
        assert_eq!(h.edges, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
    }
}

/// Scalar forward recurrence with lowest-index tie routing; returns the
/// states per layer and the chosen neighbor per layer.
fn scalar_forward(init: &[f64], l: f64, layers: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = init.len();
    let mut states = vec![init.to_vec()];
    let mut picks = Vec::new();
    for _ in 0..layers {
        let h = states.last().unwrap();
        let mut next = vec![0.0; n];
        let mut pick = vec![usize::MAX; n];
        for s in 0..n {
            let nbrs = [s.checked_sub(1), (s + 1 < n).then_some(s + 1)];
            let mut best: Option<(usize, f64)> = None;
            for u in nbrs.into_iter().flatten() {
                let v = l * h[u];
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((u, v));
                }
            }
            if let Some((u, v)) = best {
                next[s] = v;
                pick[s] = u;
            }
        }
        states.push(next);
        picks.push(pick);
    }
    (states, picks)
}

fn scalar_grad_sum(n: usize, l: f64, delta: f64) -> f64 {
    let layers = n - 2;
    let (_, picks) = scalar_forward(&vec![1.0; n], l, layers);
    let mut g = vec![0.0; n];
    g[n - 1] = delta;
    let mut total = 0.0;
    for t in (0..layers).rev() {
        let mut prev = vec![0.0; n];
        for s in 0..n {
            if picks[t][s] != usize::MAX {
                prev[picks[t][s]] += l * g[s];
            }
        }
        total += prev[1..n - 1].iter().map(|x: &f64| x.abs()).sum::<f64>();
        g = prev;
    }
    total
}

#[test]
fn grad_sum_grid() {
    for n in 3..=10 {
        for l in [0.1, 0.5, 0.9] {
            let r = verify_grad_sum(n, l, 1.0).unwrap();
            let manual = scalar_grad_sum(n, l, 1.0);
            assert!((r.measured - manual).abs() <= 1e-12 * manual.max(1e-300), "n={n} L={l}");
            assert!(r.pass, "{r:?}");
            assert!((r.closed_form - grad_sum_closed_form(n, l, 1.0)).abs() < 1e-15);
        }
    }
}

#[test]
fn grad_sum_rejects_bad_parameters() {
    assert!(verify_grad_sum(2, 0.5, 1.0).is_err());
    assert!(verify_grad_sum(5, 1.0, 1.0).is_err());
    assert!(verify_grad_sum(5, 0.5, 0.0).is_err());
    assert!(matches!(ContractionNet::scalar(1.2), Err(TheoryError::Construction(_))));
}

#[test]
fn contraction_bound_is_enforced() {
    let m = |x: f64| Tensor::matrix(1, 1, vec![x]).unwrap();
    let maps = LayerMaps {
        message: m(0.6),
        message_bias: Tensor::vector(vec![0.0]),
        update_self: m(0.3),
        update_message: m(1.0),
        update_bias: Tensor::vector(vec![0.0]),
    };
    assert!(ContractionNet::new(maps.clone(), 0.8).is_err());
    assert!(ContractionNet::new(maps, 0.9).is_ok());
}

#[test]
fn latent_invariance_single_seed() {
    let cfg = InvarianceConfig { seed: 4, ..InvarianceConfig::default() };
    let sizes: Vec<usize> = (2..=100).collect();
    let (report, net) = verify_latent_invariance(&[1, 3], &sizes, 1e-2, &cfg).unwrap();
    assert!(report.train_loss <= cfg.loss_threshold);
    assert!(report.pass, "{report:?}");
    for m in [1, 3, 50] {
        assert!((net.predict(m).unwrap() - cfg.target).abs() <= 1e-2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hyperchain_forward_is_scalar_recurrence(
        n in 1usize..12,
        l in 0.05f64..0.95,
        layers in 1usize..6,
        init in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let chain = Hyperchain::path(n).unwrap();
        let net = ContractionNet::scalar(l).unwrap();
        let h0 = Tensor::matrix(n, 1, init[..n].to_vec()).unwrap();
        let states = hyperchain_forward_layers(&chain, &net.maps, layers, Some(&h0)).unwrap();
        let (expected, _) = scalar_forward(&init[..n], l, layers);
        prop_assert_eq!(states.len(), layers + 1);
        for (got, want) in states.iter().zip(&expected) {
            for (a, b) in got.data().iter().zip(want) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_non_expansive(
        n in 2usize..10,
        l in 0.05f64..0.95,
        a in prop::collection::vec(-3.0f64..3.0, 10),
        b in prop::collection::vec(-3.0f64..3.0, 10),
    ) {
        let chain = Hyperchain::path(n).unwrap();
        let net = ContractionNet::scalar(l).unwrap();
        let ha = Tensor::matrix(n, 1, a[..n].to_vec()).unwrap();
        let hb = Tensor::matrix(n, 1, b[..n].to_vec()).unwrap();
        let ya = hyperchain_forward_layers(&chain, &net.maps, 1, Some(&ha)).unwrap().pop().unwrap();
        let yb = hyperchain_forward_layers(&chain, &net.maps, 1, Some(&hb)).unwrap().pop().unwrap();
        let inf = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        prop_assert!(inf(ya.data(), yb.data()) <= l * inf(&a[..n], &b[..n]) + 1e-12);
    }

    #[test]
    fn hyperdegree_sum_is_twice_links(n in 1usize..200) {
        let h = Hyperchain::path(n).unwrap();
        prop_assert_eq!(h.hyperdegrees.iter().sum::<usize>(), 2 * (n - 1));
        for i in 1..=n {
            prop_assert_eq!(h.hyperdegrees[i - 1], hyperdegree_closed_form(n, i));
        }
    }

    #[test]
    fn max_selection_edges_lie_in_some_max_tree(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(&mut rng, n, false);
        let tree = prim_mst(&g, 0).unwrap();
        // continuous weights are distinct almost surely: unique max tree
        for e in max_aggregation_selections(&g) {
            prop_assert!(tree.contains(&e), "{:?} not in {:?}", e, tree);
        }
    }
}
