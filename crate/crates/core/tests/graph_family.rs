mod common;

use std::collections::BTreeMap;

use polychain::augment::chain_repeat;
use polychain::graph::{diameter, read_jsonl, write_jsonl, EdgeKind, PolymerGraph};
use polychain::smiles::{parse_repeat_unit, RepeatUnit};
use polychain::theory::{contract, hyperdegree_closed_form, Hyperchain};
use proptest::prelude::*;

use common::{fixture_units, HAND_UNITS};

type EdgeBag = BTreeMap<(usize, usize, EdgeKind), usize>;

/// Copy-and-link construction written against the unit's own bond list.
fn expected_edges(ru: &RepeatUnit, n: usize) -> EdgeBag {
    let k = ru.atoms.len();
    let mut bag = EdgeBag::new();
    let mut put = |a: usize, b: usize, kind: EdgeKind| {
        *bag.entry((a.min(b), a.max(b), kind)).or_default() += 1;
    };
    for c in 0..n {
        for b in &ru.bonds {
            put(c * k + b.a, c * k + b.b, EdgeKind::from(b.order));
        }
    }
    for c in 1..n {
        put((c - 1) * k + ru.anchor_out, c * k + ru.anchor_in, EdgeKind::InterUnit);
    }
    bag
}

fn actual_edges(g: &PolymerGraph) -> EdgeBag {
    let mut bag = EdgeBag::new();
    for e in g.edges() {
        *bag.entry((e.u.min(e.v), e.u.max(e.v), e.kind)).or_default() += 1;
    }
    bag
}

fn floyd_warshall_diameter(g: &PolymerGraph) -> usize {
    let n = g.num_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for e in g.edges() {
        d[e.u][e.v] = 1;
        d[e.v][e.u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d.iter().flatten().copied().max().unwrap_or(0)
}

#[test]
fn hand_fixtures_parse() {
    for t in HAND_UNITS {
        parse_repeat_unit(t).unwrap_or_else(|e| panic!("{t}: {e}"));
    }
}

#[test]
fn chain_matches_copy_and_link() {
    for ru in fixture_units(50) {
        for n in [1, 2, 3, 7, 20] {
            let g = chain_repeat(&ru, n);
            assert_eq!(actual_edges(&g), expected_edges(&ru, n), "{} n={n}", ru.source_text);
            for (i, node) in g.nodes().iter().enumerate() {
                assert_eq!(node.element, ru.atoms[i % ru.atoms.len()].element);
            }
        }
    }
}

#[test]
fn counts_for_all_sizes() {
    for ru in fixture_units(50) {
        for n in 1..=60 {
            let g = chain_repeat(&ru, n);
            assert_eq!(g.num_nodes(), n * ru.atoms.len());
            assert_eq!(g.num_edges(), n * ru.bonds.len() + n - 1);
        }
    }
}

#[test]
fn diameter_agrees_with_floyd_warshall() {
    for ru in fixture_units(20) {
        for n in [1, 2, 5] {
            let g = chain_repeat(&ru, n);
            assert_eq!(diameter(&g).unwrap(), floyd_warshall_diameter(&g), "{}", ru.source_text);
        }
    }
}

#[test]
fn diameter_grows_with_chain() {
    let ru = parse_repeat_unit("*CC*").unwrap();
    // a path of 4n atoms
    for n in 1..10 {
        assert_eq!(diameter(&chain_repeat(&ru, n)).unwrap(), 4 * n - 1);
    }
}

#[test]
fn hyperdegrees_follow_closed_form() {
    for ru in fixture_units(10) {
        for n in 1..=60 {
            let h = contract(&chain_repeat(&ru, n)).unwrap();
            assert_eq!(h, Hyperchain::path(n).unwrap());
            for (i, &d) in h.hyperdegrees.iter().enumerate() {
                assert_eq!(d, hyperdegree_closed_form(n, i + 1));
            }
        }
    }
}

#[test]
fn jsonl_round_trip() {
    let graphs: Vec<_> = fixture_units(12)
        .iter()
        .enumerate()
        .map(|(i, ru)| chain_repeat(ru, 1 + i % 4).with_label(Some(i as f64 * 0.5)))
        .collect();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &graphs).unwrap();
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, graphs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn size_identities(idx in 0usize..50, n in 1usize..80) {
        let units = fixture_units(50);
        let ru = &units[idx];
        let g = chain_repeat(ru, n);
        prop_assert_eq!(g.num_nodes(), n * ru.atoms.len());
        prop_assert_eq!(g.num_edges(), n * ru.bonds.len() + n - 1);
        let inter = g.edges().iter().filter(|e| e.kind == EdgeKind::InterUnit).count();
        prop_assert_eq!(inter, n - 1);
        let anchors = (0..g.num_nodes()).filter(|&v| g.is_anchor(v)).count();
        prop_assert_eq!(anchors, 2 * n);
    }

    #[test]
    fn permutation_preserves_structure(idx in 0usize..20, n in 1usize..4, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let units = fixture_units(20);
        let g = chain_repeat(&units[idx], n);
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let p = g.permuted(&perm).unwrap();
        prop_assert_eq!(p.num_edges(), g.num_edges());
        prop_assert_eq!(diameter(&p).unwrap(), diameter(&g).unwrap());
        for v in 0..g.num_nodes() {
            prop_assert_eq!(p.degree(perm[v]), g.degree(v));
            prop_assert_eq!(p.nodes()[perm[v]], g.nodes()[v]);
        }
    }
}
