#![allow(dead_code)]

use polychain::eval::synth_corpus;
use polychain::smiles::{parse_repeat_unit, RepeatUnit};
use polychain::theory::WeightedGraph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const HAND_UNITS: &[&str] = &[
    "*CC*",
    "*C*",
    "*CC(C)*",
    "*CC(=O)OC*",
    "*OCCO*",
    "*CC(C#N)*",
    "*C(F)(F)C(F)(F)*",
    "*CC(Cl)*",
    "*C=CC*",
    "*CC(C1=CC=CC=C1)*",
    "*OC1=CC=C(C(C)(C)C2=CC=C(O*)C=C2)C=C1",
    "*NCCCCCC(=O)*",
    "*C[N+](C)(C)C*",
    "*C([O-])C*",
    "*C(=O)N(C)S(=O)(=O)C*",
    "*CC1CCC(*)CC1",
    "*CC(Br)C(I)*",
    "*CC(O)*",
    "*CC(C(=O)OC)*",
    "*SCC*",
];

/// Hand-written units topped up with generated ones to `count` distinct units.
pub fn fixture_units(count: usize) -> Vec<RepeatUnit> {
    let mut out: Vec<RepeatUnit> = HAND_UNITS
        .iter()
        .filter_map(|t| parse_repeat_unit(t).ok())
        .collect();
    let need = count.saturating_sub(out.len());
    out.extend(synth_corpus(need, 11).into_iter().map(|s| s.unit));
    out.truncate(count);
    out
}

pub fn random_connected(rng: &mut ChaCha8Rng, n: usize, integer_weights: bool) -> WeightedGraph {
    let mut edges = Vec::new();
    let w = |rng: &mut ChaCha8Rng| {
        if integer_weights {
            rng.gen_range(1..4) as f64
        } else {
            rng.gen_range(0.01..5.0)
        }
    };
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.push((u, v, w(rng)));
    }
    for u in 0..n {
        for v in u + 1..n {
            if !edges.iter().any(|&(a, b, _)| (a, b) == (u, v)) && rng.gen_bool(0.4) {
                edges.push((u, v, w(rng)));
            }
        }
    }
    WeightedGraph::new(n, &edges).unwrap()
}

/// Heaviest spanning tree by trying every (n − 1)-subset of edges.
pub fn brute_force_max_tree(g: &WeightedGraph) -> f64 {
    let edges: Vec<_> = g.edges().collect();
    let n = g.num_nodes();
    let need = n - 1;
    let mut best = f64::NEG_INFINITY;
    let m = edges.len();
    for mask in 0u32..(1u32 << m) {
        if mask.count_ones() as usize != need {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        let mut ok = true;
        let mut total = 0.0;
        for (i, &(u, v, w)) in edges.iter().enumerate() {
            if mask >> i & 1 == 1 {
                let (a, b) = (find(&mut parent, u), find(&mut parent, v));
                if a == b {
                    ok = false;
                    break;
                }
                parent[a] = b;
                total += w;
            }
        }
        if ok {
            best = best.max(total);
        }
    }
    best
}
