//! Maximum spanning trees, the hyperchain abstraction of chained units, and
//! executable checks of its invariance and gradient-accumulation behavior.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::diffcore::{Adam, DiffError, Tape, Tensor, Var};
use crate::graph::{EdgeKind, PolymerGraph};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("invalid weighted graph: {0}")]
    InvalidGraph(String),
    #[error("malformed hyperchain: {0}")]
    Malformed(String),
    #[error("construction violates the contraction bound: {0}")]
    Construction(String),
    #[error("training stopped at loss {loss:e}, above threshold {threshold:e}")]
    TrainingFailure { loss: f64, threshold: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Shape(#[from] DiffError),
}

/// Undirected graph with positive symmetric edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    weights: BTreeMap<(usize, usize), f64>,
}

fn key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

impl WeightedGraph {
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, TheoryError> {
        let mut weights = BTreeMap::new();
        for &(u, v, w) in edges {
            if u == v {
                return Err(TheoryError::InvalidGraph(format!("self-loop at {u}")));
            }
            if u >= n || v >= n {
                return Err(TheoryError::InvalidGraph(format!("edge ({u}, {v}) out of range")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(TheoryError::InvalidGraph(format!("weight {w} on ({u}, {v})")));
            }
            if weights.insert(key(u, v), w).is_some() {
                return Err(TheoryError::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Self { n, weights })
    }

    /// Reads `u,v,w` rows (header required).
    pub fn from_csv(text: &str) -> Result<Self, TheoryError> {
        let bad = |m: String| TheoryError::InvalidGraph(m);
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["u", "v", "w"] {
            return Err(bad("expected header 'u,v,w'".into()));
        }
        let mut edges = Vec::new();
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("line {line}: missing field")));
            let u: usize = field(0)?.parse().map_err(|_| bad(format!("line {line}: bad node")))?;
            let v: usize = field(1)?.parse().map_err(|_| bad(format!("line {line}: bad node")))?;
            let w: f64 = field(2)?.parse().map_err(|_| bad(format!("line {line}: bad weight")))?;
            n = n.max(u + 1).max(v + 1);
            edges.push((u, v, w));
        }
        Self::new(n, &edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.weights.get(&key(u, v)).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().map(|(&(u, v), &w)| (u, v, w))
    }

    /// Neighbors in ascending index order.
    pub fn neighbors(&self, v: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .weights
            .iter()
            .filter_map(|(&(a, b), &w)| match (a == v, b == v) {
                (true, _) => Some((b, w)),
                (_, true) => Some((a, w)),
                _ => None,
            })
            .collect();
        out.sort_by_key(|&(u, _)| u);
        out
    }
}

/// Prim's recurrence for a maximum spanning tree. `in_tree[v]` marks tree
/// membership, `best[v]` is the heaviest edge from the tree to `v`, and the
/// next node is the argmax of `best` over non-tree nodes. Ties go to the
/// smaller node index, for both the next node and its attachment point.
///
/// Edges are returned as `(min, max)` pairs in insertion order.
pub fn prim_mst(g: &WeightedGraph, start: usize) -> Result<Vec<(usize, usize)>, TheoryError> {
    let n = g.n;
    if start >= n {
        return Err(TheoryError::InvalidGraph(format!("start {start} out of range")));
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let relax = |v: usize, in_tree: &[bool], best: &mut [f64], parent: &mut [usize]| {
        for (u, w) in g.neighbors(v) {
            if !in_tree[u] && (w > best[u] || (w == best[u] && v < parent[u])) {
                best[u] = w;
                parent[u] = v;
            }
        }
    };
    in_tree[start] = true;
    relax(start, &in_tree, &mut best, &mut parent);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut next: Option<usize> = None;
        for v in 0..n {
            if in_tree[v] || best[v] == f64::NEG_INFINITY {
                continue;
            }
            if next.map_or(true, |c| best[v] > best[c]) {
                next = Some(v);
            }
        }
        let v = next.ok_or(TheoryError::Disconnected)?;
        in_tree[v] = true;
        edges.push(key(parent[v], v));
        relax(v, &in_tree, &mut best, &mut parent);
    }
    Ok(edges)
}

pub fn tree_weight(g: &WeightedGraph, edges: &[(usize, usize)]) -> f64 {
    edges.iter().filter_map(|&(u, v)| g.weight(u, v)).sum()
}

/// For every node, the edge to the neighbor whose message score (the edge
/// weight) wins a max aggregation; ties go to the lower neighbor index.
pub fn max_aggregation_selections(g: &WeightedGraph) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for v in 0..g.n {
        let mut pick: Option<(usize, f64)> = None;
        for (u, w) in g.neighbors(v) {
            if pick.map_or(true, |(_, bw)| w > bw) {
                pick = Some((u, w));
            }
        }
        if let Some((u, _)) = pick {
            out.insert(key(u, v));
        }
    }
    out
}

/// `0` for `n = 1`; `1` at either end; `2` in the interior. `i` is 1-based.
pub fn hyperdegree_closed_form(n: usize, i: usize) -> usize {
    if n == 1 {
        0
    } else if i == 1 || i == n {
        1
    } else {
        2
    }
}

/// Path over supernodes obtained by contracting each repeat unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hyperchain {
    pub len: usize,
    /// Supernode pairs `(a, b)`, `a < b`, 0-based, sorted.
    pub edges: Vec<(usize, usize)>,
    pub hyperdegrees: Vec<usize>,
}

impl Hyperchain {
    /// The path `P_n`.
    pub fn path(n: usize) -> Result<Self, TheoryError> {
        if n == 0 {
            return Err(TheoryError::InvalidParam("hyperchain length must be positive".into()));
        }
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    fn from_edges(len: usize, mut edges: Vec<(usize, usize)>) -> Result<Self, TheoryError> {
        edges.sort_unstable();
        if edges.len() != len - 1 {
            return Err(TheoryError::Malformed(format!(
                "{} supernodes need {} links, found {}",
                len,
                len - 1,
                edges.len()
            )));
        }
        let mut deg = vec![0usize; len];
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(TheoryError::Malformed(format!("repeated link {:?}", w[0])));
            }
        }
        for &(a, b) in &edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        if deg.iter().any(|&d| d > 2) {
            return Err(TheoryError::Malformed("a supernode has more than two links".into()));
        }
        // n - 1 edges, max degree 2: a simple path iff connected
        let mut seen = vec![false; len];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for &(a, b) in &edges {
                let other = if a == s { b } else if b == s { a } else { continue };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        if seen.iter().any(|&x| !x) {
            return Err(TheoryError::Malformed("links do not connect all supernodes".into()));
        }
        Ok(Self {
            len,
            edges,
            hyperdegrees: deg,
        })
    }

    /// Neighbors of each supernode in ascending order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len];
        for &(a, b) in &self.edges {
            out[a].push(b);
            out[b].push(a);
        }
        for n in &mut out {
            n.sort_unstable();
        }
        out
    }
}

/// Maps node `i` to supernode `i / unit_size` and keeps only inter-unit edges.
pub fn contract(g: &PolymerGraph) -> Result<Hyperchain, TheoryError> {
    let k = g.unit_size();
    let n = g.repeat_count();
    if k == 0 || g.num_nodes() != n * k {
        return Err(TheoryError::Malformed(format!(
            "{} nodes is not {} units of {}",
            g.num_nodes(),
            n,
            k
        )));
    }
    let mut links = Vec::new();
    for e in g.edges() {
        let (a, b) = (e.u / k, e.v / k);
        match (e.kind == EdgeKind::InterUnit, a == b) {
            (true, true) => {
                return Err(TheoryError::Malformed(format!(
                    "inter-unit edge ({}, {}) inside unit {}",
                    e.u, e.v, a
                )))
            }
            (false, false) => {
                return Err(TheoryError::Malformed(format!(
                    "bond ({}, {}) crosses units {} and {}",
                    e.u, e.v, a, b
                )))
            }
            (true, false) => links.push(key(a, b)),
            (false, true) => {}
        }
    }
    Hyperchain::from_edges(n, links)
}

/// Shared affine layer maps acting on row vectors:
/// `m_s = max_{u ∈ N(s)} (h_u · message + message_bias)` and
/// `h_s' = h_s · update_self + m_s · update_message + update_bias`.
/// The fixed inter-unit edge feature enters through `message_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMaps {
    pub message: Tensor,
    pub message_bias: Tensor,
    pub update_self: Tensor,
    pub update_message: Tensor,
    pub update_bias: Tensor,
}

impl LayerMaps {
    pub fn dim(&self) -> usize {
        self.message.rows()
    }

    fn check(&self) -> Result<(), TheoryError> {
        let d = self.dim();
        let square = [&self.message, &self.update_self, &self.update_message];
        if square.iter().any(|t| t.shape() != [d, d])
            || [&self.message_bias, &self.update_bias].iter().any(|t| t.len() != d)
        {
            return Err(TheoryError::InvalidParam("layer map shapes disagree".into()));
        }
        Ok(())
    }

    fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.message,
            &self.message_bias,
            &self.update_self,
            &self.update_message,
            &self.update_bias,
        ]
    }
}

/// Induced ∞-norm of `x ↦ x · w` for row vectors: the largest absolute
/// column sum.
pub fn row_map_norm(w: &Tensor) -> f64 {
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| w.row(i)[j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Layer maps whose per-layer Lipschitz bound (∞-norm, where max
/// aggregation is 1-Lipschitz) does not exceed `lipschitz < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionNet {
    pub maps: LayerMaps,
    pub lipschitz: f64,
}

impl ContractionNet {
    pub fn new(maps: LayerMaps, lipschitz: f64) -> Result<Self, TheoryError> {
        maps.check()?;
        if !(lipschitz > 0.0 && lipschitz < 1.0) {
            return Err(TheoryError::Construction(format!("constant {lipschitz} not in (0, 1)")));
        }
        let net = Self { maps, lipschitz };
        let bound = net.layer_lipschitz_bound();
        if bound > lipschitz * (1.0 + 1e-12) {
            return Err(TheoryError::Construction(format!(
                "layer bound {bound} exceeds {lipschitz}"
            )));
        }
        Ok(net)
    }

    /// `‖update_self‖ + ‖message‖ · ‖update_message‖`.
    pub fn layer_lipschitz_bound(&self) -> f64 {
        let m = &self.maps;
        row_map_norm(&m.update_self) + row_map_norm(&m.message) * row_map_norm(&m.update_message)
    }

    /// One-dimensional net with `message = l`, `update_message = 1` and
    /// everything else zero; each layer scales the routed value by exactly `l`.
    pub fn scalar(l: f64) -> Result<Self, TheoryError> {
        let s = |x: f64| Tensor::matrix(1, 1, vec![x]).unwrap();
        Self::new(
            LayerMaps {
                message: s(l),
                message_bias: Tensor::vector(vec![0.0]),
                update_self: s(0.0),
                update_message: s(1.0),
                update_bias: Tensor::vector(vec![0.0]),
            },
            l,
        )
    }
}

struct ChainIndex {
    sources: Rc<Vec<usize>>,
    segments: Vec<Vec<usize>>,
}

impl ChainIndex {
    fn new(c: &Hyperchain) -> Self {
        let mut sources = Vec::new();
        let mut segments = Vec::with_capacity(c.len);
        for nbrs in c.neighbors() {
            let mut seg = Vec::with_capacity(nbrs.len());
            for u in nbrs {
                seg.push(sources.len());
                sources.push(u);
            }
            segments.push(seg);
        }
        Self {
            sources: Rc::new(sources),
            segments,
        }
    }
}

/// Records `layers` shared layers; returns the state after each layer,
/// preceded by `init`.
fn record_layers(
    tape: &mut Tape,
    c: &Hyperchain,
    maps: [Var; 5],
    init: Var,
    layers: usize,
) -> Result<Vec<Var>, DiffError> {
    let index = ChainIndex::new(c);
    let [msg_w, msg_b, upd_self, upd_msg, upd_b] = maps;
    let mut states = vec![init];
    let mut h = init;
    for _ in 0..layers {
        let hm = tape.matmul(h, msg_w)?;
        let hm = tape.add_row(hm, msg_b)?;
        let routed = tape.gather_rows(hm, index.sources.clone())?;
        let m = tape.segment_max(routed, &index.segments)?;
        let a = tape.matmul(h, upd_self)?;
        let b = tape.matmul(m, upd_msg)?;
        let sum = tape.add(a, b)?;
        h = tape.add_row(sum, upd_b)?;
        states.push(h);
    }
    Ok(states)
}

fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, vec![1.0; rows * cols]).unwrap()
}

/// Per-layer supernode embeddings: element 0 is `init` (all ones when
/// `None`), element `t` follows layer `t`.
pub fn hyperchain_forward_layers(
    c: &Hyperchain,
    maps: &LayerMaps,
    layers: usize,
    init: Option<&Tensor>,
) -> Result<Vec<Tensor>, TheoryError> {
    if layers == 0 {
        return Err(TheoryError::InvalidParam("at least one layer is required".into()));
    }
    maps.check()?;
    let init = init.cloned().unwrap_or_else(|| ones(c.len, maps.dim()));
    let mut tape = Tape::new();
    let vars = maps.tensors().map(|t| tape.constant(t.clone()));
    let h0 = tape.constant(init);
    let states = record_layers(&mut tape, c, vars, h0, layers)?;
    Ok(states.iter().map(|&v| tape.value(v).clone()).collect())
}

/// Supernode embeddings after `layers` layers of a contraction net.
pub fn hyperchain_forward(
    c: &Hyperchain,
    net: &ContractionNet,
    layers: usize,
) -> Result<Tensor, TheoryError> {
    Ok(hyperchain_forward_layers(c, &net.maps, layers, None)?
        .pop()
        .unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSumReport {
    pub n: usize,
    pub lipschitz: f64,
    pub delta: f64,
    pub layers: usize,
    pub measured: f64,
    pub closed_form: f64,
    pub rel_error: f64,
    pub pass: bool,
    pub construction: &'static str,
}

pub const GRAD_SUM_TOLERANCE: f64 = 1e-6;

/// `δ·L·(1 − L^(n−2)) / (1 − L)`.
pub fn grad_sum_closed_form(n: usize, l: f64, delta: f64) -> f64 {
    delta * l * (1.0 - l.powi(n as i32 - 2)) / (1.0 - l)
}

/// Runs the scalar contraction net for `n − 2` layers on `P_n` from all-ones
/// states. Every message ties, so max aggregation routes supernode `k` from
/// `k − 1` (its lowest neighbor). An error of norm `δ` is injected once, at
/// the last supernode's final state, and back-propagated; the measured value
/// is the sum over layers and interior supernodes of the gradient norm.
pub fn verify_grad_sum(n: usize, lipschitz: f64, delta: f64) -> Result<GradSumReport, TheoryError> {
    if n < 3 {
        return Err(TheoryError::InvalidParam(format!("chain length {n} < 3")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(TheoryError::InvalidParam(format!("delta {delta} must be positive")));
    }
    let net = ContractionNet::scalar(lipschitz)?;
    let chain = Hyperchain::path(n)?;
    let layers = n - 2;
    let mut tape = Tape::new();
    let vars = net.maps.tensors().map(|t| tape.constant(t.clone()));
    let h0 = tape.param(ones(n, 1));
    let states = record_layers(&mut tape, &chain, vars, h0, layers)?;
    let last = *states.last().unwrap();
    let mut seed = Tensor::zeros(&[n, 1]);
    seed.data_mut()[n - 1] = delta;
    let grads = tape.backward_retained(last, seed);
    let mut measured = 0.0;
    for &state in &states[..layers] {
        if let Some(g) = grads.get(state) {
            for (s, &deg) in chain.hyperdegrees.iter().enumerate() {
                if deg == 2 {
                    measured += g.row(s).iter().map(|x| x * x).sum::<f64>().sqrt();
                }
            }
        }
    }
    let closed_form = grad_sum_closed_form(n, lipschitz, delta);
    let rel_error = (measured - closed_form).abs() / closed_form;
    Ok(GradSumReport {
        n,
        lipschitz,
        delta,
        layers,
        measured,
        closed_form,
        rel_error,
        pass: rel_error <= GRAD_SUM_TOLERANCE,
        construction: "scalar maps, all-ones states, n-2 layers, error injected once at the final layer on the last supernode",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceConfig {
    pub dim: usize,
    pub layers: usize,
    pub target: f64,
    pub seed: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub l1_weight: f64,
    pub max_steps: usize,
    pub loss_threshold: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            layers: 2,
            target: 1.0,
            seed: 0,
            lr: 1e-2,
            lr_decay: 0.999,
            l1_weight: 1e-5,
            max_steps: 5000,
            loss_threshold: 1e-6,
        }
    }
}

/// Layer maps plus a linear head over the max-pooled supernode states.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperchainRegressor {
    pub maps: LayerMaps,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    pub layers: usize,
}

impl HyperchainRegressor {
    pub fn init(dim: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |r: usize, c: usize| {
            let lim = (6.0 / (r + c) as f64).sqrt();
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-lim..lim)).collect()).unwrap()
        };
        Self {
            maps: LayerMaps {
                message: glorot(dim, dim),
                message_bias: Tensor::vector(vec![0.0; dim]),
                update_self: glorot(dim, dim),
                update_message: glorot(dim, dim),
                update_bias: Tensor::vector(vec![0.0; dim]),
            },
            head_weight: glorot(dim, 1),
            head_bias: Tensor::vector(vec![0.0]),
            layers,
        }
    }

    pub fn zeros(dim: usize, layers: usize) -> Self {
        let z = || Tensor::zeros(&[dim, dim]);
        Self {
            maps: LayerMaps {
                message: z(),
                message_bias: Tensor::vector(vec![0.0; dim]),
                update_self: z(),
                update_message: z(),
                update_bias: Tensor::vector(vec![0.0; dim]),
            },
            head_weight: Tensor::zeros(&[dim, 1]),
            head_bias: Tensor::vector(vec![0.0]),
            layers,
        }
    }

    fn tensors(&self) -> Vec<Tensor> {
        let mut v: Vec<Tensor> = self.maps.tensors().into_iter().cloned().collect();
        v.push(self.head_weight.clone());
        v.push(self.head_bias.clone());
        v
    }

    fn set_tensors(&mut self, t: &[Tensor]) {
        self.maps.message = t[0].clone();
        self.maps.message_bias = t[1].clone();
        self.maps.update_self = t[2].clone();
        self.maps.update_message = t[3].clone();
        self.maps.update_bias = t[4].clone();
        self.head_weight = t[5].clone();
        self.head_bias = t[6].clone();
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], c: &Hyperchain) -> Result<Var, DiffError> {
        let h0 = tape.constant(ones(c.len, self.maps.dim()));
        let maps = [vars[0], vars[1], vars[2], vars[3], vars[4]];
        let states = record_layers(tape, c, maps, h0, self.layers)?;
        let pooled = tape.rowwise_max(*states.last().unwrap())?;
        let y = tape.matmul(pooled, vars[5])?;
        tape.add_row(y, vars[6])
    }

    /// `f(P_m)`.
    pub fn predict(&self, m: usize) -> Result<f64, TheoryError> {
        let c = Hyperchain::path(m)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.constant(t)).collect();
        let y = self.record(&mut tape, &vars, &c)?;
        Ok(tape.value(y).item())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub train_sizes: Vec<usize>,
    pub test_sizes: Vec<usize>,
    pub target: f64,
    pub seed: u64,
    pub steps: usize,
    pub train_loss: f64,
    pub max_deviation: f64,
    pub worst_size: usize,
    pub tol: f64,
    pub pass: bool,
}

fn deviation_report(
    net: &HyperchainRegressor,
    train_sizes: &[usize],
    test_sizes: &[usize],
    tol: f64,
    cfg: &InvarianceConfig,
    steps: usize,
    train_loss: f64,
) -> Result<InvarianceReport, TheoryError> {
    let mut max_deviation = 0.0;
    let mut worst_size = test_sizes.first().copied().unwrap_or(0);
    for &m in test_sizes {
        let dev = (net.predict(m)? - cfg.target).abs();
        if dev > max_deviation {
            max_deviation = dev;
            worst_size = m;
        }
    }
    Ok(InvarianceReport {
        train_sizes: train_sizes.to_vec(),
        test_sizes: test_sizes.to_vec(),
        target: cfg.target,
        seed: cfg.seed,
        steps,
        train_loss,
        max_deviation,
        worst_size,
        tol,
        pass: max_deviation <= tol,
    })
}

/// Deviation report for an already trained (or hand-set) regressor.
pub fn invariance_of(
    net: &HyperchainRegressor,
    test_sizes: &[usize],
    tol: f64,
    cfg: &InvarianceConfig,
) -> Result<InvarianceReport, TheoryError> {
    deviation_report(net, &[], test_sizes, tol, cfg, 0, f64::NAN)
}

/// Trains a regressor on the paths in `train_sizes`, all sharing
/// `cfg.target`, with MSE plus an ℓ1 penalty on the layer maps, until the
/// task loss reaches `cfg.loss_threshold`; then measures
/// `max_m |f(P_m) − target|` over `test_sizes`.
pub fn verify_latent_invariance(
    train_sizes: &[usize],
    test_sizes: &[usize],
    tol: f64,
    cfg: &InvarianceConfig,
) -> Result<(InvarianceReport, HyperchainRegressor), TheoryError> {
    if train_sizes.is_empty() || train_sizes.contains(&0) || test_sizes.contains(&0) {
        return Err(TheoryError::InvalidParam("sizes must be positive".into()));
    }
    if cfg.dim == 0 || cfg.layers == 0 {
        return Err(TheoryError::InvalidParam("dim and layers must be positive".into()));
    }
    let chains = train_sizes
        .iter()
        .map(|&n| Hyperchain::path(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut net = HyperchainRegressor::init(cfg.dim, cfg.layers, cfg.seed);
    let mut flat = net.tensors();
    let mut adam = Adam::new(&flat, cfg.lr);
    let targets = Rc::new(vec![cfg.target; chains.len()]);
    let mut task = f64::INFINITY;
    let mut steps = 0;
    while steps < cfg.max_steps {
        let mut tape = Tape::new();
        let vars: Vec<Var> = flat.iter().map(|t| tape.param(t.clone())).collect();
        let mut preds: Option<Var> = None;
        for c in &chains {
            let y = net.record(&mut tape, &vars, c)?;
            preds = Some(match preds {
                None => y,
                Some(p) => tape.concat(p, y)?,
            });
        }
        let loss = tape.mse(preds.unwrap(), targets.clone())?;
        task = tape.value(loss).item();
        if !task.is_finite() {
            break;
        }
        if task <= cfg.loss_threshold {
            break;
        }
        let mut total = loss;
        if cfg.l1_weight > 0.0 {
            for &v in &vars[..5] {
                let n = tape.l1_norm(v);
                let n = tape.scale(n, cfg.l1_weight);
                total = tape.add(total, n)?;
            }
        }
        let mut g = tape.backward(total);
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(&flat)
            .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        adam.lr = cfg.lr * cfg.lr_decay.powi(steps as i32);
        adam.step(&mut flat, &grads)?;
        net.set_tensors(&flat);
        steps += 1;
    }
    net.set_tensors(&flat);
    if !(task <= cfg.loss_threshold) {
        return Err(TheoryError::TrainingFailure {
            loss: task,
            threshold: cfg.loss_threshold,
        });
    }
    let report = deviation_report(&net, train_sizes, test_sizes, tol, cfg, steps, task)?;
    Ok((report, net))
}
