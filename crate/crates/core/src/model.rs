//! Max-aggregation message-passing predictor with residual updates.
//!
//! For each layer, messages `M([h_u | e_uv])` are computed on both directions
//! of every bond, aggregated per target node (max, mean or sum), and the node
//! state is updated as `h_v + U([h_v | m_v])`. A node without neighbors
//! receives `m_v = 0`. A readout pools node states into a graph vector and an
//! MLP head produces the scalar prediction.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::chain_repeat;
use crate::diffcore::{DiffError, Tape, Tensor, Var};
use crate::graph::{PolymerGraph, EDGE_FEATURE_DIM, NODE_FEATURE_DIM};
use crate::smiles::RepeatUnit;

pub const CHECKPOINT_FORMAT: &str = "polychain-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] DiffError),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Neighborhood / node pooling function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
    Sum,
}

pub type Aggregator = Pooling;
pub type Readout = Pooling;

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
            Pooling::Sum => "sum",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            other => Err(format!("unknown pooling '{other}' (max|mean|sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub aggregator: Aggregator,
    pub readout: Readout,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_layers: 3,
            aggregator: Pooling::Max,
            readout: Pooling::Max,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::Config("hidden_dim must be positive".into()));
        }
        if self.num_layers == 0 {
            return Err(ModelError::Config("num_layers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w).unwrap(),
            bias: Tensor::vector(vec![0.0; fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::vector(vec![0.0; fan_out]),
        }
    }
}

/// One hidden layer with ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    fn glorot(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::glorot(rng, input, hidden),
            output: Linear::glorot(rng, hidden, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, hidden),
            output: Linear::zeros(hidden, output),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `[h_u | e_uv] -> d`
    pub message: Mlp,
    /// `[h_v | m_v] -> d`
    pub update: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub input_proj: Linear,
    pub layers: Vec<LayerParams>,
    pub head: Mlp,
    /// Predictions are `target_mean + target_scale * head(h)`.
    pub target_mean: f64,
    pub target_scale: f64,
}

/// Which parameter group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    InputProjection,
    Message(usize),
    Update(usize),
    Head,
}

impl ParamGroup {
    /// Message and update MLPs carry the sparsity penalty.
    pub fn penalized(self) -> bool {
        matches!(self, ParamGroup::Message(_) | ParamGroup::Update(_))
    }
}

const MLP_PARTS: [&str; 4] = ["hidden.weight", "hidden.bias", "output.weight", "output.bias"];

impl ModelParams {
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input_proj = Linear::glorot(&mut rng, NODE_FEATURE_DIM, d);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                message: Mlp::glorot(&mut rng, d + EDGE_FEATURE_DIM, d, d),
                update: Mlp::glorot(&mut rng, 2 * d, d, d),
            })
            .collect();
        let head = Mlp::glorot(&mut rng, d, d, 1);
        Ok(Self {
            config,
            input_proj,
            layers,
            head,
            target_mean: 0.0,
            target_scale: 1.0,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// All tensors in canonical order with their names and groups.
    pub fn named_tensors(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        let mut out = vec![
            ("input_proj.weight".to_string(), ParamGroup::InputProjection, &self.input_proj.weight),
            ("input_proj.bias".to_string(), ParamGroup::InputProjection, &self.input_proj.bias),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (part, t) in MLP_PARTS.iter().zip(layer.message.tensors()) {
                out.push((format!("layers.{l}.message.{part}"), ParamGroup::Message(l), t));
            }
            for (part, t) in MLP_PARTS.iter().zip(layer.update.tensors()) {
                out.push((format!("layers.{l}.update.{part}"), ParamGroup::Update(l), t));
            }
        }
        for (part, t) in MLP_PARTS.iter().zip(self.head.tensors()) {
            out.push((format!("head.{part}"), ParamGroup::Head, t));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, _, t)| t).collect()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.named_tensors().into_iter().map(|(_, g, _)| g).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.input_proj.weight, &mut self.input_proj.bias];
        for layer in &mut self.layers {
            out.extend(layer.message.tensors_mut());
            out.extend(layer.update.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `Σ_ℓ ‖θ_M^(ℓ)‖₁ + ‖θ_U^(ℓ)‖₁` over weights and biases of the message
    /// and update MLPs.
    pub fn l1_penalty(&self) -> f64 {
        self.named_tensors()
            .into_iter()
            .filter(|(_, g, _)| g.penalized())
            .map(|(_, _, t)| t.l1())
            .sum()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.tensors().into_iter().map(|t| tape.param(t.clone())).collect(),
            layers: self.layers.len(),
        }
    }

    /// Registers every tensor as a constant (inference only).
    pub fn register_frozen(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .tensors()
                .into_iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
            layers: self.layers.len(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: self.config.seed,
            config: self.config.clone(),
            target_mean: self.target_mean,
            target_scale: self.target_scale,
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(name, _, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format '{}'", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut params = Self::init(ck.config.clone())?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                ck.tensors.len()
            )));
        }
        for ((slot, name), saved) in params.tensors_mut().into_iter().zip(&names).zip(&ck.tensors) {
            if &saved.name != name || saved.shape != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor '{}' {:?} does not match '{}' {:?}",
                    saved.name,
                    saved.shape,
                    name,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(saved.shape.clone(), saved.data.clone())?;
        }
        params.target_mean = ck.target_mean;
        params.target_scale = ck.target_scale;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint =
            serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned parameter blob with a config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub target_mean: f64,
    pub target_scale: f64,
    pub tensors: Vec<NamedTensor>,
}

/// Tape handles for a registered [`ModelParams`], in canonical order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    layers: usize,
}

struct MlpVars([Var; 4]);

impl ParamVars {
    fn input_proj(&self) -> (Var, Var) {
        (self.vars[0], self.vars[1])
    }

    fn mlp(&self, start: usize) -> MlpVars {
        MlpVars([
            self.vars[start],
            self.vars[start + 1],
            self.vars[start + 2],
            self.vars[start + 3],
        ])
    }

    fn message(&self, l: usize) -> MlpVars {
        self.mlp(2 + 8 * l)
    }

    fn update(&self, l: usize) -> MlpVars {
        self.mlp(6 + 8 * l)
    }

    fn head(&self) -> MlpVars {
        self.mlp(2 + 8 * self.layers)
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn mlp(tape: &mut Tape, x: Var, p: &MlpVars) -> Result<Var, DiffError> {
    let h = linear(tape, x, p.0[0], p.0[1])?;
    let h = tape.relu(h);
    linear(tape, h, p.0[2], p.0[3])
}

/// Precomputed inputs for the tape forward pass: one graph, or the disjoint
/// union of several.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub num_nodes: usize,
    node_features: Tensor,
    /// Directed edge rows grouped by target; within a target by source index.
    edge_features: Tensor,
    sources: Rc<Vec<usize>>,
    segments: Rc<Vec<Vec<usize>>>,
    /// Node rows of each member graph.
    graphs: Rc<Vec<Vec<usize>>>,
    pub labels: Vec<Option<f64>>,
}

impl GraphInputs {
    pub fn new(g: &PolymerGraph) -> Self {
        let adj = g.adjacency();
        let edge_feat = g.edge_features();
        let mut sources = Vec::with_capacity(2 * g.num_edges());
        let mut ef = Vec::with_capacity(2 * g.num_edges() * EDGE_FEATURE_DIM);
        let mut segments = Vec::with_capacity(g.num_nodes());
        for nbrs in &adj {
            let mut seg = Vec::with_capacity(nbrs.len());
            for &(u, e) in nbrs {
                seg.push(sources.len());
                sources.push(u);
                ef.extend_from_slice(&edge_feat[e * EDGE_FEATURE_DIM..(e + 1) * EDGE_FEATURE_DIM]);
            }
            segments.push(seg);
        }
        Self {
            num_nodes: g.num_nodes(),
            node_features: Tensor::matrix(g.num_nodes(), NODE_FEATURE_DIM, g.node_features())
                .unwrap(),
            edge_features: Tensor::matrix(sources.len(), EDGE_FEATURE_DIM, ef).unwrap(),
            sources: Rc::new(sources),
            segments: Rc::new(segments),
            graphs: Rc::new(vec![(0..g.num_nodes()).collect()]),
            labels: vec![g.label()],
        }
    }

    /// Disjoint union; member graphs keep their order.
    pub fn union(parts: &[&GraphInputs]) -> Self {
        let mut nodes = Vec::new();
        let mut ef = Vec::new();
        let mut sources = Vec::new();
        let mut segments = Vec::new();
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        let (mut node_off, mut edge_off) = (0, 0);
        for p in parts {
            nodes.extend_from_slice(p.node_features.data());
            ef.extend_from_slice(p.edge_features.data());
            sources.extend(p.sources.iter().map(|&u| u + node_off));
            segments.extend(
                p.segments
                    .iter()
                    .map(|seg| seg.iter().map(|&r| r + edge_off).collect::<Vec<_>>()),
            );
            graphs.extend(
                p.graphs
                    .iter()
                    .map(|g| g.iter().map(|&v| v + node_off).collect::<Vec<_>>()),
            );
            labels.extend_from_slice(&p.labels);
            node_off += p.num_nodes;
            edge_off += p.sources.len();
        }
        Self {
            num_nodes: node_off,
            node_features: Tensor::matrix(node_off, NODE_FEATURE_DIM, nodes).unwrap(),
            edge_features: Tensor::matrix(edge_off, EDGE_FEATURE_DIM, ef).unwrap(),
            sources: Rc::new(sources),
            segments: Rc::new(segments),
            graphs: Rc::new(graphs),
            labels,
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }
}

/// Handles produced by [`forward_on_tape`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub node_states: Vec<Var>,
    pub messages: Vec<Var>,
    /// One row per member graph.
    pub graph_embedding: Var,
    /// Head output before the target de-normalization; one row per graph.
    pub raw_prediction: Var,
}

/// Records one graph's forward pass on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    input: &GraphInputs,
    aggregator: Aggregator,
) -> Result<ForwardVars, ModelError> {
    if input.graphs.iter().any(Vec::is_empty) {
        return Err(ModelError::EmptyGraph);
    }
    let x = tape.constant(input.node_features.clone());
    let ef = tape.constant(input.edge_features.clone());
    let (w, b) = vars.input_proj();
    let mut h = linear(tape, x, w, b)?;
    let mut node_states = vec![h];
    let mut messages = Vec::with_capacity(params.layers.len());
    for l in 0..params.layers.len() {
        let hu = tape.gather_rows(h, input.sources.clone())?;
        let msg_in = tape.concat(hu, ef)?;
        let msg = mlp(tape, msg_in, &vars.message(l))?;
        let m = match aggregator {
            Pooling::Max => tape.segment_max(msg, &input.segments)?,
            Pooling::Mean => tape.segment_mean(msg, input.segments.clone())?,
            Pooling::Sum => tape.segment_sum(msg, input.segments.clone())?,
        };
        messages.push(m);
        let upd_in = tape.concat(h, m)?;
        let upd = mlp(tape, upd_in, &vars.update(l))?;
        h = tape.add(h, upd)?;
        node_states.push(h);
    }
    let pooled = match params.config.readout {
        Pooling::Max => tape.segment_max(h, &input.graphs)?,
        Pooling::Mean => tape.segment_mean(h, input.graphs.clone())?,
        Pooling::Sum => tape.segment_sum(h, input.graphs.clone())?,
    };
    let raw = mlp(tape, pooled, &vars.head())?;
    Ok(ForwardVars {
        node_states,
        messages,
        graph_embedding: pooled,
        raw_prediction: raw,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    /// `N x d`
    pub node_embeddings: Tensor,
    pub graph_embedding: Vec<f64>,
    pub prediction: f64,
}

/// Per-layer intermediate values, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub embeddings: Embeddings,
    /// `node_states[0]` is the input projection; `node_states[ℓ]` follows layer ℓ.
    pub node_states: Vec<Tensor>,
    /// Aggregated messages `m_v` per layer.
    pub messages: Vec<Tensor>,
}

pub fn forward_traced(
    g: &PolymerGraph,
    params: &ModelParams,
    aggregator: Aggregator,
) -> Result<ForwardTrace, ModelError> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let input = GraphInputs::new(g);
    let f = forward_on_tape(&mut tape, params, &vars, &input, aggregator)?;
    let raw = tape.value(f.raw_prediction).item();
    let embeddings = Embeddings {
        node_embeddings: tape.value(*f.node_states.last().unwrap()).clone(),
        graph_embedding: tape.value(f.graph_embedding).data().to_vec(),
        prediction: params.target_mean + params.target_scale * raw,
    };
    if !embeddings.prediction.is_finite() {
        return Err(ModelError::Config("non-finite prediction".into()));
    }
    Ok(ForwardTrace {
        embeddings,
        node_states: f.node_states.iter().map(|&v| tape.value(v).clone()).collect(),
        messages: f.messages.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

pub fn forward(
    g: &PolymerGraph,
    params: &ModelParams,
    aggregator: Aggregator,
) -> Result<Embeddings, ModelError> {
    forward_traced(g, params, aggregator).map(|t| t.embeddings)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        // sqrt(x * x) == x exactly, so a vector against itself gives 1
        (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyEmbedding {
    pub sizes: Vec<usize>,
    pub embeddings: Vec<Embeddings>,
    /// Cosine similarity of each graph embedding to the `n = 1` embedding.
    pub cosine_to_single: Vec<f64>,
}

/// Embeds `chain_repeat(ru, n)` for each requested size, in order.
pub fn embed_family(
    ru: &RepeatUnit,
    sizes: &[usize],
    params: &ModelParams,
) -> Result<FamilyEmbedding, ModelError> {
    let agg = params.config.aggregator;
    let base = forward(&chain_repeat(ru, 1), params, agg)?;
    let mut embeddings = Vec::with_capacity(sizes.len());
    let mut cosine = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 {
            return Err(ModelError::Config("repeat size must be positive".into()));
        }
        let e = forward(&chain_repeat(ru, n), params, agg)?;
        cosine.push(cosine_similarity(&e.graph_embedding, &base.graph_embedding));
        embeddings.push(e);
    }
    Ok(FamilyEmbedding {
        sizes: sizes.to_vec(),
        embeddings,
        cosine_to_single: cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeKind, NodeAttr};
    use crate::smiles::{parse_repeat_unit, Element};

    fn small_config(agg: Pooling, readout: Pooling) -> ModelConfig {
        ModelConfig {
            hidden_dim: 6,
            num_layers: 2,
            aggregator: agg,
            readout,
            seed: 3,
        }
    }

    #[test]
    fn isolated_node_never_aggregates() {
        let g = PolymerGraph::new(
            vec![NodeAttr {
                element: Element::C,
                hydrogens: 4,
            }],
            vec![],
            1,
            1,
            None,
        )
        .unwrap();
        for agg in [Pooling::Max, Pooling::Mean, Pooling::Sum] {
            let p = ModelParams::init(small_config(agg, Pooling::Max)).unwrap();
            let t = forward_traced(&g, &p, agg).unwrap();
            for m in &t.messages {
                assert!(m.data().iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn zero_update_is_identity() {
        let mut p = ModelParams::init(small_config(Pooling::Max, Pooling::Max)).unwrap();
        let d = p.hidden_dim();
        for layer in &mut p.layers {
            layer.update = Mlp::zeros(2 * d, d, d);
        }
        let g = chain_repeat(&parse_repeat_unit("*CC(=O)OC*").unwrap(), 2);
        let t = forward_traced(&g, &p, Pooling::Max).unwrap();
        for w in t.node_states.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn empty_graph_rejected() {
        let g = PolymerGraph::new(vec![], vec![], 1, 0, None).unwrap();
        let p = ModelParams::init(small_config(Pooling::Max, Pooling::Max)).unwrap();
        assert!(matches!(forward(&g, &p, Pooling::Max), Err(ModelError::EmptyGraph)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = ModelParams::init(small_config(Pooling::Mean, Pooling::Sum)).unwrap();
        p.target_mean = 12.5;
        p.target_scale = 0.1 + 0.2;
        let q = ModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn tie_routes_gradient_to_lowest_neighbor() {
        // star: center 0 with three identical leaves
        let leaf = NodeAttr {
            element: Element::C,
            hydrogens: 3,
        };
        let edges = (1..4)
            .map(|v| Edge {
                u: 0,
                v,
                kind: EdgeKind::Single,
            })
            .collect();
        let g = PolymerGraph::new(vec![leaf; 4], edges, 1, 4, None).unwrap();
        let p = ModelParams::init(small_config(Pooling::Max, Pooling::Max)).unwrap();
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let input = GraphInputs::new(&g);
        let f = forward_on_tape(&mut tape, &p, &vars, &input, Pooling::Max).unwrap();
        let m0 = f.messages[0];
        let arg = tape.argmax_rows(m0).unwrap();
        let d = p.hidden_dim();
        // node 0's incoming rows are 0,1,2 (sources 1,2,3); every column picks row 0
        assert!(arg[..d].iter().all(|&r| r == 0));
    }

    #[test]
    fn embed_family_self_cosine() {
        let p = ModelParams::init(small_config(Pooling::Max, Pooling::Max)).unwrap();
        let f = embed_family(&parse_repeat_unit("*CC*").unwrap(), &[1], &p).unwrap();
        assert!((f.cosine_to_single[0] - 1.0).abs() < 1e-15);
    }
}
