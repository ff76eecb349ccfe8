//! Featurized polymer graphs, JSON Lines interchange and graph statistics.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{BondOrder, Element, RepeatUnit};

/// 11 element slots (`*` last) + 5 degree buckets + 5 hydrogen buckets.
pub const NODE_FEATURE_DIM: usize = 21;
/// single, double, triple, inter-unit.
pub const EDGE_FEATURE_DIM: usize = 4;
const BUCKETS: usize = 5;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Single,
    Double,
    Triple,
    /// Polymerization bond between consecutive repeat units.
    InterUnit,
}

impl EdgeKind {
    pub fn index(self) -> usize {
        match self {
            EdgeKind::Single => 0,
            EdgeKind::Double => 1,
            EdgeKind::Triple => 2,
            EdgeKind::InterUnit => 3,
        }
    }

    /// Integer code used in the JSONL `order` field; inter-unit is 0.
    pub fn code(self) -> u32 {
        match self {
            EdgeKind::InterUnit => 0,
            EdgeKind::Single => 1,
            EdgeKind::Double => 2,
            EdgeKind::Triple => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<EdgeKind> {
        match code {
            0 => Some(EdgeKind::InterUnit),
            c => BondOrder::from_value(c).map(EdgeKind::from),
        }
    }
}

impl From<BondOrder> for EdgeKind {
    fn from(o: BondOrder) -> Self {
        match o {
            BondOrder::Single => EdgeKind::Single,
            BondOrder::Double => EdgeKind::Double,
            BondOrder::Triple => EdgeKind::Triple,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeAttr {
    pub element: Element,
    pub hydrogens: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub kind: EdgeKind,
}

/// Immutable atom/bond graph of `repeat_count` chained copies of a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PolymerGraph {
    nodes: Vec<NodeAttr>,
    degrees: Vec<usize>,
    edges: Vec<Edge>,
    repeat_count: usize,
    unit_size: usize,
    label: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub diameter: usize,
}

impl PolymerGraph {
    /// Builds a graph, normalizing each edge to `u < v` and checking invariants.
    pub fn new(
        nodes: Vec<NodeAttr>,
        edges: Vec<Edge>,
        repeat_count: usize,
        unit_size: usize,
        label: Option<f64>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        if repeat_count == 0 {
            return Err(GraphError::Invalid("repeat count must be positive".into()));
        }
        let mut degrees = vec![0usize; n];
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for e in edges {
            if e.u == e.v {
                return Err(GraphError::Invalid(format!("self-loop at node {}", e.u)));
            }
            if e.u >= n || e.v >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({}, {}) out of range for {n} nodes",
                    e.u, e.v
                )));
            }
            let (u, v) = (e.u.min(e.v), e.u.max(e.v));
            if !seen.insert((u, v)) {
                return Err(GraphError::Invalid(format!("duplicate edge ({u}, {v})")));
            }
            degrees[u] += 1;
            degrees[v] += 1;
            normalized.push(Edge { u, v, kind: e.kind });
        }
        Ok(Self {
            nodes,
            degrees,
            edges: normalized,
            repeat_count,
            unit_size,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeAttr] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    pub fn repeat_count(&self) -> usize {
        self.repeat_count
    }

    pub fn unit_size(&self) -> usize {
        self.unit_size
    }

    pub fn label(&self) -> Option<f64> {
        self.label
    }

    pub fn with_label(mut self, label: Option<f64>) -> Self {
        self.label = label;
        self
    }

    pub fn is_anchor(&self, node: usize) -> bool {
        self.nodes[node].element == Element::Star
    }

    /// Row-major `N x NODE_FEATURE_DIM` one-hot feature matrix.
    pub fn node_features(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nodes.len() * NODE_FEATURE_DIM];
        for (i, node) in self.nodes.iter().enumerate() {
            let row = &mut x[i * NODE_FEATURE_DIM..(i + 1) * NODE_FEATURE_DIM];
            row[node.element.index()] = 1.0;
            row[11 + self.degrees[i].min(BUCKETS - 1)] = 1.0;
            row[11 + BUCKETS + (node.hydrogens as usize).min(BUCKETS - 1)] = 1.0;
        }
        x
    }

    /// Row-major `E x EDGE_FEATURE_DIM` one-hot edge features, in edge order.
    pub fn edge_features(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.edges.len() * EDGE_FEATURE_DIM];
        for (i, e) in self.edges.iter().enumerate() {
            x[i * EDGE_FEATURE_DIM + e.kind.index()] = 1.0;
        }
        x
    }

    /// Neighbor lists `(neighbor, edge index)` sorted by neighbor index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.u].push((e.v, i));
            adj[e.v].push((e.u, i));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.nodes.len();
        let mut check = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut check[p], true))
        {
            return Err(GraphError::Invalid("not a permutation".into()));
        }
        let mut nodes = self.nodes.clone();
        for (i, &p) in perm.iter().enumerate() {
            nodes[p] = self.nodes[i];
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                u: perm[e.u],
                v: perm[e.v],
                kind: e.kind,
            })
            .collect();
        Self::new(nodes, edges, self.repeat_count, self.unit_size, self.label)
    }

    pub fn stats(&self) -> Result<GraphStats, GraphError> {
        Ok(GraphStats {
            num_nodes: self.num_nodes(),
            num_edges: self.num_edges(),
            diameter: diameter(self)?,
        })
    }

    pub fn to_json_line(&self) -> String {
        let doc = JsonGraph {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| JsonNode {
                    el: n.element.symbol().to_string(),
                    anchor: n.element == Element::Star,
                    deg: self.degrees[i],
                    hs: n.hydrogens,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| [e.u, e.v, e.kind.code() as usize])
                .collect(),
            n: self.repeat_count,
            unit_size: self.unit_size,
            label: self.label,
        };
        serde_json::to_string(&doc).expect("graph serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, GraphError> {
        let doc: JsonGraph =
            serde_json::from_str(line).map_err(|source| GraphError::Json { line: 0, source })?;
        let nodes = doc
            .nodes
            .iter()
            .map(|n| {
                let element = Element::from_symbol(&n.el)
                    .ok_or_else(|| GraphError::Invalid(format!("unknown element '{}'", n.el)))?;
                if n.anchor != (element == Element::Star) {
                    return Err(GraphError::Invalid("anchor flag disagrees with element".into()));
                }
                Ok(NodeAttr {
                    element,
                    hydrogens: n.hs,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = doc
            .edges
            .iter()
            .map(|&[u, v, code]| {
                let kind = EdgeKind::from_code(code as u32)
                    .ok_or_else(|| GraphError::Invalid(format!("unknown edge order {code}")))?;
                Ok(Edge { u, v, kind })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        let g = Self::new(nodes, edges, doc.n, doc.unit_size, doc.label)?;
        for (i, n) in doc.nodes.iter().enumerate() {
            if g.degrees[i] != n.deg {
                return Err(GraphError::Invalid(format!(
                    "node {i} declares degree {} but has {}",
                    n.deg, g.degrees[i]
                )));
            }
        }
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    el: String,
    anchor: bool,
    deg: usize,
    hs: u8,
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    nodes: Vec<JsonNode>,
    edges: Vec<[usize; 3]>,
    n: usize,
    unit_size: usize,
    label: Option<f64>,
}

pub fn write_jsonl<W: Write>(mut w: W, graphs: &[PolymerGraph]) -> std::io::Result<()> {
    for g in graphs {
        writeln!(w, "{}", g.to_json_line())?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<PolymerGraph>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g = PolymerGraph::from_json_line(&line).map_err(|e| match e {
            GraphError::Json { source, .. } => GraphError::Json {
                line: i + 1,
                source,
            },
            other => GraphError::Invalid(format!("line {}: {other}", i + 1)),
        })?;
        out.push(g);
    }
    Ok(out)
}

/// Single-unit graph (`repeat_count = 1`).
pub fn featurize(ru: &RepeatUnit) -> PolymerGraph {
    crate::augment::chain_repeat(ru, 1)
}

/// Exact unweighted diameter by BFS from every node.
pub fn diameter(g: &PolymerGraph) -> Result<usize, GraphError> {
    let n = g.num_nodes();
    if n == 0 {
        return Ok(0);
    }
    let adj = g.adjacency();
    let mut best = 0;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        dist.fill(usize::MAX);
        dist[s] = 0;
        queue.clear();
        queue.push_back(s);
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        if reached != n {
            return Err(GraphError::Disconnected);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_repeat_unit;

    fn path(n: usize) -> PolymerGraph {
        let nodes = vec![
            NodeAttr {
                element: Element::C,
                hydrogens: 2
            };
            n
        ];
        let edges = (1..n)
            .map(|i| Edge {
                u: i - 1,
                v: i,
                kind: EdgeKind::Single,
            })
            .collect();
        PolymerGraph::new(nodes, edges, 1, n, None).unwrap()
    }

    #[test]
    fn featurize_smallest_unit() {
        let g = featurize(&parse_repeat_unit("*CC*").unwrap());
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_edges(), 3);
        let x = g.node_features();
        assert_eq!(x.len(), 4 * NODE_FEATURE_DIM);
        assert_eq!(x[10], 1.0);
        assert_eq!(x[3 * NODE_FEATURE_DIM + 10], 1.0);
        assert_eq!(x[NODE_FEATURE_DIM + 10], 0.0);
        for row in x.chunks(NODE_FEATURE_DIM) {
            assert_eq!(row[..11].iter().sum::<f64>(), 1.0);
            assert_eq!(row[11..16].iter().sum::<f64>(), 1.0);
            assert_eq!(row[16..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn ester_has_one_double_bond() {
        let g = featurize(&parse_repeat_unit("*CC(=O)OC*").unwrap());
        let e = g.edge_features();
        let doubles: f64 = e.chunks(EDGE_FEATURE_DIM).map(|r| r[1]).sum();
        assert_eq!(doubles, 1.0);
    }

    #[test]
    fn diameter_basics() {
        assert_eq!(diameter(&path(4)).unwrap(), 3);
        assert_eq!(diameter(&path(1)).unwrap(), 0);
        let nodes = vec![
            NodeAttr {
                element: Element::C,
                hydrogens: 4
            };
            2
        ];
        let g = PolymerGraph::new(nodes, vec![], 1, 2, None).unwrap();
        assert!(matches!(diameter(&g), Err(GraphError::Disconnected)));
    }

    #[test]
    fn rejects_bad_edges() {
        let nodes = vec![
            NodeAttr {
                element: Element::C,
                hydrogens: 4
            };
            2
        ];
        let e = |u, v| Edge {
            u,
            v,
            kind: EdgeKind::Single,
        };
        assert!(PolymerGraph::new(nodes.clone(), vec![e(0, 0)], 1, 2, None).is_err());
        assert!(PolymerGraph::new(nodes.clone(), vec![e(0, 2)], 1, 2, None).is_err());
        assert!(PolymerGraph::new(nodes, vec![e(0, 1), e(1, 0)], 1, 2, None).is_err());
    }

    #[test]
    fn json_line_key_order() {
        let g = featurize(&parse_repeat_unit("*C(=O)*").unwrap()).with_label(Some(1.5));
        let line = g.to_json_line();
        assert!(line.starts_with(r#"{"nodes":[{"el":"*","anchor":true,"deg":1,"hs":0},"#));
        assert!(line.ends_with(r#""n":1,"unit_size":4,"label":1.5}"#));
        assert_eq!(PolymerGraph::from_json_line(&line).unwrap(), g);
    }
}
