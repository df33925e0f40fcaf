//! The NAS-Bench-201 cell search space: 6 operation labels on the fixed
//! 4-node cell, the edge-to-node DAG transform, enumeration, validity, and
//! Hamming distance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of operation choices per edge.
pub const NUM_OPS: usize = 5;
/// Edges of the 4-node cell, in canonical order.
pub const CELL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];
/// Node-type vocabulary size: START + 5 operations + END.
pub const NODE_VOCAB: usize = 7;
/// Nodes in the transformed DAG: START + 6 op nodes + END.
pub const MAX_NODES: usize = 8;
/// Total number of cells in the space (5^6).
pub const SPACE_SIZE: usize = 15_625;

/// One of the five cell operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOp {
    Zeroize,
    SkipConnect,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

pub const ALL_OPS: [CellOp; NUM_OPS] = [
    CellOp::Zeroize,
    CellOp::SkipConnect,
    CellOp::Conv1x1,
    CellOp::Conv3x3,
    CellOp::AvgPool3x3,
];

impl CellOp {
    pub fn index(self) -> usize {
        ALL_OPS.iter().position(|&o| o == self).expect("listed op")
    }

    pub fn from_index(i: usize) -> Option<CellOp> {
        ALL_OPS.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            CellOp::Zeroize => "zeroize",
            CellOp::SkipConnect => "skip_connect",
            CellOp::Conv1x1 => "conv_1x1",
            CellOp::Conv3x3 => "conv_3x3",
            CellOp::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn parse(s: &str) -> Result<CellOp> {
        ALL_OPS
            .iter()
            .copied()
            .find(|o| o.label() == s)
            .ok_or_else(|| Error::Parse {
                input: s.to_string(),
                what: "cell operation",
            })
    }
}

/// A point in the search space: one operation per fixed cell edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellSpec {
    pub ops: [CellOp; 6],
}

impl CellSpec {
    pub fn new(ops: [CellOp; 6]) -> Self {
        CellSpec { ops }
    }

    /// Canonical string form: the six labels joined by `|`.
    pub fn render(&self) -> String {
        self.ops
            .iter()
            .map(|o| o.label())
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn parse(s: &str) -> Result<CellSpec> {
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != 6 {
            return Err(Error::Parse {
                input: s.to_string(),
                what: "cell spec (6 ops joined by '|')",
            });
        }
        let mut ops = [CellOp::Zeroize; 6];
        for (slot, part) in ops.iter_mut().zip(&parts) {
            *slot = CellOp::parse(part)?;
        }
        Ok(CellSpec { ops })
    }

    /// Cell at `index` in lexicographic op order (most significant digit is
    /// the first edge).
    pub fn from_lex_index(mut index: usize) -> Option<CellSpec> {
        if index >= SPACE_SIZE {
            return None;
        }
        let mut ops = [CellOp::Zeroize; 6];
        for slot in ops.iter_mut().rev() {
            *slot = CellOp::from_index(index % NUM_OPS)?;
            index /= NUM_OPS;
        }
        Some(CellSpec { ops })
    }
}

impl fmt::Display for CellSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for CellSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for CellSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CellSpec::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Node types of the transformed DAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Start,
    Op(CellOp),
    End,
}

impl NodeType {
    /// Index into the 7-symbol vocabulary: START, the five ops, END.
    pub fn index(self) -> usize {
        match self {
            NodeType::Start => 0,
            NodeType::Op(o) => 1 + o.index(),
            NodeType::End => 6,
        }
    }

    pub fn from_index(i: usize) -> Option<NodeType> {
        match i {
            0 => Some(NodeType::Start),
            6 => Some(NodeType::End),
            _ => CellOp::from_index(i.checked_sub(1)?).map(NodeType::Op),
        }
    }
}

/// The DAG form of a cell: typed nodes plus directed edges, with every edge
/// pointing from a lower to a higher node index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDag {
    pub nodes: Vec<NodeType>,
    /// Sorted `(src, dst)` pairs with `src < dst`.
    pub edges: Vec<(usize, usize)>,
}

/// The canonical 10-edge template of a valid cell DAG, as index pairs in the
/// node order [START, v01, v02, v12, v03, v13, v23, END].
pub const EDGE_TEMPLATE: [(usize, usize); 10] = [
    (0, 1),
    (0, 2),
    (0, 4),
    (1, 3),
    (1, 5),
    (2, 6),
    (3, 6),
    (4, 7),
    (5, 7),
    (6, 7),
];

impl ArchDag {
    pub fn new(nodes: Vec<NodeType>, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        ArchDag { nodes, edges }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn predecessors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |(_, d)| *d == node)
            .map(|(s, _)| *s)
    }

    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |(s, _)| *s == node)
            .map(|(_, d)| *d)
    }

    /// Edge-reversed DAG with the node order flipped, so the original END
    /// becomes node 0. Edges keep the `src < dst` orientation.
    pub fn reversed(&self) -> ArchDag {
        let n = self.nodes.len();
        let nodes = self.nodes.iter().rev().copied().collect();
        let edges = self
            .edges
            .iter()
            .map(|&(s, d)| (n - 1 - d, n - 1 - s))
            .collect();
        ArchDag::new(nodes, edges)
    }
}

/// Transform a cell into its 8-node DAG: each labelled cell edge becomes a
/// typed node, cell-node adjacency becomes edges, and START/END bracket the
/// sources and sinks.
pub fn cell_to_dag(cell: &CellSpec) -> ArchDag {
    let mut nodes = Vec::with_capacity(MAX_NODES);
    nodes.push(NodeType::Start);
    nodes.extend(cell.ops.iter().map(|&o| NodeType::Op(o)));
    nodes.push(NodeType::End);
    ArchDag::new(nodes, EDGE_TEMPLATE.to_vec())
}

/// Inverse of [`cell_to_dag`]; errors with the first violated structural
/// check if the DAG is not a valid cell transform.
pub fn dag_to_cell(dag: &ArchDag) -> Result<CellSpec> {
    validate(dag).map_err(|reason| Error::InvalidDag { reason })?;
    let mut ops = [CellOp::Zeroize; 6];
    for (i, slot) in ops.iter_mut().enumerate() {
        match dag.nodes[i + 1] {
            NodeType::Op(o) => *slot = o,
            _ => unreachable!("validate checked op nodes"),
        }
    }
    Ok(CellSpec { ops })
}

/// True iff the DAG is exactly a cell transform: 8 nodes, START first, END
/// last, operation types in between, and the canonical 10-edge template.
pub fn is_valid(dag: &ArchDag) -> bool {
    validate(dag).is_ok()
}

fn validate(dag: &ArchDag) -> std::result::Result<(), String> {
    if dag.nodes.len() != MAX_NODES {
        return Err(format!("expected {} nodes, found {}", MAX_NODES, dag.nodes.len()));
    }
    if dag.nodes[0] != NodeType::Start {
        return Err("node 0 is not START".to_string());
    }
    if dag.nodes[MAX_NODES - 1] != NodeType::End {
        return Err("node 7 is not END".to_string());
    }
    for (i, n) in dag.nodes[1..MAX_NODES - 1].iter().enumerate() {
        if !matches!(n, NodeType::Op(_)) {
            return Err(format!("node {} does not carry an operation type", i + 1));
        }
    }
    if let Some(&(s, d)) = dag.edges.iter().find(|(s, d)| s >= d) {
        return Err(format!("edge ({s}, {d}) is not forward"));
    }
    if dag.edges != EDGE_TEMPLATE {
        return Err("edge set differs from the canonical template".to_string());
    }
    Ok(())
}

/// Every cell in the space, exactly once, in lexicographic op order.
pub fn enumerate_space() -> impl Iterator<Item = CellSpec> {
    (0..SPACE_SIZE).map(|i| CellSpec::from_lex_index(i).expect("in range"))
}

/// Number of edge positions where the two cells differ (0..=6).
pub fn hamming(a: &CellSpec, b: &CellSpec) -> usize {
    a.ops.iter().zip(&b.ops).filter(|(x, y)| x != y).count()
}
