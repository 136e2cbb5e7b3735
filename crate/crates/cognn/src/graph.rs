//! Undirected graphs and action-gated directed message routing.
//!
//! A [`Graph`] stores a simple undirected topology (CSR adjacency, neighbor
//! lists sorted ascending) together with node features. Message passing runs
//! over *arcs*: each undirected edge {u, v} contributes the two arcs u→v and
//! v→u, enumerated destination-major in CSR order so that every aggregation
//! accumulates in one canonical order.
//!
//! Per-node actions gate the arcs. With action one-hots ordered
//! `[Standard, Listen, Broadcast, Isolate]`, the gate of arc u→v is
//!
//! ```text
//! w(u→v) = (y_u[S] + y_u[B]) * (y_v[S] + y_v[L])
//! ```
//!
//! i.e. the sender must be broadcasting (Standard or Broadcast) and the
//! receiver listening (Standard or Listen). With hard one-hots every gate is
//! exactly 0.0 or 1.0; with soft vectors the same product is the
//! differentiable relaxation used by the backward pass.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{edge_scatter, Tensor};

/// The four per-node actions. The discriminant is the column index used
/// throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Standard = 0,
    Listen = 1,
    Broadcast = 2,
    Isolate = 3,
}

impl Action {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        match i {
            0 => Ok(Action::Standard),
            1 => Ok(Action::Listen),
            2 => Ok(Action::Broadcast),
            3 => Ok(Action::Isolate),
            _ => Err(Error::Invalid(format!("action index {i} out of range"))),
        }
    }

    /// Single-letter label used in traces.
    pub fn letter(self) -> char {
        match self {
            Action::Standard => 'S',
            Action::Listen => 'L',
            Action::Broadcast => 'B',
            Action::Isolate => 'I',
        }
    }

    /// Does a node taking this action send messages to its neighbors?
    pub fn sends(self) -> bool {
        matches!(self, Action::Standard | Action::Broadcast)
    }

    /// Does a node taking this action receive messages from its neighbors?
    pub fn receives(self) -> bool {
        matches!(self, Action::Standard | Action::Listen)
    }
}

/// Neighborhood aggregators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
    /// Sum with symmetric degree normalization `1/sqrt((din(v)+1)(dout(u)+1))`,
    /// degrees taken from the hard gate values.
    Gcn,
}

/// An undirected graph with f64 node features.
#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    fdim: usize,
    /// Canonical undirected edge list: `u < v`, sorted.
    edges: Vec<(u32, u32)>,
    /// CSR offsets over the symmetric adjacency; `offsets[v]..offsets[v+1]`
    /// are the arc ids into `v`.
    offsets: Vec<usize>,
    /// Arc sources, destination-major, ascending within each destination.
    /// Equivalently: the neighbor list of every node, concatenated.
    arc_src: Rc<Vec<u32>>,
    /// Arc destinations (`v` repeated `degree(v)` times).
    arc_dst: Rc<Vec<u32>>,
    features: Tensor,
}

impl Graph {
    /// Build a graph from an undirected edge list. Self-loops, duplicate
    /// edges (in either orientation), and out-of-range endpoints are
    /// validation errors. `features` must be `[n, fdim]`.
    pub fn new(n: usize, edges: &[(u32, u32)], features: Tensor) -> Result<Graph> {
        if features.rows() != n {
            return Err(Error::Shape(format!(
                "features have {} rows for {n} nodes",
                features.rows()
            )));
        }
        let mut canon: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::Invalid(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::Invalid(format!("self-loop at node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Invalid(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut degree = vec![0usize; n];
        for &(u, v) in &canon {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        for v in 0..n {
            offsets.push(offsets[v] + degree[v]);
        }
        let mut arc_src = vec![0u32; 2 * canon.len()];
        let mut fill = offsets.clone();
        for &(u, v) in &canon {
            arc_src[fill[v as usize]] = u;
            fill[v as usize] += 1;
            arc_src[fill[u as usize]] = v;
            fill[u as usize] += 1;
        }
        for v in 0..n {
            arc_src[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        let mut arc_dst = vec![0u32; arc_src.len()];
        for v in 0..n {
            for e in offsets[v]..offsets[v + 1] {
                arc_dst[e] = v as u32;
            }
        }

        Ok(Graph {
            n,
            fdim: features.cols(),
            edges: canon,
            offsets,
            arc_src: Rc::new(arc_src),
            arc_dst: Rc::new(arc_dst),
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of directed arcs (twice the edge count).
    pub fn num_arcs(&self) -> usize {
        self.arc_src.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.fdim
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Neighbors of `v`, ascending.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.arc_src[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Arc ids whose destination is `v`.
    pub fn arcs_into(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    /// Source node of each arc, destination-major.
    pub fn arc_src(&self) -> &Rc<Vec<u32>> {
        &self.arc_src
    }

    /// Destination node of each arc.
    pub fn arc_dst(&self) -> &Rc<Vec<u32>> {
        &self.arc_dst
    }

    /// Relabel nodes: node `i` becomes `perm[i]`. `perm` must be a
    /// permutation of `0..n`.
    pub fn permuted(&self, perm: &[u32]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::Invalid(format!(
                "permutation has {} entries for {} nodes",
                perm.len(),
                self.n
            )));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            let p = p as usize;
            if p >= self.n || seen[p] {
                return Err(Error::Invalid("not a permutation".into()));
            }
            seen[p] = true;
        }
        let edges: Vec<(u32, u32)> = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u as usize], perm[v as usize]))
            .collect();
        let mut feat = vec![0.0; self.n * self.fdim];
        let old = self.features.data();
        for i in 0..self.n {
            let p = perm[i] as usize;
            feat[p * self.fdim..(p + 1) * self.fdim]
                .copy_from_slice(&old[i * self.fdim..(i + 1) * self.fdim]);
        }
        Graph::new(self.n, &edges, Tensor::from_vec(&[self.n, self.fdim], feat)?)
    }

    /// Disjoint union of several graphs (all with the same feature width).
    pub fn disjoint_union(graphs: &[&Graph]) -> Result<Batch> {
        if graphs.is_empty() {
            return Err(Error::Invalid("disjoint_union of zero graphs".into()));
        }
        let fdim = graphs[0].fdim;
        let mut edges = Vec::new();
        let mut feat = Vec::new();
        let mut node_graph = Vec::new();
        let mut offsets = vec![0u32];
        let mut base = 0u32;
        for (gi, g) in graphs.iter().enumerate() {
            if g.fdim != fdim {
                return Err(Error::Shape(format!(
                    "graph {gi} has feature width {}, expected {fdim}",
                    g.fdim
                )));
            }
            for &(u, v) in &g.edges {
                edges.push((base + u, base + v));
            }
            feat.extend_from_slice(g.features.data());
            node_graph.extend(std::iter::repeat(gi as u32).take(g.n));
            base += g.n as u32;
            offsets.push(base);
        }
        let n = base as usize;
        let graph = Graph::new(n, &edges, Tensor::from_vec(&[n, fdim], feat)?)?;
        Ok(Batch {
            graph,
            node_graph,
            offsets,
            num_graphs: graphs.len(),
        })
    }
}

/// A disjoint union of sample graphs, treated as one big graph for batching.
#[derive(Clone)]
pub struct Batch {
    pub graph: Graph,
    /// Sample index of every node.
    pub node_graph: Vec<u32>,
    /// Node-id offset of each sample (length `num_graphs + 1`).
    pub offsets: Vec<u32>,
    pub num_graphs: usize,
}

impl Batch {
    /// A batch holding a single graph.
    pub fn single(graph: &Graph) -> Result<Batch> {
        Graph::disjoint_union(&[graph])
    }

    /// Global node id of each sample's node 0 (the root, for rooted tasks).
    pub fn roots(&self) -> &[u32] {
        &self.offsets[..self.num_graphs]
    }
}

/// The directed arc set induced by per-node actions: one gate per arc of the
/// parent graph, in the graph's canonical arc order.
#[derive(Clone)]
pub struct DirectedEdgeSet {
    /// `[arcs, 1]` gate weights. Tracked when the actions were; the forward
    /// values are exactly 0.0 / 1.0 when the actions are hard one-hots.
    pub gates: Tensor,
}

impl DirectedEdgeSet {
    /// The ungated arc set (every gate = 1): plain message passing over the
    /// full topology.
    pub fn complete(g: &Graph) -> DirectedEdgeSet {
        DirectedEdgeSet {
            gates: Tensor::ones(g.num_arcs(), 1),
        }
    }

    /// Number of arcs with non-zero forward gate.
    pub fn kept_arcs(&self) -> usize {
        self.gates.data().iter().filter(|g| **g != 0.0).count()
    }

    /// Kept fraction of all arcs (defined as 0 when the graph has no arcs).
    pub fn retention(&self) -> f64 {
        let a = self.gates.rows();
        if a == 0 {
            0.0
        } else {
            self.kept_arcs() as f64 / a as f64
        }
    }
}

/// Gate every arc of `g` from per-node action rows (`[n, 4]`, columns in
/// [`Action`] order). Rows may be hard one-hots or soft/straight-through
/// relaxations; the gate law is `w(u→v) = (y_u[S]+y_u[B]) * (y_v[S]+y_v[L])`.
pub fn induce_directed(g: &Graph, actions: &Tensor) -> Result<DirectedEdgeSet> {
    if actions.shape() != [g.num_nodes(), Action::COUNT] {
        return Err(Error::Shape(format!(
            "actions must be [{}, {}], got {:?}",
            g.num_nodes(),
            Action::COUNT,
            actions.shape()
        )));
    }
    // Column selectors for "sends" (S + B) and "receives" (S + L).
    let sel_out = Tensor::from_vec(&[4, 1], vec![1.0, 0.0, 1.0, 0.0])?;
    let sel_in = Tensor::from_vec(&[4, 1], vec![1.0, 1.0, 0.0, 0.0])?;
    let sends = actions.matmul(&sel_out)?; // [n, 1]
    let receives = actions.matmul(&sel_in)?; // [n, 1]
    let gates = sends
        .gather_rows(g.arc_src())?
        .mul(&receives.gather_rows(g.arc_dst())?)?;
    Ok(DirectedEdgeSet { gates })
}

/// Gate every arc from *sampled* actions with a straight-through estimator
/// applied at the gate level: the forward value of each gate is the exact
/// hard product (`1.0` iff the source action sends and the destination
/// action receives), while the backward pass differentiates the product of
/// the soft distributions in `soft` (`[n, 4]`).
///
/// Placing the estimator on the gate rather than on each one-hot keeps
/// gradients alive when an arc is closed: with hard factors, one side's
/// gradient is multiplied by the other side's hard value, so a policy that
/// momentarily closes every arc would stop receiving gradient entirely and
/// could never reopen.
pub fn induce_directed_st(
    g: &Graph,
    soft: &Tensor,
    actions: &[Action],
) -> Result<DirectedEdgeSet> {
    if actions.len() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} actions for {} nodes",
            actions.len(),
            g.num_nodes()
        )));
    }
    if soft.shape() != [g.num_nodes(), Action::COUNT] {
        return Err(Error::Shape(format!(
            "soft actions must be [{}, {}], got {:?}",
            g.num_nodes(),
            Action::COUNT,
            soft.shape()
        )));
    }
    let sel_out = Tensor::from_vec(&[4, 1], vec![1.0, 0.0, 1.0, 0.0])?;
    let sel_in = Tensor::from_vec(&[4, 1], vec![1.0, 1.0, 0.0, 0.0])?;
    let sends = soft.matmul(&sel_out)?;
    let receives = soft.matmul(&sel_in)?;
    let soft_gates = sends
        .gather_rows(g.arc_src())?
        .mul(&receives.gather_rows(g.arc_dst())?)?;
    let hard: Vec<f64> = g
        .arc_src()
        .iter()
        .zip(g.arc_dst().iter())
        .map(|(&u, &v)| {
            let keep = actions[u as usize].sends() && actions[v as usize].receives();
            if keep {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(DirectedEdgeSet {
        gates: soft_gates.straight_through(hard)?,
    })
}

/// Aggregate neighbor states along gated arcs: for each node `v`,
/// combine `{ w(u→v) * h_u }` with the chosen aggregator.
///
/// * `sum`: plain weighted sum.
/// * `mean`: weighted sum divided by the total incoming gate weight; nodes
///   with (near-)zero total weight get the zero vector.
/// * `gcn`: weighted sum with each term additionally scaled by
///   `1/sqrt((din(v)+1)(dout(u)+1))`, where in/out degrees count the *hard*
///   (forward) gate values; the normalizers are constants to the tape.
pub fn gated_aggregate(
    agg: Aggregation,
    g: &Graph,
    d: &DirectedEdgeSet,
    h: &Tensor,
) -> Result<Tensor> {
    let n = g.num_nodes();
    if h.rows() != n {
        return Err(Error::Shape(format!(
            "states have {} rows for {n} nodes",
            h.rows()
        )));
    }
    if d.gates.shape() != [g.num_arcs(), 1] {
        return Err(Error::Shape(format!(
            "gates are {:?}, graph has {} arcs",
            d.gates.shape(),
            g.num_arcs()
        )));
    }
    match agg {
        Aggregation::Sum => edge_scatter(h, &d.gates, g.arc_src(), g.arc_dst(), n),
        Aggregation::Mean => {
            let num = edge_scatter(h, &d.gates, g.arc_src(), g.arc_dst(), n)?;
            let den = edge_scatter(&Tensor::ones(n, 1), &d.gates, g.arc_src(), g.arc_dst(), n)?;
            num.mean_guard(&den)
        }
        Aggregation::Gcn => {
            let hard = d.gates.data();
            let src = g.arc_src();
            let dst = g.arc_dst();
            let mut din = vec![0.0; n];
            let mut dout = vec![0.0; n];
            for e in 0..hard.len() {
                dout[src[e] as usize] += hard[e];
                din[dst[e] as usize] += hard[e];
            }
            let norm: Vec<f64> = (0..hard.len())
                .map(|e| {
                    1.0 / ((din[dst[e] as usize] + 1.0) * (dout[src[e] as usize] + 1.0)).sqrt()
                })
                .collect();
            let norm = Tensor::from_vec(&[hard.len(), 1], norm)?;
            let w = d.gates.mul(&norm)?;
            edge_scatter(h, &w, src, dst, n)
        }
    }
}
