//! Message-passing layers, MLPs, and graph pooling.
//!
//! The message-passing layer is the classic two-weight form
//!
//! ```text
//! h'_v = sigma(W_self · h_v + W_neigh · psi({ h_u : u -> v kept }) + b)
//! ```
//!
//! with psi one of the gated aggregators from [`crate::graph`]. With every
//! gate open and `b = 0` this is a plain SumGNN / MeanGNN / GCN layer; with
//! action-induced gates it is the environment update of the cooperative
//! model.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{gated_aggregate, Aggregation, DirectedEdgeSet, Graph};
use crate::tensor::{ActKind, Bindings, Param, Tape, Tensor};

/// One message-passing layer.
#[derive(Clone, Debug)]
pub struct GnnLayer {
    pub w_self: Param,
    pub w_neigh: Param,
    pub bias: Param,
    pub agg: Aggregation,
    pub act: ActKind,
}

impl GnnLayer {
    /// Glorot-initialized weights, zero bias. `prefix` namespaces the
    /// parameter names (`{prefix}.w_self` etc.).
    pub fn new(
        prefix: &str,
        din: usize,
        dout: usize,
        agg: Aggregation,
        act: ActKind,
        rng: &mut ChaCha8Rng,
    ) -> GnnLayer {
        GnnLayer {
            w_self: Param::glorot(format!("{prefix}.w_self"), rng, din, dout),
            w_neigh: Param::glorot(format!("{prefix}.w_neigh"), rng, din, dout),
            bias: Param::zeros(format!("{prefix}.bias"), 1, dout),
            agg,
            act,
        }
    }

    /// A layer that copies the aggregated neighbor message through unchanged
    /// (`W_self = 0`, `W_neigh = I`, zero bias, identity activation).
    pub fn copier(prefix: &str, dim: usize, agg: Aggregation) -> GnnLayer {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        GnnLayer {
            w_self: Param::new(format!("{prefix}.w_self"), Tensor::zeros(dim, dim)),
            w_neigh: Param::new(
                format!("{prefix}.w_neigh"),
                Tensor::from_vec(&[dim, dim], eye).expect("square identity"),
            ),
            bias: Param::zeros(format!("{prefix}.bias"), 1, dim),
            agg,
            act: ActKind::Identity,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_self.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_self.value.cols()
    }

    /// One layer update over the gated arc set.
    pub fn forward(
        &self,
        tape: &Tape,
        binds: &mut Bindings,
        g: &Graph,
        edges: &DirectedEdgeSet,
        h: &Tensor,
    ) -> Result<Tensor> {
        if h.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "layer '{}' expects width {}, got {}",
                self.w_self.name,
                self.input_dim(),
                h.cols()
            )));
        }
        let m = gated_aggregate(self.agg, g, edges, h)?;
        let ws = binds.track(tape, &self.w_self)?;
        let wn = binds.track(tape, &self.w_neigh)?;
        let b = binds.track(tape, &self.bias)?;
        h.matmul(&ws)?
            .add(&m.matmul(&wn)?)?
            .add(&b)?
            .activation(self.act)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w_self, &self.w_neigh, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_self, &mut self.w_neigh, &mut self.bias]
    }
}

/// A stack of linear layers with an activation between them (none after the
/// last). A single layer is a plain affine map.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub weights: Vec<(Param, Param)>,
    pub act: ActKind,
}

impl Mlp {
    /// `dims` is the chain of widths, e.g. `[5, 16, 16]` builds two layers.
    pub fn new(prefix: &str, dims: &[usize], act: ActKind, rng: &mut ChaCha8Rng) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::Invalid(format!(
                "an MLP needs at least input and output widths, got {dims:?}"
            )));
        }
        let mut weights = Vec::new();
        for (l, pair) in dims.windows(2).enumerate() {
            weights.push((
                Param::glorot(format!("{prefix}.{l}.w"), rng, pair[0], pair[1]),
                Param::zeros(format!("{prefix}.{l}.b"), 1, pair[1]),
            ));
        }
        Ok(Mlp {
            weights,
            act,
        })
    }

    /// An MLP that is exactly the identity map (one layer, identity weights).
    pub fn identity(prefix: &str, dim: usize) -> Mlp {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Mlp {
            weights: vec![(
                Param::new(
                    format!("{prefix}.0.w"),
                    Tensor::from_vec(&[dim, dim], eye).expect("square identity"),
                ),
                Param::zeros(format!("{prefix}.0.b"), 1, dim),
            )],
            act: ActKind::Identity,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].0.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("non-empty").0.value.cols()
    }

    pub fn forward(&self, tape: &Tape, binds: &mut Bindings, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().enumerate() {
            let wt = binds.track(tape, w)?;
            let bt = binds.track(tape, b)?;
            h = h.matmul(&wt)?.add(&bt)?;
            if l < last {
                h = h.activation(self.act)?;
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.weights.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.weights.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }
}

/// Graph readouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Sum,
    Mean,
}

/// Pool node states into one row per sample. `node_graph[i]` is the sample
/// index of node `i`; empty samples pool to zero.
pub fn pool(
    mode: PoolMode,
    h: &Tensor,
    node_graph: &[u32],
    num_graphs: usize,
) -> Result<Tensor> {
    let summed = h.segment_sum(node_graph, num_graphs)?;
    match mode {
        PoolMode::Sum => Ok(summed),
        PoolMode::Mean => {
            let mut counts = vec![0.0; num_graphs];
            for &s in node_graph {
                counts[s as usize] += 1.0;
            }
            let inv: Vec<f64> = counts
                .iter()
                .map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 })
                .collect();
            summed.mul(&Tensor::from_vec(&[num_graphs, 1], inv)?)
        }
    }
}
