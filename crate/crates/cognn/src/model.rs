//! The cooperative model: action policy, temperature, environment updates.
//!
//! A forward pass stacks `L` cooperative layers. In each one, an *action
//! network* (a small message-passing stack over the full topology, shared
//! across layers) reads the current node states and produces a categorical
//! distribution over `[Standard, Listen, Broadcast, Isolate]` per node. One
//! action per node is drawn with a straight-through Gumbel-softmax — the
//! forward value is an exact one-hot, the backward pass sees the soft
//! relaxation — and the induced gates route messages for the *environment
//! layer* that updates the states.
//!
//! Baseline models reuse the same machinery with every gate forced open
//! (equivalent to all nodes choosing Standard), which makes them plain
//! SumGNN / MeanGNN / GCN stacks.

use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    induce_directed, induce_directed_st, Action, Aggregation, Batch, DirectedEdgeSet, Graph,
};
use crate::layers::{pool, GnnLayer, Mlp, PoolMode};
use crate::tensor::{ActKind, Bindings, Param, Tape, Tensor};

/// Inverse temperatures are floored here when the learned head underflows
/// (only reachable with `tau0 = 0` and strongly negative logits).
pub const INV_TAU_FLOOR: f64 = 1e-6;

/// Uniform draws for Gumbel noise are clamped into this open interval.
const GUMBEL_CLAMP: f64 = 1e-12;

/// Temperature used by the straight-through sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TempSpec {
    /// Constant `tau` for every node.
    Fixed { tau: f64 },
    /// Per-node `1/tau = softplus(omega . h) + tau0` from the action-net
    /// hidden state; larger `tau0` caps the temperature at `1/tau0`.
    Learned { tau0: f64 },
}

/// Model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Action-gated cooperative model.
    Cognn,
    /// Plain message passing, all gates open.
    Baseline,
}

/// How predictions are read out of the final node states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// Gather each sample's root node (node 0) and decode it.
    Root,
    /// Pool all nodes of a sample and decode the pooled row.
    Pool(PoolMode),
}

/// Structural description of a model; everything needed to rebuild it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub in_dim: usize,
    pub out_dim: usize,
    pub env_dim: usize,
    pub env_layers: usize,
    pub env_agg: Aggregation,
    pub act_dim: usize,
    pub act_layers: usize,
    pub act_agg: Aggregation,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub temp: TempSpec,
    pub readout: Readout,
}

impl ModelSpec {
    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.env_dim == 0 {
            return Err(Error::Invalid("model dims must be positive".into()));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Invalid(
                "encoder and decoder need at least one layer".into(),
            ));
        }
        if self.family == Family::Cognn && (self.act_dim == 0 || self.act_layers == 0) {
            return Err(Error::Invalid(
                "a cooperative model needs a non-empty action network".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        match self.temp {
            TempSpec::Fixed { tau } if tau <= 0.0 => Err(Error::Invalid(format!(
                "fixed temperature must be positive, got {tau}"
            ))),
            TempSpec::Learned { tau0 } if tau0 < 0.0 => Err(Error::Invalid(format!(
                "tau0 must be non-negative, got {tau0}"
            ))),
            _ => Ok(()),
        }
    }
}

/// The per-node actions of one cooperative layer, with everything the
/// instrumentation needs.
#[derive(Debug)]
pub struct ActionField {
    /// Hard action per node (argmax of the perturbed log-probs).
    pub actions: Vec<Action>,
    /// `[n, 4]` straight-through action rows on the tape.
    pub st: Tensor,
    /// `[n * 4]` policy distribution (softmax of the action logits).
    pub probs: Vec<f64>,
    /// Per-node temperature actually used.
    pub tau: Vec<f64>,
    /// Forward gate value per arc.
    pub gates: Rc<Vec<f64>>,
    /// Kept fraction of arcs.
    pub retention: f64,
    /// Number of nodes whose inverse temperature hit [`INV_TAU_FLOOR`].
    pub floor_hits: usize,
}

/// How actions are chosen during a forward pass.
pub enum ActionMode<'a> {
    /// Straight-through sampling: hard one-hot forward, soft backward.
    Sample(&'a mut ChaCha8Rng),
    /// Fully soft relaxation end to end (differentiable everywhere; used to
    /// validate gradients numerically).
    Soft(&'a mut ChaCha8Rng),
    /// A fixed action per node per layer; no randomness, no policy gradient.
    Forced(&'a [Vec<Action>]),
}

/// Everything a forward pass produces.
#[derive(Debug)]
pub struct ForwardOut {
    /// `[samples, out_dim]` predictions.
    pub preds: Tensor,
    /// Final node states (before readout).
    pub node_states: Tensor,
    /// One record per environment layer.
    pub layers: Vec<ActionField>,
    /// Parameter leaves bound during this pass.
    pub binds: Bindings,
}

/// Draw standard Gumbel noise, node-major: `g = -ln(-ln(u))` with `u`
/// clamped into `(1e-12, 1 - 1e-12)`.
pub fn gumbel_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::from_vec(&[rows, cols], data).expect("consistent noise shape")
}

/// Straight-through Gumbel-softmax over action log-probabilities.
///
/// `log_probs` is `[n, 4]`, `inv_tau` is `[n, 1]`. Returns the action rows
/// (hard one-hot forward / soft backward when `hard`, the soft relaxation
/// when not) and the argmax actions.
pub fn gumbel_straight_through(
    log_probs: &Tensor,
    inv_tau: &Tensor,
    rng: &mut ChaCha8Rng,
    hard: bool,
) -> Result<(Tensor, Vec<Action>)> {
    let n = log_probs.rows();
    if log_probs.cols() != Action::COUNT {
        return Err(Error::Shape(format!(
            "log_probs must have {} columns, got {}",
            Action::COUNT,
            log_probs.cols()
        )));
    }
    if inv_tau.rows() != n || inv_tau.cols() != 1 {
        return Err(Error::Shape(format!(
            "inv_tau must be [{n}, 1], got {:?}",
            inv_tau.shape()
        )));
    }
    let noise = gumbel_noise(rng, n, Action::COUNT);
    // z = log p + g; the temperature only rescales z, so the argmax (hard
    // sample) is taken before dividing by tau.
    let z = log_probs.add(&noise)?;
    let soft = z.mul(inv_tau)?.softmax(1)?;
    let mut actions = Vec::with_capacity(n);
    let zd = z.data();
    for r in 0..n {
        let row = &zd[r * Action::COUNT..(r + 1) * Action::COUNT];
        let mut best = 0;
        for a in 1..Action::COUNT {
            if row[a] > row[best] {
                best = a;
            }
        }
        actions.push(Action::from_index(best)?);
    }
    if !hard {
        return Ok((soft, actions));
    }
    let mut onehot = vec![0.0; n * Action::COUNT];
    for (r, a) in actions.iter().enumerate() {
        onehot[r * Action::COUNT + a.index()] = 1.0;
    }
    Ok((soft.straight_through(onehot)?, actions))
}

/// The cooperative model (or a gate-free baseline).
#[derive(Clone, Debug)]
pub struct CoGnnModel {
    pub spec: ModelSpec,
    pub encoder: Mlp,
    pub env: Vec<GnnLayer>,
    /// Action-network stack; empty for baselines. Shared across layers.
    pub act_net: Vec<GnnLayer>,
    /// Linear head mapping action-net states to 4 logits.
    pub act_head: Option<(Param, Param)>,
    /// Weight vector of the learned inverse-temperature head.
    pub temp_omega: Option<Param>,
    pub decoder: Mlp,
}

impl CoGnnModel {
    /// Build a model with Glorot weights. Draw order is fixed: encoder, then
    /// environment layers, action network, action head, temperature head,
    /// decoder — so a seed pins every initial weight.
    pub fn build(spec: ModelSpec, rng: &mut ChaCha8Rng) -> Result<CoGnnModel> {
        spec.validate()?;
        let mut enc_dims = vec![spec.in_dim];
        enc_dims.extend(std::iter::repeat(spec.env_dim).take(spec.encoder_layers));
        let encoder = Mlp::new("encoder", &enc_dims, ActKind::Gelu, rng)?;

        let env = (0..spec.env_layers)
            .map(|l| {
                GnnLayer::new(
                    &format!("env.{l}"),
                    spec.env_dim,
                    spec.env_dim,
                    spec.env_agg,
                    ActKind::Gelu,
                    rng,
                )
            })
            .collect();

        let (act_net, act_head, temp_omega) = if spec.family == Family::Cognn {
            let mut stack = Vec::new();
            for l in 0..spec.act_layers {
                let din = if l == 0 { spec.env_dim } else { spec.act_dim };
                stack.push(GnnLayer::new(
                    &format!("action.{l}"),
                    din,
                    spec.act_dim,
                    spec.act_agg,
                    ActKind::Gelu,
                    rng,
                ));
            }
            let head = (
                Param::glorot("action.head.w", rng, spec.act_dim, Action::COUNT),
                Param::zeros("action.head.b", 1, Action::COUNT),
            );
            let omega = match spec.temp {
                TempSpec::Learned { .. } => {
                    Some(Param::glorot("action.temp.omega", rng, spec.act_dim, 1))
                }
                TempSpec::Fixed { .. } => None,
            };
            (stack, Some(head), omega)
        } else {
            (Vec::new(), None, None)
        };

        let mut dec_dims = vec![spec.env_dim; spec.decoder_layers];
        dec_dims.push(spec.out_dim);
        let decoder = Mlp::new("decoder", &dec_dims, ActKind::Gelu, rng)?;

        Ok(CoGnnModel {
            spec,
            encoder,
            env,
            act_net,
            act_head,
            temp_omega,
            decoder,
        })
    }

    /// All parameters in canonical (build) order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.encoder.params();
        for l in &self.env {
            out.extend(l.params());
        }
        for l in &self.act_net {
            out.extend(l.params());
        }
        if let Some((w, b)) = &self.act_head {
            out.push(w);
            out.push(b);
        }
        if let Some(o) = &self.temp_omega {
            out.push(o);
        }
        out.extend(self.decoder.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.encoder.params_mut();
        for l in &mut self.env {
            out.extend(l.params_mut());
        }
        for l in &mut self.act_net {
            out.extend(l.params_mut());
        }
        if let Some((w, b)) = &mut self.act_head {
            out.push(w);
            out.push(b);
        }
        if let Some(o) = &mut self.temp_omega {
            out.push(o);
        }
        out.extend(self.decoder.params_mut());
        out
    }

    /// Snapshot of all parameter values (for model selection).
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    /// Restore a snapshot taken from this same model.
    pub fn restore(&mut self, snap: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snap.len() {
            return Err(Error::Contract(format!(
                "snapshot has {} tensors, model has {} parameters",
                snap.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(snap) {
            if p.value.shape() != s.shape() {
                return Err(Error::Contract(format!(
                    "snapshot shape {:?} does not match parameter '{}' {:?}",
                    s.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = s.clone();
        }
        Ok(())
    }

    /// Compute one layer's action field from the current states.
    fn sample_actions(
        &self,
        tape: &Tape,
        binds: &mut Bindings,
        g: &Graph,
        full: &DirectedEdgeSet,
        h: &Tensor,
        rng: &mut ChaCha8Rng,
        hard: bool,
    ) -> Result<(DirectedEdgeSet, ActionField)> {
        let n = g.num_nodes();
        // Policy stack runs on the *full* topology: choosing an action may
        // depend on neighbors one is about to ignore.
        let mut x = h.clone();
        for layer in &self.act_net {
            x = layer.forward(tape, binds, g, full, &x)?;
        }
        let (hw, hb) = self
            .act_head
            .as_ref()
            .ok_or_else(|| Error::Contract("baseline model cannot sample actions".into()))?;
        let logits = x
            .matmul(&binds.track(tape, hw)?)?
            .add(&binds.track(tape, hb)?)?;

        let (inv_tau, floor_hits) = match self.spec.temp {
            TempSpec::Fixed { tau } => (Tensor::full(n, 1, 1.0 / tau), 0),
            TempSpec::Learned { tau0 } => {
                let omega_p = self.temp_omega.as_ref().ok_or_else(|| {
                    Error::Contract("learned temperature without an omega parameter".into())
                })?;
                let omega = binds.track(tape, omega_p)?;
                let raw = x.matmul(&omega)?.softplus()?.add_scalar(tau0)?;
                let hits = raw.data().iter().filter(|v| **v < INV_TAU_FLOOR).count();
                (raw.clamp_min(INV_TAU_FLOOR)?, hits)
            }
        };

        let log_probs = logits.log_softmax()?;
        // Noise and the soft relaxation are drawn the same way in both modes;
        // the argmax of the noisy logits is the sampled action.
        let (soft, actions) = gumbel_straight_through(&log_probs, &inv_tau, rng, false)?;
        let (st, d) = if hard {
            // Hard mode: forward values are the exact one-hot sample and the
            // 0/1 gates it induces, while gradients flow through the soft
            // relaxation. The estimator sits on each *gate* (not on each
            // one-hot factor): a product of hard factors would multiply each
            // side's gradient by the other side's 0/1 value, silencing the
            // policy entirely whenever it closes every arc.
            let mut onehot = vec![0.0; n * Action::COUNT];
            for (r, a) in actions.iter().enumerate() {
                onehot[r * Action::COUNT + a.index()] = 1.0;
            }
            let st = soft.straight_through(onehot)?;
            let d = induce_directed_st(g, &soft, &actions)?;
            (st, d)
        } else {
            let d = induce_directed(g, &soft)?;
            (soft, d)
        };

        // Instrumentation: the policy distribution (pre-noise), off-tape.
        let mut probs = vec![0.0; n * Action::COUNT];
        let ld = logits.data();
        for r in 0..n {
            let row = &ld[r * Action::COUNT..(r + 1) * Action::COUNT];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * Action::COUNT + j] = e;
                z += e;
            }
            for j in 0..Action::COUNT {
                probs[r * Action::COUNT + j] /= z;
            }
        }
        let tau: Vec<f64> = inv_tau.data().iter().map(|v| 1.0 / v).collect();
        let field = ActionField {
            actions,
            st,
            probs,
            tau,
            gates: d.gates.data_rc(),
            retention: d.retention(),
            floor_hits,
        };
        Ok((d, field))
    }

    /// Action field for a forced per-node assignment (no sampling).
    fn forced_actions(g: &Graph, actions: &[Action]) -> Result<(DirectedEdgeSet, ActionField)> {
        let n = g.num_nodes();
        if actions.len() != n {
            return Err(Error::Invalid(format!(
                "forced schedule has {} actions for {n} nodes",
                actions.len()
            )));
        }
        let mut onehot = vec![0.0; n * Action::COUNT];
        for (r, a) in actions.iter().enumerate() {
            onehot[r * Action::COUNT + a.index()] = 1.0;
        }
        let st = Tensor::from_vec(&[n, Action::COUNT], onehot.clone())?;
        let d = induce_directed(g, &st)?;
        let field = ActionField {
            actions: actions.to_vec(),
            st,
            probs: onehot,
            tau: vec![1.0; n],
            gates: d.gates.data_rc(),
            retention: d.retention(),
            floor_hits: 0,
        };
        Ok((d, field))
    }

    /// Full forward pass over a batch.
    ///
    /// `training` enables dropout (which then requires `dropout_rng`).
    pub fn forward(
        &self,
        tape: &Tape,
        batch: &Batch,
        mut mode: ActionMode,
        training: bool,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOut> {
        let g = &batch.graph;
        if g.feature_dim() != self.spec.in_dim {
            return Err(Error::Shape(format!(
                "graph features have width {}, model expects {}",
                g.feature_dim(),
                self.spec.in_dim
            )));
        }
        if let ActionMode::Forced(schedule) = &mode {
            if schedule.len() != self.env.len() {
                return Err(Error::Invalid(format!(
                    "forced schedule has {} layers, model has {}",
                    schedule.len(),
                    self.env.len()
                )));
            }
        }
        let mut binds = Bindings::new();
        let full = DirectedEdgeSet::complete(g);

        let apply_dropout = |h: Tensor, rng: &mut Option<&mut ChaCha8Rng>| -> Result<Tensor> {
            if !training || self.spec.dropout == 0.0 {
                return Ok(h);
            }
            let Some(r) = rng.as_deref_mut() else {
                return Err(Error::Contract(
                    "training with dropout > 0 needs a dropout rng".into(),
                ));
            };
            h.dropout(self.spec.dropout, true, r)
        };

        let mut h = self.encoder.forward(tape, &mut binds, g.features())?;
        h = apply_dropout(h, &mut dropout_rng)?;

        let mut fields = Vec::with_capacity(self.env.len());
        for (l, layer) in self.env.iter().enumerate() {
            let (edges, field) = match (&self.spec.family, &mut mode) {
                (Family::Baseline, _) => {
                    let d = DirectedEdgeSet {
                        gates: full.gates.clone(),
                    };
                    let field = ActionField {
                        actions: vec![Action::Standard; g.num_nodes()],
                        st: full.gates.clone(), // placeholder; baselines have no action rows
                        probs: standard_onehots(g.num_nodes()),
                        tau: vec![1.0; g.num_nodes()],
                        gates: d.gates.data_rc(),
                        retention: 1.0,
                        floor_hits: 0,
                    };
                    (d, field)
                }
                (Family::Cognn, ActionMode::Sample(rng)) => {
                    self.sample_actions(tape, &mut binds, g, &full, &h, rng, true)?
                }
                (Family::Cognn, ActionMode::Soft(rng)) => {
                    self.sample_actions(tape, &mut binds, g, &full, &h, rng, false)?
                }
                (Family::Cognn, ActionMode::Forced(schedule)) => {
                    Self::forced_actions(g, &schedule[l])?
                }
            };
            h = layer.forward(tape, &mut binds, g, &edges, &h)?;
            h = apply_dropout(h, &mut dropout_rng)?;
            fields.push(field);
        }

        let readout_in = match self.spec.readout {
            Readout::Root => h.gather_rows(batch.roots())?,
            Readout::Pool(mode) => pool(mode, &h, &batch.node_graph, batch.num_graphs)?,
        };
        let preds = self.decoder.forward(tape, &mut binds, &readout_in)?;
        Ok(ForwardOut {
            preds,
            node_states: h,
            layers: fields,
            binds,
        })
    }

    /// Forward pass with a fixed action schedule (`schedule[l][v]` is node
    /// `v`'s action in layer `l`), returning the final node states.
    pub fn forward_fixed(
        &self,
        batch: &Batch,
        schedule: &[Vec<Action>],
    ) -> Result<(Tensor, Vec<ActionField>)> {
        let tape = Tape::new();
        let out = self.forward(&tape, batch, ActionMode::Forced(schedule), false, None)?;
        Ok((out.node_states, out.layers))
    }
}

fn standard_onehots(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * Action::COUNT];
    for r in 0..n {
        v[r * Action::COUNT + Action::Standard.index()] = 1.0;
    }
    v
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"CGNN";
const CKPT_VERSION: u8 = 1;

/// Serialize the model (spec JSON + caller metadata + named parameter
/// tensors, little-endian f64) to `path`.
pub fn save_checkpoint(model: &CoGnnModel, meta: &str, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.push(CKPT_VERSION);
    let spec_json = serde_json::to_string(&model.spec)
        .map_err(|e| Error::Invalid(format!("cannot encode model spec: {e}")))?;
    write_block(&mut buf, spec_json.as_bytes());
    write_block(&mut buf, meta.as_bytes());
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        write_block(&mut buf, p.name.as_bytes());
        buf.push(2);
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`]; returns the model and
/// the caller metadata string.
pub fn load_checkpoint(path: &Path) -> Result<(CoGnnModel, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take(4)?;
    if magic != CKPT_MAGIC {
        return Err(Error::Invalid(format!(
            "not a checkpoint: bad magic {magic:?}"
        )));
    }
    let version = r.take(1)?[0];
    if version != CKPT_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let spec_json = String::from_utf8(r.block()?.to_vec())
        .map_err(|_| Error::Invalid("checkpoint spec is not UTF-8".into()))?;
    let spec: ModelSpec = serde_json::from_str(&spec_json)
        .map_err(|e| Error::Invalid(format!("bad checkpoint spec: {e}")))?;
    let meta = String::from_utf8(r.block()?.to_vec())
        .map_err(|_| Error::Invalid("checkpoint metadata is not UTF-8".into()))?;

    let mut model = CoGnnModel::build(spec, &mut crate::rng::stream(0, "checkpoint-rebuild"))?;
    let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {count} tensors, spec builds {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let name = String::from_utf8(r.block()?.to_vec())
            .map_err(|_| Error::Invalid("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Invalid(format!(
                "checkpoint tensor '{name}' does not match expected parameter '{}'",
                p.name
            )));
        }
        let ndim = r.take(1)?[0];
        if ndim != 2 {
            return Err(Error::Invalid(format!("tensor '{name}' has ndim {ndim}")));
        }
        let rows = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        if rows != p.value.rows() || cols != p.value.cols() {
            return Err(Error::Invalid(format!(
                "tensor '{name}' has shape [{rows}, {cols}], expected {:?}",
                p.value.shape()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        p.value = Tensor::from_vec(&[rows, cols], data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((model, meta))
}

fn write_block(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Invalid(format!(
                "checkpoint truncated at byte {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }
}
