//! Synthetic benchmark tasks, a color-refinement oracle, and JSONL datasets.
//!
//! Two task generators live here. `generate_root_neighbors` builds depth-2
//! trees where the target is the mean feature vector of the root's degree-6
//! neighbors — a task that requires routing information from specific
//! neighbors only. `generate_cycles` builds seven pairs of 2-regular graphs
//! (a `k`-cycle vs. the disjoint union of a `(k-3)`-cycle and a triangle)
//! that classic 1-round color refinement cannot tell apart, which the
//! `wl1_*` functions verify independently.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::stream;
use crate::tensor::Tensor;

/// Feature width of the root-neighbors task.
pub const ROOT_FEATURE_DIM: usize = 5;

/// Dataset split membership.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// One task instance: a graph plus its supervision signal.
#[derive(Clone, Debug)]
pub struct Sample {
    pub split: Split,
    pub graph: Graph,
    /// Regression target (root-neighbors task).
    pub target: Option<Vec<f64>>,
    /// Class label (cycles task).
    pub label: Option<u32>,
    /// Cycle length tag (cycles task).
    pub k: Option<u32>,
}

// ---------------------------------------------------------------------------
// Root-neighbors task
// ---------------------------------------------------------------------------

/// Generate the 3000-tree root-neighbors dataset (1000 per split).
///
/// Each tree has depth 2: node 0 is the root, nodes `1..=m` are its
/// children, and leaves are appended per level-1 node in node order. The
/// first `k6` level-1 nodes get 5 leaves (total degree 6 with the root
/// edge); each remaining level-1 node draws its degree from `U[2, 3]`.
/// Per split, `m ~ U[3, 10]` / `U[5, 12]` / `U[5, 12]` and
/// `k6 ~ U[1, 3]` / `U[3, 5]` / `U[3, 5]` (train/valid/test). Features are
/// i.i.d. `U[-2, 2]`, drawn row-major after the structure.
///
/// The target is the mean feature vector of the root's degree-6 neighbors;
/// `k6 >= 1` guarantees at least one.
pub fn generate_root_neighbors(seed: u64) -> Result<Vec<Sample>> {
    let mut rng = stream(seed, "dataset/root_neighbors");
    let mut out = Vec::with_capacity(3000);
    let plans: [(Split, u32, u32, u32, u32); 3] = [
        (Split::Train, 3, 10, 1, 3),
        (Split::Valid, 5, 12, 3, 5),
        (Split::Test, 5, 12, 3, 5),
    ];
    for (split, m_lo, m_hi, k_lo, k_hi) in plans {
        for _ in 0..1000 {
            let m = rng.gen_range(m_lo..=m_hi);
            let k6 = rng.gen_range(k_lo..=k_hi);
            out.push(root_tree(&mut rng, split, m, k6)?);
        }
    }
    Ok(out)
}

fn root_tree(rng: &mut ChaCha8Rng, split: Split, m: u32, k6: u32) -> Result<Sample> {
    debug_assert!(k6 >= 1 && k6 <= m);
    let mut edges: Vec<(u32, u32)> = (1..=m).map(|i| (0, i)).collect();
    let mut next = m + 1;
    for i in 1..=m {
        let leaves = if i <= k6 { 5 } else { rng.gen_range(2..=3) - 1 };
        for _ in 0..leaves {
            edges.push((i, next));
            next += 1;
        }
    }
    let n = next as usize;
    let feats: Vec<f64> = (0..n * ROOT_FEATURE_DIM)
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    let graph = Graph::new(
        n,
        &edges,
        Tensor::from_vec(&[n, ROOT_FEATURE_DIM], feats)?,
    )?;
    let target = root_neighbors_target(&graph)?;
    Ok(Sample {
        split,
        graph,
        target: Some(target),
        label: None,
        k: None,
    })
}

/// Ground truth for the root-neighbors task: the mean feature vector of the
/// degree-6 neighbors of node 0. Errors if there is none.
pub fn root_neighbors_target(g: &Graph) -> Result<Vec<f64>> {
    let d = g.feature_dim();
    let mut acc = vec![0.0; d];
    let mut count = 0usize;
    for &u in g.neighbors(0) {
        if g.degree(u as usize) == 6 {
            let row = &g.features().data()[u as usize * d..(u as usize + 1) * d];
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Invalid(
            "root has no degree-6 neighbor; no target exists".into(),
        ));
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Cycles task
// ---------------------------------------------------------------------------

/// Generate the 14-graph cycles dataset: for each `k` in `6..=12`, a
/// `k`-cycle (label 1) and the disjoint union of a `(k-3)`-cycle and a
/// triangle (label 0). Splits: `k` in {6, 7} train, {8, 9} valid,
/// {10, 11, 12} test. Node features are the constant 1.
pub fn generate_cycles() -> Vec<Sample> {
    let mut out = Vec::with_capacity(14);
    for k in 6u32..=12 {
        let split = match k {
            6 | 7 => Split::Train,
            8 | 9 => Split::Valid,
            _ => Split::Test,
        };
        let single = cycle_edges(0, k);
        let mut union = cycle_edges(0, k - 3);
        union.extend(cycle_edges(k - 3, 3));
        for (label, edges) in [(1u32, single), (0u32, union)] {
            let graph = Graph::new(k as usize, &edges, Tensor::ones(k as usize, 1))
                .expect("cycle graphs are valid by construction");
            out.push(Sample {
                split,
                graph,
                target: None,
                label: Some(label),
                k: Some(k),
            });
        }
    }
    out
}

fn cycle_edges(base: u32, len: u32) -> Vec<(u32, u32)> {
    (0..len).map(|i| (base + i, base + (i + 1) % len)).collect()
}

// ---------------------------------------------------------------------------
// Color refinement (1-WL) oracle
// ---------------------------------------------------------------------------

/// Stable colors of iterated color refinement, starting from a uniform
/// coloring: each round maps every node to a hash of its own color and the
/// sorted multiset of its neighbors' colors, until the partition stops
/// refining. The values are structural, so isomorphic graphs get equal
/// color multisets.
pub fn wl1_colors(g: &Graph) -> Vec<u64> {
    let n = g.num_nodes();
    let mut colors = vec![0u64; n];
    let mut distinct = 1usize;
    for _ in 0..n {
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mut neigh: Vec<u64> = g
                .neighbors(v)
                .iter()
                .map(|&u| colors[u as usize])
                .collect();
            neigh.sort_unstable();
            let mut h = fnv1a(0xcbf2_9ce4_8422_2325, colors[v]);
            for c in neigh {
                h = fnv1a(h, c);
            }
            next.push(h);
        }
        let mut sorted = next.clone();
        sorted.sort_unstable();
        sorted.dedup();
        // Refinement is monotone: an unchanged class count means a fixpoint.
        if sorted.len() == distinct {
            return colors;
        }
        distinct = sorted.len();
        colors = next;
    }
    colors
}

fn fnv1a(mut h: u64, value: u64) -> u64 {
    for b in value.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Multiset of stable colors.
pub fn wl1_histogram(g: &Graph) -> BTreeMap<u64, usize> {
    let mut hist = BTreeMap::new();
    for c in wl1_colors(g) {
        *hist.entry(c).or_insert(0) += 1;
    }
    hist
}

/// Whether color refinement separates the two graphs.
pub fn wl1_distinguishes(a: &Graph, b: &Graph) -> bool {
    wl1_histogram(a) != wl1_histogram(b)
}

// ---------------------------------------------------------------------------
// Random graphs (benchmarks and property tests)
// ---------------------------------------------------------------------------

/// A uniform random simple graph with exactly `num_edges` edges and
/// `U[-1, 1]` features.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    num_edges: usize,
    fdim: usize,
) -> Result<Graph> {
    let max = n.saturating_mul(n.saturating_sub(1)) / 2;
    if num_edges > max {
        return Err(Error::Invalid(format!(
            "{num_edges} edges do not fit in a simple graph on {n} nodes"
        )));
    }
    let mut chosen = std::collections::HashSet::with_capacity(num_edges);
    let mut edges = Vec::with_capacity(num_edges);
    while edges.len() < num_edges {
        let a = rng.gen_range(0..n as u32);
        let b = rng.gen_range(0..n as u32);
        if a == b {
            continue;
        }
        let e = (a.min(b), a.max(b));
        if chosen.insert(e) {
            edges.push(e);
        }
    }
    let feats: Vec<f64> = (0..n * fdim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Graph::new(n, &edges, Tensor::from_vec(&[n, fdim], feats)?)
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Record {
    split: Split,
    n: usize,
    fdim: usize,
    edges: Vec<(u32, u32)>,
    /// Row-major `n * fdim` features.
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<u32>,
}

/// Write samples as one JSON object per line. Output bytes are a pure
/// function of the samples.
pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let rec = Record {
            split: s.split,
            n: s.graph.num_nodes(),
            fdim: s.graph.feature_dim(),
            edges: s.graph.edges().to_vec(),
            features: s.graph.features().data().to_vec(),
            target: s.target.clone(),
            label: s.label,
            k: s.k,
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Invalid(format!("cannot encode sample: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load a JSONL dataset written by [`save_dataset`]. Malformed lines are
/// reported with their file and 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let fname = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::DataParse {
            file: fname.clone(),
            line: i + 1,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let features = Tensor::from_vec(&[rec.n, rec.fdim], rec.features)
            .map_err(|e| parse(e.to_string()))?;
        let graph = Graph::new(rec.n, &rec.edges, features).map_err(|e| parse(e.to_string()))?;
        out.push(Sample {
            split: rec.split,
            graph,
            target: rec.target,
            label: rec.label,
            k: rec.k,
        });
    }
    Ok(out)
}

/// The subset of samples in one split.
pub fn split_of(samples: &[Sample], split: Split) -> Vec<&Sample> {
    samples.iter().filter(|s| s.split == split).collect()
}
