//! End-to-end acceptance checks.
//!
//! Runs as a plain binary (no libtest harness) so that every criterion
//! prints exactly one `criterion N: PASS/FAIL — detail` line whatever the
//! capture settings. Exit status is non-zero if any criterion fails.
//!
//! Invoke a subset by number: `cargo test --test acceptance -- 2 5 8`.
//!
//! The training budgets and tolerances below are frozen; they are chosen so
//! the whole suite finishes in roughly half an hour on one CPU core while
//! leaving comfortable margins around every threshold.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use cognn::datagen::{
    generate_cycles, generate_root_neighbors, random_graph, split_of, wl1_distinguishes, Sample,
    Split,
};
use cognn::graph::{Action, Aggregation, Batch, Graph};
use cognn::harness::{
    action_edge_accuracy, bench_scaling, evaluate_accuracy, regression_mae, train, ModelKind,
    RunConfig, Task, TempKind,
};
use cognn::model::{
    gumbel_straight_through, ActionMode, CoGnnModel, Family, ModelSpec, Readout, TempSpec,
};
use cognn::layers::{GnnLayer, Mlp};
use cognn::rng::stream;
use cognn::tensor::{Tape, Tensor};
use cognn::Result;

use common::{assert_close_rel, numeric_grad, FD_STEP, FD_TOL};

// ---------------------------------------------------------------------------
// Frozen run configurations
// ---------------------------------------------------------------------------

/// Epochs for each trained root-neighbors model (criteria 1 and 3).
const RN_EPOCHS: usize = 3000;
/// Validation cadence for root-neighbors training.
const RN_EVAL_EVERY: usize = 25;

/// Epochs for each cycles seed (criterion 4).
const CY_EPOCHS: usize = 10000;
/// Validation cadence for cycles training.
const CY_EVAL_EVERY: usize = 10;
/// Seeds scanned for the cycles run; the best one must reach 100%.
const CY_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn rn_config(model: ModelKind, env_agg: Aggregation, act_agg: Aggregation) -> RunConfig {
    RunConfig {
        task: Task::RootNeighbors,
        model,
        env_layers: 1,
        env_dim: 16,
        env_agg,
        act_layers: 2,
        act_dim: 16,
        act_agg,
        encoder_layers: 2,
        decoder_layers: 1,
        dropout: 0.0,
        lr: 1e-3,
        epochs: RN_EPOCHS,
        batch_size: 0,
        temp: TempKind::Learned,
        tau: 1.0,
        tau0: 0.1,
        seed: 0,
        eval_seeds: 10,
        eval_every: RN_EVAL_EVERY,
    }
}

fn cycles_config(seed: u64) -> RunConfig {
    RunConfig {
        task: Task::Cycles,
        model: ModelKind::Cognn,
        env_layers: 2,
        env_dim: 32,
        env_agg: Aggregation::Mean,
        act_layers: 6,
        act_dim: 32,
        act_agg: Aggregation::Mean,
        encoder_layers: 1,
        decoder_layers: 1,
        dropout: 0.0,
        lr: 3e-4,
        epochs: CY_EPOCHS,
        batch_size: 2,
        temp: TempKind::Fixed,
        tau: 1.0,
        tau0: 0.1,
        seed,
        eval_seeds: 10,
        eval_every: CY_EVAL_EVERY,
    }
}

// ---------------------------------------------------------------------------
// Shared trained artifacts
// ---------------------------------------------------------------------------

struct TrainedRn {
    /// Test MAE at the best-validation epoch (mean over evaluation streams).
    test_mae: f64,
    model: CoGnnModel,
    cfg: RunConfig,
}

struct RnArtifacts {
    data: Vec<Sample>,
    coop_sum_mean: TrainedRn,
    coop_sum_sum: TrainedRn,
    coop_mean_mean: TrainedRn,
    base_sum: TrainedRn,
    base_mean: TrainedRn,
}

/// Lazily built once; criteria 1 and 3 share the same trained models.
type RnCache = Option<std::result::Result<RnArtifacts, String>>;

fn train_rn(
    name: &'static str,
    data: &[Sample],
    model: ModelKind,
    env_agg: Aggregation,
    act_agg: Aggregation,
) -> Result<TrainedRn> {
    let cfg = rn_config(model, env_agg, act_agg);
    let t0 = Instant::now();
    let (trained, log) = train(&cfg, data)?;
    eprintln!(
        "  [setup] {name}: test MAE {:.4} (best epoch {}, {:.0}s)",
        log.test_at_best,
        log.best_epoch,
        t0.elapsed().as_secs_f64()
    );
    Ok(TrainedRn {
        test_mae: log.test_at_best,
        model: trained,
        cfg,
    })
}

fn rn_artifacts(cache: &mut RnCache) -> std::result::Result<&RnArtifacts, String> {
    if cache.is_none() {
        let build = || -> Result<RnArtifacts> {
            let data = generate_root_neighbors(0)?;
            Ok(RnArtifacts {
                coop_sum_mean: train_rn(
                    "cognn(sum,mean)",
                    &data,
                    ModelKind::Cognn,
                    Aggregation::Mean,
                    Aggregation::Sum,
                )?,
                coop_sum_sum: train_rn(
                    "cognn(sum,sum)",
                    &data,
                    ModelKind::Cognn,
                    Aggregation::Sum,
                    Aggregation::Sum,
                )?,
                coop_mean_mean: train_rn(
                    "cognn(mean,mean)",
                    &data,
                    ModelKind::Cognn,
                    Aggregation::Mean,
                    Aggregation::Mean,
                )?,
                base_sum: train_rn(
                    "baseline-sum",
                    &data,
                    ModelKind::BaselineSum,
                    Aggregation::Sum,
                    Aggregation::Sum,
                )?,
                base_mean: train_rn(
                    "baseline-mean",
                    &data,
                    ModelKind::BaselineMean,
                    Aggregation::Mean,
                    Aggregation::Mean,
                )?,
                data,
            })
        };
        *cache = Some(build().map_err(|e| e.to_string()));
    }
    cache.as_ref().expect("just filled").as_ref().map_err(|e| e.clone())
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

type Outcome = std::result::Result<String, String>;

/// 1. Trained model ordering on the root-neighbors task.
fn criterion_1(cache: &mut RnCache) -> Outcome {
    let art = rn_artifacts(cache)?;
    let sm = art.coop_sum_mean.test_mae;
    let ss = art.coop_sum_sum.test_mae;
    let mm = art.coop_mean_mean.test_mae;
    let bs = art.base_sum.test_mae;
    let bm = art.base_mean.test_mae;
    let detail = format!(
        "test MAE cognn(sum,mean) {sm:.4}, cognn(sum,sum) {ss:.4}, cognn(mean,mean) {mm:.4}, \
         baseline-sum {bs:.4}, baseline-mean {bm:.4}"
    );
    let mut problems = Vec::new();
    if !(sm <= 0.15) {
        problems.push(format!("cognn(sum,mean) {sm:.4} > 0.15"));
    }
    if !(ss <= 0.25) {
        problems.push(format!("cognn(sum,sum) {ss:.4} > 0.25"));
    }
    if !((mm - bm).abs() <= 0.06) {
        problems.push(format!(
            "cognn(mean,mean) {mm:.4} not within 0.06 of baseline-mean {bm:.4}"
        ));
    }
    if !(bs >= 0.25) {
        problems.push(format!("baseline-sum {bs:.4} < 0.25"));
    }
    if !(bm >= 0.25) {
        problems.push(format!("baseline-mean {bm:.4} < 0.25"));
    }
    if !(sm < ss && ss < bm) {
        problems.push(format!("ordering {sm:.4} < {ss:.4} < {bm:.4} violated"));
    }
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

/// 2. The zero-predictor baseline lands on the pinned value.
fn criterion_2() -> Outcome {
    let data = generate_root_neighbors(0).map_err(|e| e.to_string())?;
    let test = split_of(&data, Split::Test);
    let mut rows = Vec::new();
    for s in &test {
        rows.extend_from_slice(s.target.as_ref().ok_or("sample without target")?);
    }
    let dim = rows.len() / test.len();
    let targets =
        Tensor::from_vec(&[test.len(), dim], rows).map_err(|e| e.to_string())?;
    let zeros = Tensor::zeros(test.len(), dim);
    let mae = regression_mae(&zeros, &targets).map_err(|e| e.to_string())?;
    let detail = format!("zero-predictor test MAE {mae:.4} vs 0.474 ± 0.03");
    if (mae - 0.474).abs() <= 0.03 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 3. The action network of the single-layer models gates root arcs
///    correctly (keep exactly the degree-6 senders).
fn criterion_3(cache: &mut RnCache) -> Outcome {
    let art = rn_artifacts(cache)?;
    let test = split_of(&art.data, Split::Test);
    let sm = action_edge_accuracy(
        &art.coop_sum_mean.cfg,
        &art.coop_sum_mean.model,
        &test,
    )
    .map_err(|e| e.to_string())?;
    let mm = action_edge_accuracy(
        &art.coop_mean_mean.cfg,
        &art.coop_mean_mean.model,
        &test,
    )
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "edge accuracy cognn(sum,mean) {sm:.2}% (need ≥ 95), cognn(mean,mean) {mm:.2}% (need ≤ 70)"
    );
    if sm >= 95.0 && mm <= 70.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 4. Cycles expressivity: some seed separates the 1-WL-indistinguishable
///    pairs perfectly while untrained baselines cannot beat coin flipping.
fn criterion_4() -> Outcome {
    let data = generate_cycles();

    // The 1-WL oracle must consider every pair indistinguishable.
    let mut pairs = 0;
    for chunk in data.chunks(2) {
        if let [a, b] = chunk {
            if wl1_distinguishes(&a.graph, &b.graph) {
                return Err(format!(
                    "1-WL distinguishes the k = {:?} pair",
                    a.k
                ));
            }
            pairs += 1;
        }
    }
    if pairs != 7 {
        return Err(format!("expected 7 pairs, found {pairs}"));
    }

    // Untrained sum/mean baselines: logits must be bit-identical within
    // every pair, making the expected accuracy exactly 1/2.
    for kind in [ModelKind::BaselineSum, ModelKind::BaselineMean] {
        let mut cfg = cycles_config(0);
        cfg.model = kind;
        let model =
            CoGnnModel::build(cfg.model_spec(), &mut stream(0, "init")).map_err(|e| e.to_string())?;
        for chunk in data.chunks(2) {
            if let [a, b] = chunk {
                let pa = forward_preds(&model, &a.graph).map_err(|e| e.to_string())?;
                let pb = forward_preds(&model, &b.graph).map_err(|e| e.to_string())?;
                if pa != pb {
                    return Err(format!(
                        "untrained {} separates the k = {:?} pair: {:?} vs {:?}",
                        kind.name(),
                        a.k,
                        pa,
                        pb
                    ));
                }
            }
        }
    }

    // Best of the seed scan must reach 100% test accuracy.
    let mut best = (f64::NEG_INFINITY, 0u64, 0.0);
    for &seed in &CY_SEEDS {
        let cfg = cycles_config(seed);
        let t0 = Instant::now();
        let (model, log) = train(&cfg, &data).map_err(|e| e.to_string())?;
        let test = split_of(&data, Split::Test);
        let (acc, _se) = evaluate_accuracy(&cfg, &model, &test).map_err(|e| e.to_string())?;
        eprintln!(
            "  [setup] cycles seed {seed}: test accuracy {acc:.4} (best epoch {}, {:.0}s)",
            log.best_epoch,
            t0.elapsed().as_secs_f64()
        );
        if acc > best.0 {
            best = (acc, seed, log.best_val);
        }
        if acc >= 1.0 {
            break;
        }
    }
    let detail = format!(
        "best test accuracy {:.4} (seed {}), untrained sum/mean baselines pairwise identical \
         (expected accuracy exactly 0.5), all 7 pairs 1-WL-indistinguishable",
        best.0, best.1
    );
    if best.0 >= 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn forward_preds(model: &CoGnnModel, g: &Graph) -> Result<Vec<f64>> {
    let batch = Batch::single(g)?;
    let tape = Tape::new();
    let out = model.forward(
        &tape,
        &batch,
        ActionMode::Sample(&mut stream(0, "acceptance/baseline")),
        false,
        None,
    )?;
    Ok(out.preds.data().to_vec())
}

/// 5. Forced all-Standard equals the ungated baseline bit for bit; forced
///    all-Isolate makes every node independent of every other node.
fn criterion_5() -> Outcome {
    let mut rng = stream(2024, "acceptance/mechanism");
    use rand::Rng;
    let mut checked = 0;
    for case in 0..50 {
        let n = rng.gen_range(4..=12usize);
        let max_e = n * (n - 1) / 2;
        let e = rng.gen_range(n.min(max_e)..=max_e);
        let g = random_graph(&mut rng, n, e, 3).map_err(|e| e.to_string())?;
        let agg = if case % 2 == 0 {
            Aggregation::Sum
        } else {
            Aggregation::Mean
        };
        let spec = ModelSpec {
            family: Family::Cognn,
            in_dim: 3,
            out_dim: 2,
            env_dim: 5,
            env_layers: 2,
            env_agg: agg,
            act_dim: 4,
            act_layers: 1,
            act_agg: agg,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.0,
            temp: TempSpec::Fixed { tau: 1.0 },
            readout: Readout::Root,
        };
        let model = CoGnnModel::build(spec, &mut stream(1000 + case, "init"))
            .map_err(|e| e.to_string())?;
        let mut baseline = model.clone();
        baseline.spec.family = Family::Baseline;

        let batch = Batch::single(&g).map_err(|e| e.to_string())?;
        let all_s = vec![vec![Action::Standard; n]; 2];
        let (h_forced, _) = model.forward_fixed(&batch, &all_s).map_err(|e| e.to_string())?;
        let (h_base, _) = baseline
            .forward_fixed(&batch, &all_s)
            .map_err(|e| e.to_string())?;
        if h_forced.data() != h_base.data() {
            return Err(format!(
                "all-Standard states differ from the ungated baseline on case {case} (n = {n})"
            ));
        }

        // All-Isolate: rewriting any one node's features must leave every
        // other node's final state bit-identical.
        let all_i = vec![vec![Action::Isolate; n]; 2];
        let (h0, _) = model.forward_fixed(&batch, &all_i).map_err(|e| e.to_string())?;
        let d = g.feature_dim();
        for j in 0..n {
            let mut feats = g.features().data().to_vec();
            for v in feats[j * d..(j + 1) * d].iter_mut() {
                *v = -*v + 0.37;
            }
            let gj = Graph::new(
                n,
                g.edges(),
                Tensor::from_vec(&[n, d], feats).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let bj = Batch::single(&gj).map_err(|e| e.to_string())?;
            let (hj, _) = model.forward_fixed(&bj, &all_i).map_err(|e| e.to_string())?;
            let w = h0.cols();
            for i in 0..n {
                if i == j {
                    continue;
                }
                if h0.data()[i * w..(i + 1) * w] != hj.data()[i * w..(i + 1) * w] {
                    return Err(format!(
                        "all-Isolate: node {i} changed when node {j}'s features changed \
                         (case {case}, n = {n})"
                    ));
                }
            }
        }
        checked += 1;
    }
    Ok(format!(
        "{checked} random graphs: all-Standard ≡ ungated baseline bit-exactly; \
         all-Isolate nodes unaffected by any other node's features"
    ))
}

/// 6. A hand-built relay schedule transmits the source features across
///    paths of length 3, 6 and 10 exactly.
fn criterion_6() -> Outcome {
    use rand::Rng;
    let dim = 3;
    let mut worst: f64 = 0.0;
    for r in [3usize, 6, 10] {
        let edges: Vec<(u32, u32)> = (0..r as u32).map(|i| (i, i + 1)).collect();
        let mut rng = stream(r as u64, "acceptance/relay");
        let feats: Vec<f64> = (0..(r + 1) * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g = Graph::new(
            r + 1,
            &edges,
            Tensor::from_vec(&[r + 1, dim], feats.clone()).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let model = relay_model(dim, r);
        let batch = Batch::single(&g).map_err(|e| e.to_string())?;
        let schedule: Vec<Vec<Action>> = (0..r)
            .map(|t| {
                (0..=r)
                    .map(|v| {
                        if v == t {
                            Action::Broadcast
                        } else if v == t + 1 {
                            Action::Listen
                        } else {
                            Action::Isolate
                        }
                    })
                    .collect()
            })
            .collect();
        let (h, _) = model.forward_fixed(&batch, &schedule).map_err(|e| e.to_string())?;
        for c in 0..dim {
            let err = (h.data()[r * dim + c] - feats[c]).abs();
            worst = worst.max(err);
            if err > 1e-12 {
                return Err(format!(
                    "path length {r}, coordinate {c}: transmitted {} vs source {} (|err| {err:e})",
                    h.data()[r * dim + c],
                    feats[c]
                ));
            }
        }
    }
    Ok(format!(
        "paths of length 3/6/10 deliver the source features exactly (worst |err| {worst:.1e})"
    ))
}

/// Copy-weight model: identity encoder/decoder, every environment layer
/// forwards the summed neighbor message unchanged.
fn relay_model(dim: usize, layers: usize) -> CoGnnModel {
    CoGnnModel {
        spec: ModelSpec {
            family: Family::Cognn,
            in_dim: dim,
            out_dim: dim,
            env_dim: dim,
            env_layers: layers,
            env_agg: Aggregation::Sum,
            act_dim: 1,
            act_layers: 1,
            act_agg: Aggregation::Sum,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.0,
            temp: TempSpec::Fixed { tau: 1.0 },
            readout: Readout::Root,
        },
        encoder: Mlp::identity("encoder", dim),
        env: (0..layers)
            .map(|l| GnnLayer::copier(&format!("env.{l}"), dim, Aggregation::Sum))
            .collect(),
        act_net: Vec::new(),
        act_head: None,
        temp_omega: None,
        decoder: Mlp::identity("decoder", dim),
    }
}

/// 7. Analytic gradients of the full cooperative loss (soft relaxation)
///    match central finite differences.
fn criterion_7() -> Outcome {
    let spec = ModelSpec {
        family: Family::Cognn,
        in_dim: 3,
        out_dim: 2,
        env_dim: 4,
        env_layers: 2,
        env_agg: Aggregation::Mean,
        act_dim: 4,
        act_layers: 2,
        act_agg: Aggregation::Sum,
        encoder_layers: 1,
        decoder_layers: 1,
        dropout: 0.0,
        temp: TempSpec::Learned { tau0: 0.1 },
        readout: Readout::Root,
    };
    let mut model =
        CoGnnModel::build(spec, &mut stream(41, "init")).map_err(|e| e.to_string())?;

    use rand::Rng;
    let mut rng = stream(617, "acceptance/gradcheck");
    let f1: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g1 = Graph::new(
        5,
        &[(0, 1), (0, 2), (1, 3), (1, 4)],
        Tensor::from_vec(&[5, 3], f1).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let f2: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g2 = Graph::new(
        4,
        &[(0, 1), (1, 2), (2, 3), (0, 3)],
        Tensor::from_vec(&[4, 3], f2).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let batch = Graph::disjoint_union(&[&g1, &g2]).map_err(|e| e.to_string())?;
    let targets =
        Tensor::from_vec(&[2, 2], vec![0.8, -1.0, 1.2, -0.4]).map_err(|e| e.to_string())?;

    let loss_of = |model: &CoGnnModel| -> (Tensor, cognn::tensor::Bindings) {
        let tape = Tape::new();
        let mut noise = stream(7, "acceptance/gumbel");
        let out = model
            .forward(&tape, &batch, ActionMode::Soft(&mut noise), false, None)
            .expect("forward");
        let loss = out
            .preds
            .sub(&targets)
            .unwrap()
            .abs()
            .unwrap()
            .sum()
            .unwrap()
            .scale(0.25)
            .unwrap();
        (loss, out.binds)
    };

    let (loss, binds) = loss_of(&model);
    let grads = loss.backward().map_err(|e| e.to_string())?;
    let named = binds.named_grads(&grads);
    let mut analytic = Vec::new();
    let mut shapes = Vec::new();
    for p in model.params() {
        shapes.push((p.value.rows(), p.value.cols()));
        let g = named
            .get(&p.name)
            .ok_or_else(|| format!("no gradient reached parameter {}", p.name))?;
        analytic.extend_from_slice(g.data());
    }
    let theta0: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect();
    let mut eval = |flat: &[f64]| -> f64 {
        let mut off = 0;
        for (p, (r, c)) in model.params_mut().into_iter().zip(&shapes) {
            let m = r * c;
            p.value = Tensor::from_vec(&[*r, *c], flat[off..off + m].to_vec())
                .expect("parameter shape");
            off += m;
        }
        loss_of(&model).0.data()[0]
    };
    let numeric = numeric_grad(&mut eval, &theta0, FD_STEP);
    let n = analytic.len();
    let mut worst = 0.0f64;
    for (a, m) in analytic.iter().zip(&numeric) {
        let rel = (a - m).abs() / a.abs().max(m.abs()).max(1.0);
        worst = worst.max(rel);
    }
    assert_close_rel(&analytic, &numeric, FD_TOL, "full model");
    Ok(format!(
        "{n} parameter entries match central differences (worst rel err {worst:.2e}; \
         per-op checks in the gradcheck suite)"
    ))
}

/// 8. Sampling statistics of the straight-through Gumbel-softmax.
fn criterion_8() -> Outcome {
    // (a) Empirical action frequencies match the policy.
    let p: [f64; 4] = [0.5, 0.2, 0.2, 0.1];
    let rows = 1000;
    let reps = 100;
    let logp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let mut tiled = Vec::with_capacity(rows * 4);
    for _ in 0..rows {
        tiled.extend_from_slice(&logp);
    }
    let log_probs = Tensor::from_vec(&[rows, 4], tiled).map_err(|e| e.to_string())?;
    let inv_tau = Tensor::full(rows, 1, 1.0);
    let mut rng = stream(88, "acceptance/gumbel-stats");
    let mut counts = [0usize; 4];
    for _ in 0..reps {
        let (st, actions) =
            gumbel_straight_through(&log_probs, &inv_tau, &mut rng, true).map_err(|e| e.to_string())?;
        // (b) Hard forward rows are exactly one-hot and match the actions.
        let d = st.data();
        for (r, a) in actions.iter().enumerate() {
            counts[a.index()] += 1;
            for c in 0..4 {
                let want = if c == a.index() { 1.0 } else { 0.0 };
                if d[r * 4 + c] != want {
                    return Err(format!(
                        "straight-through row {r} is not the exact one-hot of its action"
                    ));
                }
            }
        }
    }
    let total = (rows * reps) as f64;
    let mut worst = 0.0f64;
    for (c, want) in counts.iter().zip(&p) {
        worst = worst.max((*c as f64 / total - want).abs());
    }
    if worst > 0.01 {
        return Err(format!(
            "empirical frequencies deviate by {worst:.4} > 0.01 over {total} draws"
        ));
    }

    // (c) Low-temperature saturation of the soft relaxation.
    use rand::Rng;
    let mut lrng = stream(89, "acceptance/gumbel-sat");
    let sat_rows = 2000;
    let logits: Vec<f64> = (0..sat_rows * 4).map(|_| lrng.gen_range(-2.0..2.0)).collect();
    let logits = Tensor::from_vec(&[sat_rows, 4], logits).map_err(|e| e.to_string())?;
    let log_probs = logits.log_softmax().map_err(|e| e.to_string())?;
    let inv_tau = Tensor::full(sat_rows, 1, 100.0); // tau = 0.01
    let (soft, _) = gumbel_straight_through(&log_probs, &inv_tau, &mut lrng, false)
        .map_err(|e| e.to_string())?;
    let d = soft.data();
    let mut saturated = 0;
    for r in 0..sat_rows {
        let m = d[r * 4..(r + 1) * 4].iter().cloned().fold(0.0, f64::max);
        if m > 0.999 {
            saturated += 1;
        }
    }
    let frac = saturated as f64 / sat_rows as f64;
    if frac < 0.8 {
        return Err(format!(
            "only {:.1}% of soft rows saturate past 0.999 at tau = 0.01",
            100.0 * frac
        ));
    }
    Ok(format!(
        "frequencies within {worst:.4} of the policy over {total} draws; every hard row exactly \
         one-hot; {:.1}% of soft rows saturate past 0.999 at tau = 0.01",
        100.0 * frac
    ))
}

/// 9. Per-layer cost scales linearly in the number of edges.
fn criterion_9() -> Outcome {
    let cfg = RunConfig {
        epochs: 1,
        ..RunConfig::default()
    };
    let sizes = [100usize, 1000, 10000, 100000];
    let (points, r2) = bench_scaling(&cfg, &sizes).map_err(|e| e.to_string())?;
    let detail = format!(
        "wall time vs edges over {:?}: R² {:.4} (need ≥ 0.95); {:.3} ms at {} edges",
        sizes,
        r2,
        1e3 * points.last().map(|p| p.seconds).unwrap_or(0.0),
        points.last().map(|p| p.edges).unwrap_or(0),
    );
    if r2 >= 0.95 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

fn main() {
    let args: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut rn_cache: RnCache = None;
    let mut failures = 0;
    for n in 1..=9usize {
        if !args.is_empty() && !args.contains(&n) {
            continue;
        }
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match n {
            1 => criterion_1(&mut rn_cache),
            2 => criterion_2(),
            3 => criterion_3(&mut rn_cache),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            _ => criterion_9(),
        }));
        match outcome {
            Ok(Ok(detail)) => println!("criterion {n}: PASS — {detail}"),
            Ok(Err(detail)) => {
                failures += 1;
                println!("criterion {n}: FAIL — {detail}");
            }
            Err(panic) => {
                failures += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                println!("criterion {n}: FAIL — {msg}");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
