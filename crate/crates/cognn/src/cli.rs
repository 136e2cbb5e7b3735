//! Command-line front end.
//!
//! Subcommands: `generate` (synthesize a dataset), `train` (fit a model from
//! a config file), `eval` (score a checkpoint on a split), `trace` (dump
//! per-node actions for one graph), and `bench` (forward-pass scaling).
//!
//! Config files are line-oriented `key = value` pairs; `#` starts a comment
//! line. Every key has a default (see [`RunConfig`]), unknown keys are
//! rejected by name, and malformed lines are reported with their line
//! number. Each training run writes the fully-resolved config next to its
//! outputs, so any run can be reproduced from that echo alone.
//!
//! Exit codes: 0 success, 1 bad arguments or config, 2 I/O or parse
//! failures on data files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::datagen::{generate_cycles, generate_root_neighbors, load_dataset, save_dataset, split_of, Split};
use crate::error::{Error, Result};
use crate::graph::Aggregation;
use crate::harness::{self, LrSchedule, ModelKind, RunConfig, Task, TempKind};
use crate::model::{load_checkpoint, save_checkpoint, ActionMode};
use crate::rng::stream;

#[derive(Parser)]
#[command(name = "cognn", version, about = "Cooperative graph neural networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    RootNeighbors,
    Cycles,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset as one JSONL file under --out.
    Generate {
        #[arg(long)]
        dataset: DatasetArg,
        /// Generation seed (the cycles dataset is fully determined and
        /// ignores it).
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.csv, model.ckpt, and config.resolved.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the dataset file for the configured task.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: SplitArg,
    },
    /// Write the per-node action trace of one graph to a CSV file.
    Trace {
        #[arg(long)]
        model: PathBuf,
        /// Directory holding the dataset file for the checkpoint's task.
        #[arg(long)]
        data: PathBuf,
        /// Index of the graph within the dataset file.
        #[arg(long)]
        graph_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time forward passes over growing random graphs.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated edge counts, e.g. 100,1000,10000.
        #[arg(long)]
        sizes: String,
    },
}

/// Parse CLI arguments (including the binary name) and run; returns the
/// process exit code.
pub fn dispatch(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate { dataset, seed, out } => {
            let (samples, name) = match dataset {
                DatasetArg::RootNeighbors => {
                    (generate_root_neighbors(seed)?, Task::RootNeighbors.file_name())
                }
                DatasetArg::Cycles => (generate_cycles(), Task::Cycles.file_name()),
            };
            std::fs::create_dir_all(&out)?;
            let path = out.join(name);
            save_dataset(&path, &samples)?;
            println!(
                "generate: seed={} graphs={} -> {}",
                seed,
                samples.len(),
                path.display()
            );
        }
        Cmd::Train { config, data, out } => {
            let cfg = parse_config(&config)?;
            let samples = load_dataset(&data.join(cfg.task.file_name()))?;
            std::fs::create_dir_all(&out)?;
            let t0 = Instant::now();
            let (model, log) = harness::train(&cfg, &samples)?;
            let echo = cfg.to_kv();
            std::fs::write(out.join("metrics.csv"), log.to_csv())?;
            std::fs::write(out.join("config.resolved"), &echo)?;
            save_checkpoint(&model, &echo, &out.join("model.ckpt"))?;
            println!(
                "train: task={} model={} epochs={} best_epoch={} best_val={:.6} \
                 test={:.6} stderr={:.6} wall={:.1}s -> {}",
                cfg.task.name(),
                cfg.model.name(),
                cfg.epochs,
                log.best_epoch,
                log.best_val,
                log.test_at_best,
                log.test_at_best_stderr,
                t0.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Cmd::Eval { model, data, split } => {
            let (m, meta) = load_checkpoint(&model)?;
            let cfg = parse_config_text(&meta, "checkpoint config")?;
            let samples = load_dataset(&data.join(cfg.task.file_name()))?;
            let split = Split::from(split);
            let refs = split_of(&samples, split);
            let (mean, stderr) = harness::evaluate(&cfg, &m, &refs)?;
            let metric = match cfg.task {
                Task::RootNeighbors => "mae",
                Task::Cycles => "accuracy",
            };
            println!(
                "eval: split={} graphs={} {}={:.6} stderr={:.6} eval_seeds={}",
                split.name(),
                refs.len(),
                metric,
                mean,
                stderr,
                cfg.eval_seeds
            );
        }
        Cmd::Trace {
            model,
            data,
            graph_index,
            out,
        } => {
            let (m, meta) = load_checkpoint(&model)?;
            let cfg = parse_config_text(&meta, "checkpoint config")?;
            let samples = load_dataset(&data.join(cfg.task.file_name()))?;
            let sample = samples.get(graph_index).ok_or_else(|| {
                Error::Invalid(format!(
                    "--graph-index {graph_index} out of range: dataset has {} graphs",
                    samples.len()
                ))
            })?;
            let mut rng = stream(cfg.seed, "trace");
            harness::record_trace(&m, &sample.graph, ActionMode::Sample(&mut rng), &out)?;
            println!(
                "trace: graph={} nodes={} layers={} -> {} and {}",
                graph_index,
                sample.graph.num_nodes(),
                m.env.len(),
                out.display(),
                out.with_extension("edges.csv").display()
            );
        }
        Cmd::Bench { config, sizes } => {
            let cfg = parse_config(&config)?;
            let sizes = parse_sizes(&sizes)?;
            let (points, r2) = harness::bench_scaling(&cfg, &sizes)?;
            for p in &points {
                println!(
                    "bench: edges={} nodes={} seconds={:.6}",
                    p.edges, p.nodes, p.seconds
                );
            }
            println!(
                "bench: linear fit of seconds against edges over {} sizes: r2={:.4}",
                points.len(),
                r2
            );
        }
    }
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<usize>()
                .map_err(|_| Error::Invalid(format!("--sizes: invalid entry '{t}'")))
        })
        .collect()
}

/// Read and parse a `key = value` config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text, &path.display().to_string())
}

/// Parse config text. Every key is optional and falls back to
/// [`RunConfig::default`]; unknown keys and malformed lines are errors that
/// name the key or line.
pub fn parse_config_text(text: &str, source: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| {
            Error::Config(format!("{source}: line {line}: expected 'key = value'"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let fail = |what: &str| -> Error {
            Error::Config(format!("{source}: line {line}: {key}: {what}"))
        };
        match key {
            "task" => {
                cfg.task = match value {
                    "root-neighbors" | "root_neighbors" => Task::RootNeighbors,
                    "cycles" => Task::Cycles,
                    _ => return Err(fail("expected root-neighbors or cycles")),
                }
            }
            "model" => {
                cfg.model = match value {
                    "cognn" => ModelKind::Cognn,
                    "baseline-sum" => ModelKind::BaselineSum,
                    "baseline-mean" => ModelKind::BaselineMean,
                    "baseline-gcn" => ModelKind::BaselineGcn,
                    _ => {
                        return Err(fail(
                            "expected cognn, baseline-sum, baseline-mean, or baseline-gcn",
                        ))
                    }
                }
            }
            "env_agg" | "act_agg" => {
                let agg = match value {
                    "sum" => Aggregation::Sum,
                    "mean" => Aggregation::Mean,
                    "gcn" => Aggregation::Gcn,
                    _ => return Err(fail("expected sum, mean, or gcn")),
                };
                if key == "env_agg" {
                    cfg.env_agg = agg;
                } else {
                    cfg.act_agg = agg;
                }
            }
            "temp" => {
                cfg.temp = match value {
                    "learned" => TempKind::Learned,
                    "fixed" => TempKind::Fixed,
                    _ => return Err(fail("expected learned or fixed")),
                }
            }
            "env_layers" => cfg.env_layers = value.parse().map_err(|_| fail("not an integer"))?,
            "env_dim" => cfg.env_dim = value.parse().map_err(|_| fail("not an integer"))?,
            "act_layers" => cfg.act_layers = value.parse().map_err(|_| fail("not an integer"))?,
            "act_dim" => cfg.act_dim = value.parse().map_err(|_| fail("not an integer"))?,
            "encoder_layers" => {
                cfg.encoder_layers = value.parse().map_err(|_| fail("not an integer"))?
            }
            "decoder_layers" => {
                cfg.decoder_layers = value.parse().map_err(|_| fail("not an integer"))?
            }
            "epochs" => cfg.epochs = value.parse().map_err(|_| fail("not an integer"))?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| fail("not an integer"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| fail("not an integer"))?,
            "eval_seeds" => cfg.eval_seeds = value.parse().map_err(|_| fail("not an integer"))?,
            "eval_every" => cfg.eval_every = value.parse().map_err(|_| fail("not an integer"))?,
            "train_replicas" => {
                cfg.train_replicas = value.parse().map_err(|_| fail("not an integer"))?
            }
            "lr_schedule" => {
                cfg.lr_schedule = match value {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    _ => return Err(fail("expected constant or cosine")),
                }
            }
            "grad_clip" => cfg.grad_clip = value.parse().map_err(|_| fail("not a number"))?,
            "dropout" => cfg.dropout = value.parse().map_err(|_| fail("not a number"))?,
            "lr" => cfg.lr = value.parse().map_err(|_| fail("not a number"))?,
            "tau" => cfg.tau = value.parse().map_err(|_| fail("not a number"))?,
            "tau0" => cfg.tau0 = value.parse().map_err(|_| fail("not a number"))?,
            other => return Err(Error::Config(format!(
                "{source}: line {line}: unknown key '{other}'"
            ))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_the_documented_defaults() {
        let cfg = parse_config_text("", "t").unwrap();
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.task, Task::RootNeighbors);
        assert_eq!(cfg.eval_seeds, 10);
        assert_eq!(cfg.batch_size, 0, "absent batch size means full batch");
        // The echo spells the applied default out.
        assert!(cfg.to_kv().contains("lr = 0.001"));
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "# a comment\n\n  task =  cycles \nmodel=baseline-sum\n";
        let cfg = parse_config_text(text, "t").unwrap();
        assert_eq!(cfg.task, Task::Cycles);
        assert_eq!(cfg.model, ModelKind::BaselineSum);
    }

    #[test]
    fn train_replicas_parse_echo_and_validate() {
        let cfg = parse_config_text("train_replicas = 8\n", "t").unwrap();
        assert_eq!(cfg.train_replicas, 8);
        assert!(cfg.to_kv().contains("train_replicas = 8"));
        let err = parse_config_text("train_replicas = 0\n", "t").unwrap_err();
        assert!(err.to_string().contains("train_replicas"), "{err}");
    }

    #[test]
    fn optimizer_knobs_parse_echo_and_validate() {
        let cfg = parse_config_text("lr_schedule = cosine\ngrad_clip = 1.5\n", "t").unwrap();
        assert_eq!(cfg.lr_schedule, LrSchedule::Cosine);
        assert_eq!(cfg.grad_clip, 1.5);
        let echo = cfg.to_kv();
        assert!(echo.contains("lr_schedule = cosine"));
        assert!(echo.contains("grad_clip = 1.5"));
        // Defaults: constant schedule, clipping off.
        let d = parse_config_text("", "t").unwrap();
        assert_eq!(d.lr_schedule, LrSchedule::Constant);
        assert_eq!(d.grad_clip, 0.0);
        let err = parse_config_text("lr_schedule = warmup\n", "t").unwrap_err();
        assert!(err.to_string().contains("cosine"), "{err}");
        let err = parse_config_text("grad_clip = -1\n", "t").unwrap_err();
        assert!(err.to_string().contains("grad_clip"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_config_text("lr = 0.1\nfrobnicate = 3\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown key 'frobnicate'"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn malformed_lines_are_reported_with_their_number() {
        let err = parse_config_text("lr = 0.1\n\ntask root-neighbors\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("expected 'key = value'"), "{msg}");
    }

    #[test]
    fn bad_values_name_key_and_line() {
        let err = parse_config_text("epochs = banana\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochs"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");

        let err = parse_config_text("model = resnet\n", "t").unwrap_err();
        assert!(err.to_string().contains("baseline-sum"), "lists choices");
    }

    #[test]
    fn semantic_validation_runs_after_parsing() {
        let err = parse_config_text("lr = -1\n", "t").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = parse_config_text("act_layers = 0\n", "t").unwrap_err();
        assert!(err.to_string().contains("act_layers"), "{err}");
    }

    #[test]
    fn sizes_lists_parse_or_name_the_flag() {
        assert_eq!(parse_sizes("100, 200,300").unwrap(), vec![100, 200, 300]);
        let err = parse_sizes("100,x").unwrap_err();
        assert!(err.to_string().contains("--sizes"), "{err}");
    }

    #[test]
    fn duplicate_keys_last_one_wins() {
        let cfg = parse_config_text("seed = 1\nseed = 9\n", "t").unwrap();
        assert_eq!(cfg.seed, 9);
    }
}
