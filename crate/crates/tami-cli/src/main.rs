//! `tami` — temporal-graph link prediction workbench.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tami_core::error::{Error, Result};
use tami_core::synth::SynthSpec;

use commands::{EvalFlags, VerifyParams};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "tami",
    version,
    about = "Temporal-graph link prediction: dataset analysis, training, evaluation"
)]
struct Cli {
    /// Worker threads for batch fan-out. 1 keeps runs byte-reproducible;
    /// larger counts are numerically identical (fixed-order reduction).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory (falls back to $TAMI_OUT_DIR, then ./tami-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic two-population interaction graph.
    Synth(SynthArgs),
    /// Interval and temporal-difference skewness of a dataset.
    Analyze(AnalyzeArgs),
    /// Monte Carlo check that the log rescale reduces Pareto skewness to 2.
    #[command(name = "verify-prop1")]
    VerifyProp1(VerifyArgs),
    /// Finite-difference verification of every trainable block.
    Gradcheck(GradcheckArgs),
    /// Train a model and write checkpoint, memory snapshot, and logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or an edge-memorization baseline).
    Eval(EvalArgs),
    /// Per-interval-bucket and per-group AP tables for a checkpoint.
    Buckets(EvalArgs),
    /// Train across the forgetting-rate grid and report the best.
    GammaSweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    nodes: usize,
    #[arg(long, default_value_t = 60)]
    frequent_pairs: usize,
    #[arg(long, default_value_t = 420)]
    infrequent_pairs: usize,
    /// Pareto shape of infrequent-pair intervals (must exceed 3).
    #[arg(long, default_value_t = 3.5)]
    alpha: f64,
    /// Pareto scale; frequent-pair periods are about a fifth of it.
    #[arg(long, default_value_t = 48.0)]
    xmin: f64,
    #[arg(long, default_value_t = 1800.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random identity features per node, written to nodes.csv (0 = none).
    #[arg(long, default_value_t = 8)]
    node_feat_dim: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Event CSV (canonical format unless schema flags say otherwise).
    #[arg(long)]
    data: PathBuf,
    /// Remap node labels to dense ids by first appearance.
    #[arg(long, default_value_t = false)]
    densify: bool,
    #[arg(long, default_value_t = 0)]
    src_col: usize,
    #[arg(long, default_value_t = 1)]
    dst_col: usize,
    #[arg(long, default_value_t = 2)]
    ts_col: usize,
    /// Column to skip as a label.
    #[arg(long)]
    label_col: Option<usize>,
    /// Treat the file as headerless.
    #[arg(long, default_value_t = false)]
    no_header: bool,
    /// Ignore feature columns entirely.
    #[arg(long, default_value_t = false)]
    no_features: bool,
    /// Recent interactions per endpoint for the temporal-difference pool.
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.70)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    val_frac: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.5)]
    xmin: f64,
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative tolerance on the raw skewness vs the closed form.
    #[arg(long, default_value_t = 0.05)]
    tol_raw: f64,
    /// Absolute tolerance on the log-transformed skewness vs 2.
    #[arg(long, default_value_t = 0.05)]
    tol_log: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// none | lte | lha | both — toggles the two components.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Overrides both the model and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Withhold a node fraction from training (unseen-node protocol);
    /// defaults to 0.1 when given without a value.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.1")]
    inductive: Option<f64>,
    /// Dataset path override.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory holding checkpoint.json / memory.lha / manifest.json.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// rnd | hist | ind
    #[arg(long)]
    neg: Option<String>,
    /// Negatives per positive.
    #[arg(long, short = 'k')]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start the test phase with an empty pair-history memory.
    #[arg(long, default_value_t = false)]
    cold_start: bool,
    /// Keep only positives with an endpoint unseen during training.
    #[arg(long, default_value_t = false)]
    inductive: bool,
    /// Evaluate a trainless baseline: infinity | tw-ts | tw-re | th.
    #[arg(long)]
    edgebank: Option<String>,
    /// Occurrence threshold for the `th` baseline variant.
    #[arg(long, default_value_t = 2)]
    edgebank_threshold: usize,
    /// Dataset path override.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated forgetting rates; defaults to the standard grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os("TAMI_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tami-out"))
}

fn apply_ablation(cfg: &mut RunConfig, ablate: &str) -> Result<()> {
    let (lte, lha) = match ablate {
        "none" => (false, false),
        "lte" => (true, false),
        "lha" => (false, true),
        "both" => (true, true),
        other => {
            return Err(Error::Config(format!(
                "unknown ablation {other:?} (expected none|lte|lha|both)"
            )))
        }
    };
    cfg.model.use_lte = lte;
    cfg.model.use_lha = lha;
    Ok(())
}

fn train_config_from(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(a) = &args.ablate {
        apply_ablation(&mut cfg, a)?;
    }
    if let Some(g) = args.gamma {
        cfg.lha.gamma = g;
    }
    if let Some(s) = args.seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = args.patience {
        cfg.train.patience = p;
    }
    if let Some(b) = args.batch {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(f) = args.inductive {
        cfg.train.inductive_fraction = Some(f);
    }
    if let Some(d) = &args.data {
        cfg.data.path = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn eval_setup(args: &EvalArgs) -> Result<(RunConfig, EvalFlags)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(n) = &args.neg {
        cfg.eval.strategy = n.clone();
    }
    if let Some(k) = args.k {
        cfg.eval.k = k;
    }
    if let Some(s) = args.seed {
        cfg.eval.seed = s;
    }
    if let Some(d) = &args.data {
        cfg.data.path = Some(d.clone());
    }
    cfg.validate()?;
    let strategy = cfg.neg_strategy()?;
    let flags = EvalFlags {
        strategy,
        cold_start: args.cold_start,
        inductive: args.inductive,
        appearance_m: cfg.eval.appearance_m,
        edgebank: args.edgebank.clone(),
        edgebank_threshold: args.edgebank_threshold,
    };
    Ok((cfg, flags))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = out_dir(&cli.out);
    match &cli.cmd {
        Cmd::Synth(a) => commands::cmd_synth(
            &SynthSpec {
                num_nodes: a.nodes,
                num_frequent_pairs: a.frequent_pairs,
                num_infrequent_pairs: a.infrequent_pairs,
                pareto_shape: a.alpha,
                pareto_scale: a.xmin,
                horizon: a.horizon,
                seed: a.seed,
                node_feature_dim: a.node_feat_dim,
            },
            &out,
        ),
        Cmd::Analyze(a) => {
            let schema = tami_core::io::CsvSchema {
                src_col: a.src_col,
                dst_col: a.dst_col,
                ts_col: a.ts_col,
                label_col: a.label_col,
                feature_cols: if a.no_features { Some(vec![]) } else { None },
                has_header: !a.no_header,
                delimiter: ',',
                densify: a.densify,
            };
            let g = tami_core::io::load_events(&a.data, &schema)?;
            let spec = tami_core::events::SplitSpec::new(a.train_frac, a.val_frac)?;
            commands::cmd_analyze(&g, spec, a.m, &out).map(|_| ())
        }
        Cmd::VerifyProp1(a) => commands::cmd_verify_skewness(
            &VerifyParams {
                shape: a.alpha,
                scale: a.xmin,
                n: a.n,
                seed: a.seed,
                raw_rel_tol: a.tol_raw,
                log_abs_tol: a.tol_log,
            },
            &out,
        ),
        Cmd::Gradcheck(a) => commands::cmd_gradcheck(a.seed, &out),
        Cmd::Train(a) => {
            let cfg = train_config_from(a)?;
            commands::cmd_train(&cfg, &out)
        }
        Cmd::Eval(a) => {
            let (cfg, flags) = eval_setup(a)?;
            commands::cmd_eval(&cfg, a.model_dir.as_deref(), &flags, &out)
        }
        Cmd::Buckets(a) => {
            let (cfg, flags) = eval_setup(a)?;
            commands::cmd_buckets(&cfg, a.model_dir.as_deref(), &flags, &out)
        }
        Cmd::GammaSweep(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(d) = &a.data {
                cfg.data.path = Some(d.clone());
            }
            if let Some(s) = a.seed {
                cfg.model.seed = s;
                cfg.train.seed = s;
            }
            if let Some(e) = a.epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(p) = a.patience {
                cfg.train.patience = p;
            }
            cfg.validate()?;
            let grid: Vec<f64> = match &a.grid {
                Some(s) => s
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad grid value {x:?}")))
                    })
                    .collect::<Result<_>>()?,
                None => commands::DEFAULT_GAMMA_GRID.to_vec(),
            };
            commands::cmd_gamma_sweep(&cfg, &grid, &out)
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) => 1,
        Error::Data(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Shape(_)
        | Error::OutOfOrder(_)
        | Error::NonFinite(_) => 2,
        Error::Verification(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
